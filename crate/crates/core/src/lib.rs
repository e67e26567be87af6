//! Differentially private SGD on a small ReLU network, with privacy
//! accounting and generalization-gap analysis over a synthetic
//! biased-Bernoulli classification task.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod mlp;
pub mod optim;
pub mod privacy;
pub mod rng;
pub mod svg;

pub use error::{Error, Result};
