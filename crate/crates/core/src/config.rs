//! Experiment configuration: a flat TOML table layered over a scale preset.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::SyntheticSpec;
use crate::error::{Error, Result};
use crate::mlp::Architecture;
use crate::optim::{ExplosionPolicy, Mode, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Desk,
    Paper,
}

impl std::str::FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "paper" => Ok(Scale::Paper),
            other => Err(Error::Config(format!(
                "unknown scale {other:?} (expected desk or paper)"
            ))),
        }
    }
}

/// Every knob of the overfit and convergence experiments. Counts are in
/// records, durations in epochs, probabilities are plain fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,

    pub records: usize,
    pub attributes: usize,
    pub noise_attributes: usize,
    pub p: f64,
    pub bias_offset: f64,
    pub folds: usize,
    pub hidden_layers: Vec<usize>,

    pub learning_rate: f64,
    pub epochs: usize,
    pub lot_size: usize,
    pub clip_norm: f64,
    pub sigmas: Vec<f64>,
    pub explosion_policy: ExplosionPolicy,
    pub alpha_step: f64,

    pub conv_train_records: usize,
    pub conv_test_records: usize,
    pub conv_lot_size: usize,
    pub conv_epochs: usize,
    pub conv_eval_every: usize,
    pub conv_sigmas: Vec<f64>,
    pub conv_tol: f64,

    pub delta: f64,
}

impl ExperimentConfig {
    /// 20,000 records in 10 folds; 1,000 + 1,000 for convergence.
    pub fn desk() -> Self {
        ExperimentConfig {
            seed: 2024,
            records: 20_000,
            attributes: 200,
            noise_attributes: 100,
            p: 0.5,
            bias_offset: 0.05,
            folds: 10,
            hidden_layers: vec![128, 16],
            learning_rate: 0.1,
            epochs: 150,
            lot_size: 96,
            clip_norm: 4.0,
            sigmas: vec![2.0, 4.0, 8.0, 40.0],
            explosion_policy: ExplosionPolicy::Abort,
            alpha_step: 0.001,
            conv_train_records: 1000,
            conv_test_records: 1000,
            conv_lot_size: 960,
            conv_epochs: 1000,
            conv_eval_every: 10,
            conv_sigmas: vec![1.0, 4.0, 8.5, 9.5],
            conv_tol: 0.01,
            delta: 1e-5,
        }
    }

    /// 1,000,000 records in 10 folds, lot size 960.
    pub fn paper() -> Self {
        ExperimentConfig {
            records: 1_000_000,
            lot_size: 960,
            ..Self::desk()
        }
    }

    pub fn preset(scale: Scale) -> Self {
        match scale {
            Scale::Desk => Self::desk(),
            Scale::Paper => Self::paper(),
        }
    }

    pub fn from_toml(text: &str, base: &ExperimentConfig) -> Result<Self> {
        let overrides: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        let mut table = match toml::Value::try_from(base) {
            Ok(toml::Value::Table(t)) => t,
            _ => return Err(Error::Config("preset does not serialize to a table".into())),
        };
        for (key, value) in overrides {
            if !table.contains_key(&key) {
                return Err(Error::Config(format!("unknown key {key:?}")));
            }
            table.insert(key, value);
        }
        let config: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e| Error::Config(format!("{e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, base: &ExperimentConfig) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text, base).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            n: self.records,
            attr_count: self.attributes,
            noise_attr_count: self.noise_attributes,
            p: self.p,
            b: self.bias_offset,
        }
    }

    pub fn architecture(&self) -> Result<Architecture> {
        let mut sizes = vec![self.attributes];
        sizes.extend(&self.hidden_layers);
        sizes.push(2);
        Architecture::new(sizes).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn fold_size(&self) -> usize {
        self.records / self.folds
    }

    pub fn sgd_arm(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            lot_size: self.lot_size,
            noise_scale: 0.0,
            clip_norm: f64::INFINITY,
            mode: Mode::Sgd,
            explosion_policy: self.explosion_policy,
            eval_every: self.epochs.max(1),
        }
    }

    pub fn dpsgd_arm(&self, sigma: f64) -> TrainConfig {
        TrainConfig {
            noise_scale: sigma,
            clip_norm: self.clip_norm,
            mode: Mode::Dpsgd,
            ..self.sgd_arm()
        }
    }

    pub fn conv_sgd_arm(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.conv_epochs,
            lot_size: self.conv_lot_size,
            eval_every: self.conv_eval_every,
            ..self.sgd_arm()
        }
    }

    pub fn conv_dpsgd_arm(&self, sigma: f64) -> TrainConfig {
        TrainConfig {
            noise_scale: sigma,
            clip_norm: self.clip_norm,
            mode: Mode::Dpsgd,
            ..self.conv_sgd_arm()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        self.synthetic_spec()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.architecture()?;
        if self.records == 0 {
            return fail("records must be positive".into());
        }
        if self.folds == 0
            || !self.records.is_multiple_of(self.folds)
            || !(self.records / self.folds).is_multiple_of(2)
        {
            return fail(format!(
                "records ({}) must split into {} folds of even size",
                self.records, self.folds
            ));
        }
        if !(self.records / 2).is_multiple_of(self.folds) {
            return fail(format!(
                "each label class ({}) must divide into {} folds",
                self.records / 2,
                self.folds
            ));
        }
        if self.lot_size == 0 || self.lot_size > self.fold_size() {
            return fail(format!(
                "lot_size {} must be in 1..={}",
                self.lot_size,
                self.fold_size()
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            ));
        }
        if !(self.clip_norm > 0.0 && self.clip_norm.is_finite()) {
            return fail(format!(
                "clip_norm {} must be positive and finite",
                self.clip_norm
            ));
        }
        for (name, list) in [("sigmas", &self.sigmas), ("conv_sigmas", &self.conv_sigmas)] {
            if list.is_empty() {
                return fail(format!("{name} must not be empty"));
            }
            if let Some(s) = list.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
                return fail(format!("{name} entry {s} must be finite and >= 0"));
            }
        }
        if !(self.alpha_step > 0.0 && self.alpha_step <= 0.1) {
            return fail(format!("alpha_step {} outside (0, 0.1]", self.alpha_step));
        }
        if self.conv_train_records == 0 || self.conv_test_records == 0 {
            return fail("convergence splits must be non-empty".into());
        }
        if !self.conv_train_records.is_multiple_of(2) || !self.conv_test_records.is_multiple_of(2) {
            return fail("convergence splits must have even sizes".into());
        }
        if self.conv_lot_size == 0 || self.conv_lot_size > self.conv_train_records {
            return fail(format!(
                "conv_lot_size {} must be in 1..={}",
                self.conv_lot_size, self.conv_train_records
            ));
        }
        if self.conv_eval_every == 0 {
            return fail("conv_eval_every must be positive".into());
        }
        if !(self.conv_tol > 0.0) {
            return fail(format!("conv_tol {} must be positive", self.conv_tol));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return fail(format!("delta {} outside (0, 1)", self.delta));
        }
        Ok(())
    }
}

/// Noise multiplier at lot size `lot_size` with the same per-coordinate
/// noise on the averaged gradient as `sigma` at `reference_lot`.
pub fn equivalent_sigma(sigma: f64, reference_lot: usize, lot_size: usize) -> f64 {
    sigma * lot_size as f64 / reference_lot as f64
}
