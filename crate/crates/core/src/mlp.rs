//! Fully connected ReLU network with a softmax output and cross-entropy
//! loss.
//!
//! Parameters live in one flat `f64` vector. For each layer `k` (in order)
//! the block is the row-major weight matrix `W(k)` of shape
//! `fan_out x fan_in`, followed by the bias vector `b(k)` of length
//! `fan_out`. [`Gradient`] uses the same layout, so norms, clipping and
//! noise act on the flat view directly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Samples;
use crate::error::{Error, Result};
use crate::linalg::{affine_into, all_finite, axpy, sum_squares};
use crate::rng::RandomStream;

/// Floor applied to probabilities inside the loss.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    layer_sizes: Vec<usize>,
}

impl Architecture {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        if layer_sizes.len() < 3 {
            return Err(Error::domain(
                "need an input layer, at least one hidden layer and an output layer",
            ));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::domain("layer sizes must be positive"));
        }
        if *layer_sizes.last().unwrap() < 2 {
            return Err(Error::domain("output layer needs at least two classes"));
        }
        Ok(Architecture { layer_sizes })
    }

    /// 200 -> 128 -> 16 -> 2.
    pub fn paper() -> Self {
        Architecture {
            layer_sizes: vec![200, 128, 16, 2],
        }
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Number of weight layers.
    pub fn depth(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[1] * w[0] + w[1])
            .sum()
    }

    fn block_start(&self, layer: usize) -> usize {
        self.layer_sizes[..=layer]
            .windows(2)
            .map(|w| w[1] * w[0] + w[1])
            .sum()
    }

    pub fn weight_range(&self, layer: usize) -> Range<usize> {
        let start = self.block_start(layer);
        start..start + self.layer_sizes[layer + 1] * self.layer_sizes[layer]
    }

    pub fn bias_range(&self, layer: usize) -> Range<usize> {
        let end = self.weight_range(layer).end;
        end..end + self.layer_sizes[layer + 1]
    }
}

macro_rules! flat_layers {
    ($name:ident) => {
        impl $name {
            pub fn zeros(arch: &Architecture) -> Self {
                $name {
                    arch: arch.clone(),
                    values: vec![0.0; arch.param_count()],
                }
            }

            /// Rebuilds from a flat vector; the length must match the
            /// architecture.
            pub fn unflatten(arch: &Architecture, values: Vec<f64>) -> Result<Self> {
                if values.len() != arch.param_count() {
                    return Err(Error::domain(format!(
                        "flat vector has {} entries, architecture needs {}",
                        values.len(),
                        arch.param_count()
                    )));
                }
                Ok($name {
                    arch: arch.clone(),
                    values,
                })
            }

            pub fn flatten(&self) -> Vec<f64> {
                self.values.clone()
            }

            pub fn arch(&self) -> &Architecture {
                &self.arch
            }

            pub fn as_slice(&self) -> &[f64] {
                &self.values
            }

            pub fn as_mut_slice(&mut self) -> &mut [f64] {
                &mut self.values
            }

            pub fn weights(&self, layer: usize) -> &[f64] {
                &self.values[self.arch.weight_range(layer)]
            }

            pub fn biases(&self, layer: usize) -> &[f64] {
                &self.values[self.arch.bias_range(layer)]
            }

            pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
                let r = self.arch.weight_range(layer);
                &mut self.values[r]
            }

            pub fn biases_mut(&mut self, layer: usize) -> &mut [f64] {
                let r = self.arch.bias_range(layer);
                &mut self.values[r]
            }
        }
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    arch: Architecture,
    values: Vec<f64>,
}

flat_layers!(MlpParams);

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    arch: Architecture,
    values: Vec<f64>,
}

flat_layers!(Gradient);

/// He-style initialization: weights `N(0, 2 / fan_in)`, zero biases. Draws
/// are consumed layer by layer in row-major order.
pub fn init_params(arch: &Architecture, stream: &mut RandomStream) -> MlpParams {
    let mut params = MlpParams::zeros(arch);
    for layer in 0..arch.depth() {
        let std = (2.0 / arch.layer_sizes[layer] as f64).sqrt();
        for w in params.weights_mut(layer) {
            *w = std * stream.standard_normal();
        }
    }
    params
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `activations[0]` is the input; `activations[k]` is the ReLU output of
    /// hidden layer `k`.
    pub activations: Vec<Vec<f64>>,
    /// Pre-activations `z(k)` of every weight layer, logits last.
    pub pre_activations: Vec<Vec<f64>>,
    pub probs: Vec<f64>,
}

impl ForwardTrace {
    fn for_arch(arch: &Architecture) -> Self {
        let sizes = arch.layer_sizes();
        ForwardTrace {
            activations: sizes[..sizes.len() - 1]
                .iter()
                .map(|&s| vec![0.0; s])
                .collect(),
            pre_activations: sizes[1..].iter().map(|&s| vec![0.0; s]).collect(),
            probs: vec![0.0; arch.output_size()],
        }
    }
}

pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Max-shifted softmax.
pub fn softmax_into(z: &[f64], out: &mut [f64]) {
    let max = z.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(z) {
        *o = (v - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; z.len()];
    softmax_into(z, &mut out);
    out
}

fn check_input(params: &MlpParams, x: &[f64]) -> Result<()> {
    if x.len() != params.arch.input_size() {
        return Err(Error::domain(format!(
            "input has {} entries, network expects {}",
            x.len(),
            params.arch.input_size()
        )));
    }
    Ok(())
}

fn forward_into(params: &MlpParams, x: &[f64], trace: &mut ForwardTrace) -> Result<()> {
    check_input(params, x)?;
    if !all_finite(x) {
        return Err(Error::domain("input contains non-finite entries"));
    }
    let depth = params.arch.depth();
    trace.activations[0].copy_from_slice(x);
    for layer in 0..depth {
        let (w, b) = (params.weights(layer), params.biases(layer));
        let z = &mut trace.pre_activations[layer];
        affine_into(w, b, &trace.activations[layer], z);
        if !all_finite(z) {
            return Err(Error::Overflow { layer: layer + 1 });
        }
        if layer + 1 < depth {
            let z = &trace.pre_activations[layer];
            for (a, &zi) in trace.activations[layer + 1].iter_mut().zip(z) {
                *a = relu(zi);
            }
        }
    }
    softmax_into(&trace.pre_activations[depth - 1], &mut trace.probs);
    Ok(())
}

pub fn forward(params: &MlpParams, x: &[f64]) -> Result<ForwardTrace> {
    let mut trace = ForwardTrace::for_arch(&params.arch);
    forward_into(params, x, &mut trace)?;
    Ok(trace)
}

/// Cross-entropy `-sum_k t_k ln(max(p_k, 1e-12))`.
pub fn loss(probs: &[f64], target: &[f64]) -> f64 {
    -probs
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            if t == 0.0 {
                0.0
            } else {
                t * p.max(LOG_FLOOR).ln()
            }
        })
        .sum::<f64>()
}

/// Index of the largest entry, ties resolved toward the lower index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Reusable buffers for forward/backward passes over one network shape.
#[derive(Debug, Clone)]
pub struct Workspace {
    trace: ForwardTrace,
    deltas: Vec<Vec<f64>>,
}

impl Workspace {
    pub fn new(arch: &Architecture) -> Self {
        Workspace {
            trace: ForwardTrace::for_arch(arch),
            deltas: arch.layer_sizes()[1..]
                .iter()
                .map(|&s| vec![0.0; s])
                .collect(),
        }
    }

    pub fn trace(&self) -> &ForwardTrace {
        &self.trace
    }

    pub fn predict(&mut self, params: &MlpParams, x: &[f64]) -> Result<usize> {
        forward_into(params, x, &mut self.trace)?;
        Ok(argmax(&self.trace.probs))
    }

    /// Forward and backward pass. Leaves the activations and the
    /// per-layer output deltas `dL/dz(k)` in the workspace and returns the
    /// loss. Every weight gradient is the outer product of a delta with the
    /// layer input, so the full gradient is never formed here.
    pub fn backprop(&mut self, params: &MlpParams, x: &[f64], target: &[f64]) -> Result<f64> {
        if target.len() != params.arch.output_size() {
            return Err(Error::domain("target length does not match output layer"));
        }
        forward_into(params, x, &mut self.trace)?;
        let depth = params.arch.depth();
        let loss_value = loss(&self.trace.probs, target);

        // Softmax + cross-entropy fused output delta.
        for ((d, &p), &t) in self.deltas[depth - 1]
            .iter_mut()
            .zip(&self.trace.probs)
            .zip(target)
        {
            *d = p - t;
        }
        for layer in (1..depth).rev() {
            let fan_in = params.arch.layer_sizes[layer];
            let (lower, upper) = self.deltas.split_at_mut(layer);
            let prev = &mut lower[layer - 1];
            prev.fill(0.0);
            for (row, &d) in params
                .weights(layer)
                .chunks_exact(fan_in)
                .zip(upper[0].iter())
            {
                if d != 0.0 {
                    axpy(d, row, prev);
                }
            }
            // ReLU subgradient is 0 at z = 0.
            for (p, &z) in prev.iter_mut().zip(&self.trace.pre_activations[layer - 1]) {
                if z <= 0.0 {
                    *p = 0.0;
                }
            }
        }
        if !loss_value.is_finite() || !self.deltas.iter().all(|d| all_finite(d)) {
            return Err(non_finite_gradient());
        }
        Ok(loss_value)
    }

    /// l2 norm of the gradient from the last [`Workspace::backprop`], using
    /// `|d a^T|_F = |d| |a|` per layer.
    pub fn gradient_norm(&self) -> f64 {
        let mut total = 0.0;
        for (delta, input) in self.deltas.iter().zip(&self.trace.activations) {
            total += sum_squares(delta) * (sum_squares(input) + 1.0);
        }
        total.sqrt()
    }

    /// `out = scale * g` for the gradient `g` of the last backprop.
    pub fn write_gradient(&self, scale: f64, grad: &mut Gradient) {
        for (layer, (delta, input)) in self.deltas.iter().zip(&self.trace.activations).enumerate() {
            let fan_in = input.len();
            let gw = &mut grad.values[grad.arch.weight_range(layer)];
            for (row, &d) in gw.chunks_exact_mut(fan_in).zip(delta) {
                let d = d * scale;
                for (g, &a) in row.iter_mut().zip(input) {
                    *g = d * a;
                }
            }
            let br = grad.arch.bias_range(layer);
            for (g, &d) in grad.values[br].iter_mut().zip(delta) {
                *g = d * scale;
            }
        }
    }

    /// `acc += scale * g`, entry for entry the same values
    /// [`Workspace::write_gradient`] would produce.
    pub fn add_gradient(&self, scale: f64, acc: &mut Gradient) {
        for (layer, (delta, input)) in self.deltas.iter().zip(&self.trace.activations).enumerate() {
            let fan_in = input.len();
            let gw = &mut acc.values[acc.arch.weight_range(layer)];
            for (row, &d) in gw.chunks_exact_mut(fan_in).zip(delta) {
                let d = d * scale;
                if d != 0.0 {
                    for (g, &a) in row.iter_mut().zip(input) {
                        *g += d * a;
                    }
                }
            }
            let br = acc.arch.bias_range(layer);
            for (g, &d) in acc.values[br].iter_mut().zip(delta) {
                *g += d * scale;
            }
        }
    }

    /// Writes the gradient of the loss at `(x, target)` into `grad`
    /// (every entry is overwritten) and returns the loss.
    pub fn gradient_into(
        &mut self,
        params: &MlpParams,
        x: &[f64],
        target: &[f64],
        grad: &mut Gradient,
    ) -> Result<f64> {
        debug_assert_eq!(grad.arch, params.arch);
        let loss_value = self.backprop(params, x, target)?;
        self.write_gradient(1.0, grad);
        if !all_finite(&grad.values) {
            return Err(non_finite_gradient());
        }
        Ok(loss_value)
    }
}

fn non_finite_gradient() -> Error {
    Error::Explosion {
        step: 0,
        detail: "non-finite per-example gradient".into(),
    }
}

pub fn per_example_gradient(
    params: &MlpParams,
    x: &[f64],
    target: &[f64],
) -> Result<(f64, Gradient)> {
    let mut ws = Workspace::new(&params.arch);
    let mut grad = Gradient::zeros(&params.arch);
    let l = ws.gradient_into(params, x, target, &mut grad)?;
    Ok((l, grad))
}

/// Fraction of samples whose predicted class differs from the target's
/// argmax.
pub fn error_rate(params: &MlpParams, samples: &Samples) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::domain("error rate of an empty record set"));
    }
    let mut ws = Workspace::new(&params.arch);
    let mut wrong = 0usize;
    for i in 0..samples.len() {
        if ws.predict(params, samples.input(i))? != argmax(samples.target(i)) {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / samples.len() as f64)
}

/// Checkpoint layout, all little-endian: `u64` layer count `m`, then `m`
/// `u64` layer sizes, then the flat parameter vector as `f64`.
pub fn write_checkpoint(params: &MlpParams, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let sizes = params.arch.layer_sizes();
    out.write_all(&(sizes.len() as u64).to_le_bytes())?;
    for &s in sizes {
        out.write_all(&(s as u64).to_le_bytes())?;
    }
    for v in &params.values {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<MlpParams> {
    let mut input = BufReader::new(File::open(path)?);
    let mut word = [0u8; 8];
    let bad = |message: &str| Error::Parse {
        path: path.to_path_buf(),
        row: 0,
        message: message.to_string(),
    };
    input
        .read_exact(&mut word)
        .map_err(|_| bad("truncated header"))?;
    let m = u64::from_le_bytes(word) as usize;
    if !(3..=64).contains(&m) {
        return Err(bad("implausible layer count"));
    }
    let mut sizes = Vec::with_capacity(m);
    for _ in 0..m {
        input
            .read_exact(&mut word)
            .map_err(|_| bad("truncated layer sizes"))?;
        sizes.push(u64::from_le_bytes(word) as usize);
    }
    let arch = Architecture::new(sizes).map_err(|e| bad(&e.to_string()))?;
    let mut values = Vec::with_capacity(arch.param_count());
    for _ in 0..arch.param_count() {
        input
            .read_exact(&mut word)
            .map_err(|_| bad("truncated parameter vector"))?;
        values.push(f64::from_le_bytes(word));
    }
    if input.read(&mut word)? != 0 {
        return Err(bad("trailing bytes after parameter vector"));
    }
    MlpParams::unflatten(&arch, values)
}
