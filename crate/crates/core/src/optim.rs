//! Training loops: plain minibatch SGD and differentially private SGD.
//!
//! A DPSGD step samples a lot by including every example independently
//! with probability `q = L / N`. Each per-example gradient is clipped to
//! l2 norm `C`, and the clipped gradients are summed. One `N(0, s^2 I)`
//! vector with `s = sigma * C` is added to the sum, which is then divided
//! by the nominal lot size `L`. The step moves against that average.
//!
//! Randomness is forked per step: lot membership, noise and SGD shuffling
//! each come from their own stream, so changing `sigma` only changes the
//! noise draws.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Samples;
use crate::error::{Error, Result};
use crate::linalg::{all_finite, l2_norm};
use crate::mlp::{error_rate, init_params, Architecture, Gradient, MlpParams, Workspace};
use crate::rng::RandomStream;

/// Fork labels under a training stream.
pub mod labels {
    pub const INIT: u32 = 0;
    pub const STEPS: u32 = 1;
    pub const SHUFFLE: u32 = 2;
    /// Under a per-step stream.
    pub const LOT: u32 = 0;
    pub const NOISE: u32 = 1;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Sgd,
    Dpsgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplosionPolicy {
    Abort,
    SkipStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub lot_size: usize,
    pub noise_scale: f64,
    pub clip_norm: f64,
    pub mode: Mode,
    pub explosion_policy: ExplosionPolicy,
    pub eval_every: usize,
}

impl TrainConfig {
    /// eta = 0.1, C = 4, sigma = 2, L = 960, 150 epochs.
    pub fn paper_dpsgd() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            epochs: 150,
            lot_size: 960,
            noise_scale: 2.0,
            clip_norm: 4.0,
            mode: Mode::Dpsgd,
            explosion_policy: ExplosionPolicy::Abort,
            eval_every: 150,
        }
    }

    pub fn paper_sgd() -> Self {
        TrainConfig {
            mode: Mode::Sgd,
            ..Self::paper_dpsgd()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::domain(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.lot_size == 0 {
            return Err(Error::domain("lot size must be positive"));
        }
        if self.eval_every == 0 {
            return Err(Error::domain("eval_every must be positive"));
        }
        if self.mode == Mode::Dpsgd {
            if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
                return Err(Error::domain(format!(
                    "noise scale {} must be >= 0",
                    self.noise_scale
                )));
            }
            if !(self.clip_norm > 0.0) {
                return Err(Error::domain(format!(
                    "clip norm {} must be positive",
                    self.clip_norm
                )));
            }
            if self.noise_scale > 0.0 && !self.clip_norm.is_finite() {
                return Err(Error::domain("noise needs a finite clip norm"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub lot_size: usize,
    pub preclip_min_norm: f64,
    pub preclip_mean_norm: f64,
    pub preclip_max_norm: f64,
    /// Largest per-example norm after clipping (equal to the pre-clip max
    /// when nothing is clipped).
    pub postclip_max_norm: f64,
    pub clipped_frac: f64,
    pub exploded: bool,
}

impl StepRecord {
    fn exploded(step: u64, lot_size: usize) -> Self {
        StepRecord {
            step,
            lot_size,
            preclip_min_norm: f64::NAN,
            preclip_mean_norm: f64::NAN,
            preclip_max_norm: f64::NAN,
            postclip_max_norm: f64::NAN,
            clipped_frac: 0.0,
            exploded: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub epoch: usize,
    pub train_error: f64,
    pub test_error: f64,
    /// Parameter updates performed so far.
    pub lots: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    snapshots: Vec<Snapshot>,
}

impl TrainHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, snapshot: Snapshot) -> Result<()> {
        if let Some(last) = self.snapshots.last() {
            if snapshot.epoch <= last.epoch {
                return Err(Error::domain("history epochs must increase strictly"));
            }
        }
        for e in [snapshot.train_error, snapshot.test_error] {
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::domain(format!("error rate {e} outside [0, 1]")));
            }
        }
        self.snapshots.push(snapshot);
        Ok(())
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn epochs(&self) -> Vec<usize> {
        self.snapshots.iter().map(|s| s.epoch).collect()
    }

    pub fn train_errors(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.train_error).collect()
    }

    pub fn test_errors(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.test_error).collect()
    }
}

fn explosion(step: u64, detail: impl Into<String>) -> Error {
    Error::Explosion {
        step,
        detail: detail.into(),
    }
}

/// Scales `values` by `1 / max(1, |g| / C)` in place. Returns the pre-clip
/// norm and whether scaling happened. Inputs within the bound are left
/// bit-identical.
pub fn clip_in_place(values: &mut [f64], clip_norm: f64) -> Result<(f64, bool)> {
    if !(clip_norm > 0.0) {
        return Err(Error::domain(format!(
            "clip norm {clip_norm} must be positive"
        )));
    }
    let norm = l2_norm(values);
    if !norm.is_finite() {
        return Err(explosion(0, "non-finite gradient norm"));
    }
    let factor = (norm / clip_norm).max(1.0);
    if factor > 1.0 {
        for v in values.iter_mut() {
            *v /= factor;
        }
        Ok((norm, true))
    } else {
        Ok((norm, false))
    }
}

pub fn clip(grad: &Gradient, clip_norm: f64) -> Result<Gradient> {
    let mut out = grad.clone();
    clip_in_place(out.as_mut_slice(), clip_norm)?;
    Ok(out)
}

/// Poisson lot: each of `0..n` is kept independently with probability `q`.
/// Consumes exactly `n` draws.
pub fn sample_lot(n: usize, q: f64, stream: &mut RandomStream) -> Result<Vec<usize>> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::domain(format!("sampling ratio {q} outside (0, 1]")));
    }
    let mut lot = Vec::with_capacity((n as f64 * q * 1.2) as usize + 8);
    for i in 0..n {
        if stream.bernoulli(q)? {
            lot.push(i);
        }
    }
    Ok(lot)
}

/// How the per-example gradients of one update are treated.
struct Aggregation {
    clip_norm: Option<f64>,
    noise_std: f64,
    divisor: f64,
}

/// Scratch buffers for repeated steps on one architecture.
#[derive(Debug, Clone)]
pub struct Stepper {
    ws: Workspace,
    example: Gradient,
    update: Gradient,
    verify: bool,
}

impl Stepper {
    pub fn new(arch: &Architecture) -> Self {
        Stepper {
            ws: Workspace::new(arch),
            example: Gradient::zeros(arch),
            update: Gradient::zeros(arch),
            verify: false,
        }
    }

    /// Materializes every scaled per-example gradient and measures its norm
    /// directly, so [`StepRecord::postclip_max_norm`] is an exact audit of
    /// the clip bound rather than the factored estimate.
    pub fn with_verification(mut self) -> Self {
        self.verify = true;
        self
    }

    /// One DPSGD update. `step_stream` is forked into the lot-sampling and
    /// noise streams.
    pub fn dpsgd_step(
        &mut self,
        params: &mut MlpParams,
        data: &Samples,
        config: &TrainConfig,
        step: u64,
        step_stream: &RandomStream,
    ) -> Result<StepRecord> {
        if config.mode != Mode::Dpsgd {
            return Err(Error::domain("dpsgd_step needs mode = dpsgd"));
        }
        let n = data.len();
        if n == 0 {
            return Err(Error::domain("empty training set"));
        }
        if config.lot_size > n {
            return Err(Error::domain(format!(
                "lot size {} exceeds {n} examples",
                config.lot_size
            )));
        }
        let q = config.lot_size as f64 / n as f64;
        let lot = sample_lot(n, q, &mut step_stream.fork(labels::LOT))?;
        let mut noise = step_stream.fork(labels::NOISE);
        self.dpsgd_step_on_lot(params, data, &lot, config, step, &mut noise)
    }

    /// DPSGD update over an explicit lot.
    pub fn dpsgd_step_on_lot(
        &mut self,
        params: &mut MlpParams,
        data: &Samples,
        lot: &[usize],
        config: &TrainConfig,
        step: u64,
        noise: &mut RandomStream,
    ) -> Result<StepRecord> {
        config.validate()?;
        let agg = Aggregation {
            clip_norm: Some(config.clip_norm),
            noise_std: config.noise_scale * config.clip_norm,
            divisor: config.lot_size as f64,
        };
        self.apply(params, data, lot, config, step, &agg, Some(noise))
    }

    /// Plain SGD on `batch`: the mean gradient, no clipping, no noise.
    pub fn sgd_step(
        &mut self,
        params: &mut MlpParams,
        data: &Samples,
        batch: &[usize],
        config: &TrainConfig,
        step: u64,
    ) -> Result<StepRecord> {
        if batch.is_empty() {
            return Err(Error::domain("empty minibatch"));
        }
        config.validate()?;
        let agg = Aggregation {
            clip_norm: None,
            noise_std: 0.0,
            divisor: batch.len() as f64,
        };
        self.apply(params, data, batch, config, step, &agg, None)
    }

    #[allow(clippy::too_many_arguments)]
    fn apply(
        &mut self,
        params: &mut MlpParams,
        data: &Samples,
        indices: &[usize],
        config: &TrainConfig,
        step: u64,
        agg: &Aggregation,
        noise: Option<&mut RandomStream>,
    ) -> Result<StepRecord> {
        match self.accumulate(
            params,
            data,
            indices,
            step,
            agg,
            noise,
            config.learning_rate,
        ) {
            Ok(record) => {
                for (p, u) in params.as_mut_slice().iter_mut().zip(self.update.as_slice()) {
                    *p -= u;
                }
                Ok(record)
            }
            Err(e @ (Error::Explosion { .. } | Error::Overflow { .. })) => {
                match config.explosion_policy {
                    ExplosionPolicy::Abort => Err(match e {
                        Error::Explosion { detail, .. } => explosion(step, detail),
                        other => explosion(step, other.to_string()),
                    }),
                    ExplosionPolicy::SkipStep => Ok(StepRecord::exploded(step, indices.len())),
                }
            }
            Err(e) => Err(e),
        }
    }

    /// Fills `self.update` with `learning_rate * (sum + noise) / divisor`.
    #[allow(clippy::too_many_arguments)]
    fn accumulate(
        &mut self,
        params: &MlpParams,
        data: &Samples,
        indices: &[usize],
        step: u64,
        agg: &Aggregation,
        noise: Option<&mut RandomStream>,
        learning_rate: f64,
    ) -> Result<StepRecord> {
        self.update.as_mut_slice().fill(0.0);
        let (mut min, mut total, mut max, mut post_max) = (f64::INFINITY, 0.0, 0.0f64, 0.0f64);
        let mut clipped = 0usize;
        for &i in indices {
            self.ws.backprop(params, data.input(i), data.target(i))?;
            let norm = self.ws.gradient_norm();
            if !norm.is_finite() {
                return Err(explosion(step, "non-finite per-example gradient norm"));
            }
            let factor = match agg.clip_norm {
                Some(c) => (norm / c).max(1.0),
                None => 1.0,
            };
            let scale = 1.0 / factor;
            if factor > 1.0 {
                clipped += 1;
            }
            let post = if self.verify {
                self.ws.write_gradient(scale, &mut self.example);
                let post = l2_norm(self.example.as_slice());
                if let Some(c) = agg.clip_norm {
                    debug_assert!(post <= c * (1.0 + 1e-12), "clipped norm {post} exceeds {c}");
                }
                post
            } else {
                norm * scale
            };
            min = min.min(norm);
            max = max.max(norm);
            post_max = post_max.max(post);
            total += norm;
            self.ws.add_gradient(scale, &mut self.update);
        }
        let sum = self.update.as_mut_slice();
        if let Some(stream) = noise {
            if agg.noise_std > 0.0 {
                for s in sum.iter_mut() {
                    *s += agg.noise_std * stream.standard_normal();
                }
            }
        }
        for s in sum.iter_mut() {
            *s = learning_rate * (*s / agg.divisor);
        }
        if !all_finite(sum) {
            return Err(explosion(step, "non-finite parameter update"));
        }
        let k = indices.len();
        Ok(StepRecord {
            step,
            lot_size: k,
            preclip_min_norm: if k == 0 { 0.0 } else { min },
            preclip_mean_norm: if k == 0 { 0.0 } else { total / k as f64 },
            preclip_max_norm: max,
            postclip_max_norm: post_max,
            clipped_frac: if k == 0 {
                0.0
            } else {
                clipped as f64 / k as f64
            },
            exploded: false,
        })
    }
}

/// Functional form of [`Stepper::dpsgd_step`].
pub fn dpsgd_step(
    params: &MlpParams,
    data: &Samples,
    config: &TrainConfig,
    step: u64,
    step_stream: &RandomStream,
) -> Result<(MlpParams, StepRecord)> {
    let mut next = params.clone();
    let record =
        Stepper::new(params.arch()).dpsgd_step(&mut next, data, config, step, step_stream)?;
    Ok((next, record))
}

/// Functional form of [`Stepper::sgd_step`].
pub fn sgd_step(
    params: &MlpParams,
    data: &Samples,
    batch: &[usize],
    config: &TrainConfig,
) -> Result<MlpParams> {
    if config.mode != Mode::Sgd {
        return Err(Error::domain("sgd_step needs mode = sgd"));
    }
    let mut next = params.clone();
    Stepper::new(params.arch()).sgd_step(&mut next, data, batch, config, 0)?;
    Ok(next)
}

/// The parameters [`train`] starts from for a given stream.
pub fn initial_params(arch: &Architecture, stream: &RandomStream) -> MlpParams {
    init_params(arch, &mut stream.fork(labels::INIT))
}

/// Updates per epoch: `ceil(N / L)` lots for DPSGD, one shuffled pass of
/// `ceil(N / L)` minibatches for SGD.
pub fn steps_per_epoch(n: usize, lot_size: usize) -> usize {
    n.div_ceil(lot_size)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: MlpParams,
    pub history: TrainHistory,
    pub steps: Vec<StepRecord>,
}

pub fn train(
    train_set: &Samples,
    test_set: &Samples,
    config: &TrainConfig,
    arch: &Architecture,
    stream: &RandomStream,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() || test_set.is_empty() {
        return Err(Error::domain(
            "training and evaluation sets must be non-empty",
        ));
    }
    if train_set.input_dim() != arch.input_size() || train_set.output_dim() != arch.output_size() {
        return Err(Error::domain(
            "sample dimensions do not match the architecture",
        ));
    }
    let n = train_set.len();
    let lot_size = config.lot_size.min(n);
    if config.mode == Mode::Dpsgd && config.lot_size > n {
        return Err(Error::domain(format!(
            "lot size {} exceeds {n} training examples",
            config.lot_size
        )));
    }
    let mut params = initial_params(arch, stream);
    let mut history = TrainHistory::new();
    let mut steps = Vec::with_capacity(config.epochs * steps_per_epoch(n, lot_size));
    let mut stepper = Stepper::new(arch);
    let step_root = stream.fork(labels::STEPS);
    let shuffle_root = stream.fork(labels::SHUFFLE);
    let mut t: u64 = 0;
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 1..=config.epochs {
        match config.mode {
            Mode::Dpsgd => {
                for _ in 0..steps_per_epoch(n, lot_size) {
                    let label = u32::try_from(t).map_err(|_| Error::domain("too many steps"))?;
                    let record = stepper.dpsgd_step(
                        &mut params,
                        train_set,
                        config,
                        t,
                        &step_root.fork(label),
                    )?;
                    steps.push(record);
                    t += 1;
                }
            }
            Mode::Sgd => {
                order.iter_mut().enumerate().for_each(|(i, v)| *v = i);
                shuffle_root.fork(epoch as u32).shuffle(&mut order);
                for batch in order.chunks(lot_size) {
                    let record = stepper.sgd_step(&mut params, train_set, batch, config, t)?;
                    steps.push(record);
                    t += 1;
                }
            }
        }
        if epoch % config.eval_every == 0 || epoch == config.epochs {
            history.push(Snapshot {
                epoch,
                train_error: error_rate(&params, train_set)?,
                test_error: error_rate(&params, test_set)?,
                lots: t,
            })?;
        }
    }
    Ok(TrainOutcome {
        params,
        history,
        steps,
    })
}

pub const STEP_LOG_HEADER: &str = "step,lot_size,preclip_mean_norm,clipped_frac,exploded";

pub fn write_step_log(records: &[StepRecord], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{STEP_LOG_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{:.6},{:.6},{}",
            r.step, r.lot_size, r.preclip_mean_norm, r.clipped_frac, r.exploded as u8
        )?;
    }
    out.flush()?;
    Ok(())
}
