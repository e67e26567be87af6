//! Privacy accounting for DPSGD.
//!
//! Each lot-level step is a Gaussian mechanism with noise multiplier
//! `sigma`, which is `(eps, delta)`-DP for `eps = sqrt(2 ln(1.25/delta)) /
//! sigma` as long as `eps < 1`. Poisson subsampling with ratio `q` gives
//! `(ln(1 + q(e^eps - 1)), q delta)`. `T` such steps are combined with the
//! advanced composition bound
//!
//! ```text
//! eps_T   = sqrt(2 T ln(1/delta')) eps + T eps (e^eps - 1)
//! delta_T = T delta + delta'
//! ```
//!
//! or with plain summation, whichever gives the smaller epsilon.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsDelta {
    pub epsilon: f64,
    pub delta: f64,
}

impl EpsDelta {
    pub const ZERO: EpsDelta = EpsDelta {
        epsilon: 0.0,
        delta: 0.0,
    };

    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon >= 0.0) {
            return Err(Error::domain(format!("epsilon {epsilon} must be >= 0")));
        }
        if !(0.0..1.0).contains(&delta) {
            return Err(Error::domain(format!("delta {delta} outside [0, 1)")));
        }
        Ok(EpsDelta { epsilon, delta })
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::domain(format!("delta {delta} outside (0, 1)")));
    }
    Ok(())
}

fn calibration_constant(delta: f64) -> f64 {
    (2.0 * (1.25 / delta).ln()).sqrt()
}

/// Gaussian mechanism calibrated to an l2 sensitivity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianMechanism {
    pub sensitivity: f64,
    pub noise_scale: f64,
}

impl GaussianMechanism {
    pub fn new(sensitivity: f64, noise_scale: f64) -> Result<Self> {
        if !(sensitivity > 0.0) || !(noise_scale > 0.0) {
            return Err(Error::domain(
                "sensitivity and noise scale must be positive",
            ));
        }
        Ok(GaussianMechanism {
            sensitivity,
            noise_scale,
        })
    }

    /// Standard deviation of the added noise, `sigma * S_f`.
    pub fn noise_std(&self) -> f64 {
        self.noise_scale * self.sensitivity
    }

    pub fn guarantee(&self, delta: f64) -> Result<EpsDelta> {
        Ok(EpsDelta {
            epsilon: eps_for_sigma(self.noise_scale, delta)?,
            delta,
        })
    }
}

/// Noise multiplier giving `(eps, delta)` per step; valid for `0 < eps < 1`.
pub fn sigma_for_eps(eps: f64, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    if eps >= 1.0 {
        return Err(Error::OutOfRegime(format!(
            "epsilon {eps} >= 1; the Gaussian calibration only holds below 1"
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::domain(format!("epsilon {eps} must be positive")));
    }
    Ok(calibration_constant(delta) / eps)
}

/// Per-step epsilon of a Gaussian mechanism with noise multiplier `sigma`.
/// Results of 1 or more are reported as out of regime.
pub fn eps_for_sigma(sigma: f64, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    if !(sigma > 0.0) {
        return Err(Error::domain(format!(
            "noise scale {sigma} must be positive"
        )));
    }
    let eps = calibration_constant(delta) / sigma;
    if eps >= 1.0 {
        return Err(Error::OutOfRegime(format!(
            "sigma {sigma} at delta {delta} gives epsilon {eps:.4} >= 1"
        )));
    }
    Ok(eps)
}

/// Amplification by Poisson subsampling with ratio `q`.
pub fn amplify(step: EpsDelta, q: f64) -> Result<EpsDelta> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::domain(format!("sampling ratio {q} outside (0, 1]")));
    }
    if !(0.0..=1.0).contains(&step.epsilon) {
        return Err(Error::domain(format!(
            "amplification needs a per-step epsilon <= 1, got {}",
            step.epsilon
        )));
    }
    Ok(EpsDelta {
        epsilon: (q * step.epsilon.exp_m1()).ln_1p(),
        delta: q * step.delta,
    })
}

pub fn compose_sequential(steps: &[EpsDelta]) -> EpsDelta {
    steps.iter().fold(EpsDelta::ZERO, |acc, s| EpsDelta {
        epsilon: acc.epsilon + s.epsilon,
        delta: acc.delta + s.delta,
    })
}

pub fn compose_strong(
    eps_step: f64,
    delta_step: f64,
    steps: u64,
    delta_slack: f64,
) -> Result<EpsDelta> {
    if steps == 0 {
        return Err(Error::domain("strong composition needs at least one step"));
    }
    if !(delta_slack > 0.0 && delta_slack < 1.0) {
        return Err(Error::domain(format!(
            "delta slack {delta_slack} outside (0, 1)"
        )));
    }
    if !(eps_step >= 0.0) || !(delta_step >= 0.0) {
        return Err(Error::domain("per-step epsilon and delta must be >= 0"));
    }
    let t = steps as f64;
    Ok(EpsDelta {
        epsilon: (2.0 * t * (1.0 / delta_slack).ln()).sqrt() * eps_step
            + t * eps_step * eps_step.exp_m1(),
        delta: t * delta_step + delta_slack,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerEvent {
    pub sigma: f64,
    pub q: f64,
    pub steps: u64,
}

/// Releases made during training. `target_delta` calibrates each step and
/// is also the slack of the strong-composition bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyLedger {
    events: Vec<LedgerEvent>,
    target_delta: f64,
}

impl PrivacyLedger {
    pub fn new(target_delta: f64) -> Result<Self> {
        check_delta(target_delta)?;
        Ok(PrivacyLedger {
            events: Vec::new(),
            target_delta,
        })
    }

    pub fn record(&mut self, event: LedgerEvent) -> Result<()> {
        if !(event.q > 0.0 && event.q <= 1.0) {
            return Err(Error::domain(format!(
                "sampling ratio {} outside (0, 1]",
                event.q
            )));
        }
        if event.steps == 0 {
            return Err(Error::domain("ledger events need a positive step count"));
        }
        if !(event.sigma > 0.0) {
            return Err(Error::domain(format!(
                "noise scale {} must be positive",
                event.sigma
            )));
        }
        self.events.push(event);
        Ok(())
    }

    pub fn events(&self) -> &[LedgerEvent] {
        &self.events
    }

    pub fn target_delta(&self) -> f64 {
        self.target_delta
    }
}

/// Turns a ledger into a total `(eps, delta)`.
pub trait Accountant {
    fn name(&self) -> &'static str;
    fn total(&self, ledger: &PrivacyLedger) -> Result<EpsDelta>;
}

/// Calibration, amplification and advanced composition per event;
/// events are summed. Returns the smaller of this and the plain sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct StrongCompositionAccountant;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventCost {
    pub eps_step: f64,
    pub amplified: EpsDelta,
    pub strong: EpsDelta,
    pub sequential: EpsDelta,
}

pub fn event_cost(event: &LedgerEvent, delta: f64) -> Result<EventCost> {
    let eps_step = eps_for_sigma(event.sigma, delta)?;
    let amplified = amplify(
        EpsDelta {
            epsilon: eps_step,
            delta,
        },
        event.q,
    )?;
    let strong = compose_strong(amplified.epsilon, amplified.delta, event.steps, delta)?;
    let t = event.steps as f64;
    let sequential = EpsDelta {
        epsilon: t * amplified.epsilon,
        delta: t * amplified.delta,
    };
    Ok(EventCost {
        eps_step,
        amplified,
        strong,
        sequential,
    })
}

impl Accountant for StrongCompositionAccountant {
    fn name(&self) -> &'static str {
        "strong-composition"
    }

    fn total(&self, ledger: &PrivacyLedger) -> Result<EpsDelta> {
        let mut strong = Vec::with_capacity(ledger.events.len());
        let mut sequential = Vec::with_capacity(ledger.events.len());
        for (i, event) in ledger.events.iter().enumerate() {
            let cost = event_cost(event, ledger.target_delta).map_err(|e| match e {
                Error::OutOfRegime(msg) => Error::OutOfRegime(format!("event {i}: {msg}")),
                other => other,
            })?;
            strong.push(cost.strong);
            sequential.push(cost.sequential);
        }
        let strong = compose_sequential(&strong);
        let sequential = compose_sequential(&sequential);
        Ok(if strong.epsilon <= sequential.epsilon {
            strong
        } else {
            sequential
        })
    }
}

pub fn ledger_total(ledger: &PrivacyLedger) -> Result<EpsDelta> {
    StrongCompositionAccountant.total(ledger)
}

/// One row of the accountant table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetRow {
    pub sigma: f64,
    pub q: f64,
    pub steps: u64,
    pub eps_step: f64,
    pub eps_amplified: f64,
    pub eps_total: f64,
    pub delta_total: f64,
}

pub fn budget_row(sigma: f64, q: f64, steps: u64, delta: f64) -> Result<BudgetRow> {
    let event = LedgerEvent { sigma, q, steps };
    let cost = event_cost(&event, delta)?;
    let mut ledger = PrivacyLedger::new(delta)?;
    ledger.record(event)?;
    let total = ledger_total(&ledger)?;
    Ok(BudgetRow {
        sigma,
        q,
        steps,
        eps_step: cost.eps_step,
        eps_amplified: cost.amplified.epsilon,
        eps_total: total.epsilon,
        delta_total: total.delta,
    })
}
