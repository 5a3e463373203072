//! Batch-size controller.
//!
//! Trial iterations at a handful of candidate batch sizes give per-iteration
//! delays `d(bs)`, converted to epoch time `T(bs) = d(bs)·N/bs`. A power law
//! `T = A·bs^−α` is fitted in log-log space and the controller picks the batch
//! size where the curve's slope magnitude `αA·bs^−(α+1)` falls to `τ`:
//!
//! ```text
//! plateau = (αA / τ)^(1 / (α + 1))
//! ```
//!
//! `τ` is a fraction of the slope at the smallest candidate, so the choice is
//! invariant to the time unit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::LearnerBackend;
use crate::context::Playbook;
use crate::pipeline::{run_iteration, PipelineError, StrategyConfig, TaskSample};

pub const DEFAULT_CANDIDATES: [usize; 6] = [1, 5, 10, 20, 50, 100];
pub const DEFAULT_TAU_FRACTION: f64 = 0.016;
pub const DEFAULT_UPPER_BOUND: usize = 100;

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("need at least 3 measurements with distinct batch sizes, got {0}")]
    TooFewMeasurements(usize),
    #[error("all measurements share one batch size")]
    DegenerateFit,
    #[error("epoch time does not decrease with batch size (alpha = {alpha:.4})")]
    NoSpeedup { alpha: f64 },
    #[error("invalid measurement: {0}")]
    InvalidMeasurement(String),
    #[error("invalid controller config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileMeasurement {
    pub batch_size: usize,
    pub delay_s: f64,
    pub n_train: usize,
    pub epoch_time_s: f64,
}

impl ProfileMeasurement {
    pub fn new(batch_size: usize, delay_s: f64, n_train: usize) -> Self {
        Self {
            batch_size,
            delay_s,
            n_train,
            epoch_time_s: delay_s * n_train as f64 / batch_size as f64,
        }
    }

    /// Builds a measurement from an epoch time directly (e.g. reported totals).
    pub fn from_epoch_time(batch_size: usize, epoch_time_s: f64, n_train: usize) -> Self {
        Self {
            batch_size,
            delay_s: epoch_time_s * batch_size as f64 / n_train as f64,
            n_train,
            epoch_time_s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayCurveFit {
    #[serde(rename = "A")]
    pub a: f64,
    pub alpha: f64,
    pub rms_log_residual: f64,
}

impl DelayCurveFit {
    pub fn epoch_time(&self, bs: f64) -> f64 {
        self.a * bs.powf(-self.alpha)
    }

    /// `|dT/dbs|` at `bs`.
    pub fn slope(&self, bs: f64) -> f64 {
        self.alpha * self.a * bs.powf(-(self.alpha + 1.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub candidates: Vec<usize>,
    pub tau_fraction: f64,
    pub bs_upper_bound: usize,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            candidates: DEFAULT_CANDIDATES.to_vec(),
            tau_fraction: DEFAULT_TAU_FRACTION,
            bs_upper_bound: DEFAULT_UPPER_BOUND,
        }
    }
}

impl ControllerConfig {
    /// Sorted, deduplicated candidates no larger than `n_train`.
    pub fn clipped_candidates(&self, n_train: usize) -> Vec<usize> {
        let mut c: Vec<usize> = self
            .candidates
            .iter()
            .copied()
            .filter(|&bs| bs >= 1 && bs <= n_train)
            .collect();
        c.sort_unstable();
        c.dedup();
        c
    }

    pub fn validate(&self, n_train: usize) -> Result<(), ControllerError> {
        if !(self.tau_fraction > 0.0 && self.tau_fraction < 1.0) {
            return Err(ControllerError::InvalidConfig(format!(
                "tau_fraction {} outside (0, 1)",
                self.tau_fraction
            )));
        }
        if self.bs_upper_bound == 0 {
            return Err(ControllerError::InvalidConfig(
                "bs_upper_bound must be positive".into(),
            ));
        }
        let c = self.clipped_candidates(n_train);
        if c.len() < 3 {
            return Err(ControllerError::InvalidConfig(format!(
                "need at least 3 distinct candidates not exceeding N_train = {n_train}, got {c:?}"
            )));
        }
        Ok(())
    }
}

/// Ordinary least squares on `(ln bs, ln T)`: slope `−α`, intercept `ln A`.
pub fn fit_power_law(
    measurements: &[ProfileMeasurement],
) -> Result<DelayCurveFit, ControllerError> {
    for m in measurements {
        if m.batch_size == 0 || !m.epoch_time_s.is_finite() || m.epoch_time_s <= 0.0 {
            return Err(ControllerError::InvalidMeasurement(format!("{m:?}")));
        }
    }
    let mut distinct: Vec<usize> = measurements.iter().map(|m| m.batch_size).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() == 1 && measurements.len() >= 3 {
        return Err(ControllerError::DegenerateFit);
    }
    if distinct.len() < 3 {
        return Err(ControllerError::TooFewMeasurements(distinct.len()));
    }

    let n = measurements.len() as f64;
    let xs: Vec<f64> = measurements
        .iter()
        .map(|m| (m.batch_size as f64).ln())
        .collect();
    let ys: Vec<f64> = measurements.iter().map(|m| m.epoch_time_s.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - (intercept + slope * x)).powi(2))
        .sum();

    let alpha = -slope;
    if alpha.is_nan() || alpha <= 0.0 {
        return Err(ControllerError::NoSpeedup { alpha });
    }
    Ok(DelayCurveFit {
        a: intercept.exp(),
        alpha,
        rms_log_residual: (rss / n).sqrt(),
    })
}

/// Unrounded batch size where `|dT/dbs| = tau`.
pub fn plateau_for_tau(fit: &DelayCurveFit, tau: f64) -> Result<f64, ControllerError> {
    if fit.alpha.is_nan() || fit.alpha <= 0.0 {
        return Err(ControllerError::NoSpeedup { alpha: fit.alpha });
    }
    Ok((fit.alpha * fit.a / tau).powf(1.0 / (fit.alpha + 1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauChoice {
    pub tau: f64,
    pub peak_slope: f64,
    /// Closed-form solution before rounding and clamping.
    pub raw: f64,
    pub batch_size: usize,
}

/// Picks the plateau batch size for `n_train` samples.
pub fn select_plateau(
    fit: &DelayCurveFit,
    config: &ControllerConfig,
    n_train: usize,
) -> Result<PlateauChoice, ControllerError> {
    let candidates = config.clipped_candidates(n_train);
    let lo = *candidates
        .first()
        .ok_or_else(|| ControllerError::InvalidConfig("no candidates within N_train".into()))?;
    let peak_slope = fit.slope(lo as f64);
    let tau = config.tau_fraction * peak_slope;
    let raw = plateau_for_tau(fit, tau)?;
    let hi = config.bs_upper_bound.min(n_train).max(lo);
    let batch_size = (raw.round() as usize).clamp(lo, hi);
    Ok(PlateauChoice {
        tau,
        peak_slope,
        raw,
        batch_size,
    })
}

/// Convenience wrapper returning only the chosen batch size.
pub fn plateau_batch_size(
    fit: &DelayCurveFit,
    config: &ControllerConfig,
    n_train: usize,
) -> Result<usize, ControllerError> {
    select_plateau(fit, config, n_train).map(|c| c.batch_size)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub measurements: Vec<ProfileMeasurement>,
    pub fit: DelayCurveFit,
    pub choice: PlateauChoice,
}

impl ProfileReport {
    pub fn selected(&self) -> usize {
        self.choice.batch_size
    }
}

/// Runs one trial iteration per candidate on the head of the corpus, fits the
/// delay curve and selects the plateau. Trial updates are discarded; the
/// caller's playbook is only read.
pub fn profile_and_select<B: LearnerBackend + ?Sized>(
    corpus: &[TaskSample],
    playbook: &Playbook,
    strategy: &StrategyConfig,
    backend: &B,
    config: &ControllerConfig,
    workers: usize,
) -> Result<ProfileReport, ControllerError> {
    let n_train = corpus.len();
    if n_train == 0 {
        return Err(PipelineError::EmptyCorpus.into());
    }
    config.validate(n_train)?;
    let mut measurements = Vec::new();
    // trials run one at a time so their timings stay independent
    for (i, bs) in config.clipped_candidates(n_train).into_iter().enumerate() {
        let trial = StrategyConfig {
            batch_size: bs,
            ..*strategy
        };
        let out = run_iteration(
            &corpus[..bs],
            playbook,
            &trial,
            backend,
            u64::MAX - i as u64,
            workers,
        )?;
        measurements.push(ProfileMeasurement::new(bs, out.delays.total_s, n_train));
    }
    let fit = fit_power_law(&measurements)?;
    let choice = select_plateau(&fit, config, n_train)?;
    Ok(ProfileReport {
        measurements,
        fit,
        choice,
    })
}
