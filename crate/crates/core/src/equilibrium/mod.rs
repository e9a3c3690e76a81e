//! From equilibrium samples to an effective potential: normality gate,
//! inverse temperature, histogram and log-density regression.

pub mod fit;
pub mod histogram;
pub mod normality;
pub mod samples;
pub mod scan;

use serde::{Deserialize, Serialize};

pub use fit::{fit_potential, BasisKind, FitOptions, FittedPotential};
pub use histogram::{histogram_density, total_variation, Histogram};
pub use normality::{normality_test, NormalityReport};
pub use samples::{SampleMeta, SampleSet};
pub use scan::{scale_scan, ScanConfig, ScanEntry};

use crate::{Error, Result};

/// β̂ values outside this interval usually make poor fits.
pub const BETA_RANGE: (f64, f64) = (0.2, 1.25);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaEstimate {
    pub beta_hat: f64,
    pub in_range: bool,
}

/// `β̂ = 1 / var(p)` in one dimension; multi-dimensional runs are calibrated
/// to `β̂ = 1`.
pub fn estimate_beta(samples: &SampleSet) -> Result<BetaEstimate> {
    if samples.dim() != 1 {
        return Ok(BetaEstimate { beta_hat: 1.0, in_range: true });
    }
    if samples.len() < 2 {
        return Err(Error::InsufficientData("need at least two momentum samples".into()));
    }
    let (_, var) = samples::mean_var(samples.ps());
    if !(var > 0.0) {
        return Err(Error::Degenerate("momentum variance is zero".into()));
    }
    let beta_hat = 1.0 / var;
    Ok(BetaEstimate { beta_hat, in_range: beta_hat > BETA_RANGE.0 && beta_hat < BETA_RANGE.1 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnOptions {
    pub threshold: f64,
    /// Bins per dimension; `0` picks 200 in 1D and 80 otherwise.
    pub bins: usize,
    pub fit: FitOptions,
}

impl Default for LearnOptions {
    fn default() -> Self {
        LearnOptions { threshold: 0.01, bins: 0, fit: FitOptions::default() }
    }
}

impl LearnOptions {
    pub fn bins_for(&self, dim: usize) -> usize {
        match (self.bins, dim) {
            (0, 1) => 200,
            (0, _) => 80,
            (b, _) => b,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Learned {
    pub normality: NormalityReport,
    pub beta: BetaEstimate,
    pub histogram: Histogram,
    /// Present only when the normality gate passed.
    pub fit: Option<FittedPotential>,
}

/// Normality gate, β̂, histogram and (if the gate passes) the fit.
pub fn learn_from_samples(samples: &SampleSet, opts: &LearnOptions) -> Result<Learned> {
    let normality = normality_test(samples, opts.threshold)?;
    let beta = estimate_beta(samples)?;
    let histogram = histogram_density(samples, opts.bins_for(samples.dim()))?;
    let fit = if normality.pass { Some(fit_potential(&histogram, beta.beta_hat, &opts.fit)?) } else { None };
    Ok(Learned { normality, beta, histogram, fit })
}
