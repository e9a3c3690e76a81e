use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{learn_from_samples, FittedPotential, LearnOptions, NormalityReport};
use crate::integrators::{simulate_damped, MomentumSample, SimConfig, StallGuard, State};
use crate::potentials::Potential;
use crate::{rng, Error, Result};

/// Settings shared by every step size of a scan.
#[derive(Debug, Clone)]
pub struct ScanConfig {
    pub gamma: f64,
    pub n_steps: u64,
    /// Defaults to 10% of `n_steps`.
    pub burn_in: Option<u64>,
    pub subsample: Option<u64>,
    pub seed: u64,
    pub stall_guard: Option<StallGuard>,
    pub init: State,
    pub learn: LearnOptions,
    pub momentum: MomentumSample,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanEntry {
    pub delta: f64,
    pub seed: u64,
    pub beta_hat: Option<f64>,
    pub beta_in_range: Option<bool>,
    pub normality: Option<NormalityReport>,
    pub fit: Option<FittedPotential>,
    pub restarts: u64,
    /// Why the entry failed (divergence, degenerate data, ill-posed fit).
    pub error: Option<String>,
}

impl ScanEntry {
    pub fn passed(&self) -> bool {
        self.normality.as_ref().is_some_and(|n| n.pass)
    }
}

/// Samples, gates and fits at every step size in `deltas` (strictly
/// decreasing). Entries are independent and run in parallel; a failure in
/// one entry is recorded without aborting the scan.
pub fn scale_scan<P: Potential + ?Sized>(oracle: &P, deltas: &[f64], cfg: &ScanConfig) -> Result<Vec<ScanEntry>> {
    if deltas.is_empty() {
        return Err(Error::config("scan needs at least one step size"));
    }
    if deltas.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
        return Err(Error::config("scan step sizes must be positive"));
    }
    if deltas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::config("scan step sizes must be strictly decreasing"));
    }
    let entries = deltas
        .par_iter()
        .enumerate()
        .map(|(i, &delta)| {
            let seed = rng::derive_seed(cfg.seed, "scan", i as u64);
            let mut sim = SimConfig::new(oracle.dim(), delta, cfg.gamma, cfg.n_steps).with_seed(seed);
            if let Some(b) = cfg.burn_in {
                sim.burn_in = b;
            }
            sim.subsample = cfg.subsample;
            sim.stall_guard = cfg.stall_guard;
            sim.momentum = cfg.momentum;
            let mut entry =
                ScanEntry { delta, seed, beta_hat: None, beta_in_range: None, normality: None, fit: None, restarts: 0, error: None };
            let result = simulate_damped(oracle, &sim, &cfg.init).and_then(|samples| {
                entry.restarts = samples.meta.restarts;
                learn_from_samples(&samples, &cfg.learn)
            });
            match result {
                Ok(l) => {
                    entry.beta_hat = Some(l.beta.beta_hat);
                    entry.beta_in_range = Some(l.beta.in_range);
                    entry.normality = Some(l.normality);
                    entry.fit = l.fit;
                }
                Err(e) => entry.error = Some(e.to_string()),
            }
            entry
        })
        .collect();
    Ok(entries)
}
