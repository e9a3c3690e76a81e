//! The run configuration: one JSON file describing the potential, the seed and
//! the settings of every pipeline stage. Sections a command does not use may
//! be omitted.

use std::path::{Path, PathBuf};

use effpot_core::equilibrium::{FitOptions, LearnOptions};
use effpot_core::integrators::{MomentumSample, StallGuard};
use effpot_core::potentials::BuiltinSpec;
use effpot_core::surrogate::{DiagnosticsOptions, InitDist, Mode};
use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub potential: PotentialSpec,
    /// Optional declaration of the intended pipeline, checked against the
    /// subcommand.
    #[serde(default)]
    pub pipeline: Option<Pipeline>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sim: Option<SimSection>,
    #[serde(default)]
    pub covariance: Option<CovSection>,
    #[serde(default)]
    pub learn: Option<LearnSection>,
    #[serde(default)]
    pub scan: Option<ScanSection>,
    #[serde(default)]
    pub surrogate: Option<SurrogateSection>,
    #[serde(default)]
    pub gradient_check: Option<GradientCheckSection>,
}

/// `{"builtin": {"kind": ..., "params": {...}}}` or `{"fitted": "fit.json"}`.
/// A fitted-potential file stands in for any external oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    Builtin(BuiltinSpec),
    Fitted(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    EstimateCov,
    Learn,
    ScaleScan,
    Surrogate,
    Compare,
    GradientCheck,
}

/// Settings of the damped sampling run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub delta: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Number of steps; a float so that `1e8` is accepted.
    pub n_steps: f64,
    /// Defaults to 10% of `n_steps`.
    #[serde(default)]
    pub burn_in: Option<f64>,
    /// Stored-sample stride; by default the smallest one keeping at most
    /// 4e6 samples.
    #[serde(default)]
    pub subsample: Option<u64>,
    /// Initial position; defaults to the Müller-Brown well center or the
    /// origin.
    #[serde(default)]
    pub init_q: Option<Vec<f64>>,
    #[serde(default)]
    pub stall_guard: Option<StallGuard>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovSection {
    /// Scalar probe friction.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "one_f64")]
    pub probe_scale: f64,
    /// Probe step and length; default to the `sim` section.
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub n_steps: Option<f64>,
    /// Known `ΣΣᵀ` added as explicit white noise (validation runs).
    #[serde(default)]
    pub injected_noise: Option<Vec<Vec<f64>>>,
    /// Probe only the smooth macroscopic part of a built-in, so that the
    /// injected noise is the only source of fluctuations.
    #[serde(default)]
    pub macroscopic_only: bool,
    /// Reuse a covariance JSON written by `estimate-cov` instead of probing.
    #[serde(default)]
    pub from_file: Option<PathBuf>,
    /// Midpoint-rule points per axis of the quadrature reference for built-in
    /// potentials; 0 disables it.
    #[serde(default = "default_oracle_points")]
    pub oracle_points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrictionMode {
    /// `Γ = Z/2` from the covariance stage (multi-dimensional runs).
    Calibrated,
    /// `Γ = γI`, skipping the calibration.
    Naive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnSection {
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Histogram bins per dimension; 0 picks 200 in 1D and 80 otherwise.
    #[serde(default)]
    pub bins: usize,
    #[serde(default)]
    pub fit: FitOptions,
    #[serde(default = "default_momentum")]
    pub momentum: MomentumSample,
    #[serde(default = "default_friction")]
    pub friction: FrictionMode,
}

impl Default for LearnSection {
    fn default() -> Self {
        LearnSection {
            threshold: default_threshold(),
            bins: 0,
            fit: FitOptions::default(),
            momentum: default_momentum(),
            friction: default_friction(),
        }
    }
}

impl LearnSection {
    pub fn options(&self) -> LearnOptions {
        LearnOptions { threshold: self.threshold, bins: self.bins, fit: self.fit }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSection {
    pub deltas: Vec<f64>,
}

/// The model that replaces the full potential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SurrogateModel {
    /// A fitted-potential JSON.
    Fit(PathBuf),
    /// The built-in's `U_k` (components `0..=k`).
    Truncation(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateSection {
    pub model: SurrogateModel,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default = "default_n_traj")]
    pub n_traj: usize,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    /// Step of the surrogate model.
    pub step: f64,
    /// Step of the full model; rounded so that `step / fine_step` is an
    /// integer.
    pub fine_step: f64,
    #[serde(default = "one_usize")]
    pub store_every: usize,
    pub init_q: Vec<InitDist>,
    pub init_p: Vec<InitDist>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Defaults to the fit's β̂, or 1 for truncations.
    #[serde(default)]
    pub beta_hat: Option<f64>,
    #[serde(default = "one_f64")]
    pub extrapolation_margin: f64,
    #[serde(default)]
    pub diagnostics: DiagnosticsOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradientCheckSection {
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default = "default_fd_step")]
    pub step: f64,
    /// Points are uniform on `[lo, hi]^d`.
    #[serde(default = "default_lo")]
    pub lo: f64,
    #[serde(default = "default_hi")]
    pub hi: f64,
    #[serde(default = "default_fd_tol")]
    pub tolerance: f64,
}

impl Default for GradientCheckSection {
    fn default() -> Self {
        GradientCheckSection {
            points: default_points(),
            step: default_fd_step(),
            lo: default_lo(),
            hi: default_hi(),
            tolerance: default_fd_tol(),
        }
    }
}

fn default_gamma() -> f64 {
    0.1
}
fn one_f64() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn default_oracle_points() -> usize {
    1000
}
fn default_threshold() -> f64 {
    0.01
}
fn default_momentum() -> MomentumSample {
    MomentumSample::StepAverage
}
fn default_friction() -> FrictionMode {
    FrictionMode::Calibrated
}
fn default_mode() -> Mode {
    Mode::Langevin
}
fn default_n_traj() -> usize {
    500
}
fn default_horizon() -> f64 {
    50.0
}
fn default_points() -> usize {
    100
}
fn default_fd_step() -> f64 {
    1e-6
}
fn default_lo() -> f64 {
    -2.0
}
fn default_hi() -> f64 {
    2.0
}
fn default_fd_tol() -> f64 {
    1e-6
}

/// Subcommands, in the order they appear in the help text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    EstimateCov,
    Learn,
    ScaleScan,
    SurrogateCompare,
    GradientCheck,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::EstimateCov => "estimate-cov",
            Command::Learn => "learn",
            Command::ScaleScan => "scale-scan",
            Command::SurrogateCompare => "surrogate-compare",
            Command::GradientCheck => "gradient-check",
        }
    }

    fn accepts(self, p: Pipeline) -> bool {
        matches!(
            (self, p),
            (Command::EstimateCov, Pipeline::EstimateCov)
                | (Command::Learn, Pipeline::Learn)
                | (Command::ScaleScan, Pipeline::ScaleScan)
                | (Command::SurrogateCompare, Pipeline::Surrogate | Pipeline::Compare)
                | (Command::GradientCheck, Pipeline::GradientCheck)
        )
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, Failure> {
        serde_json::from_str(text).map_err(|e| Failure::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::MissingArtifact(format!("config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Checks every knob the command will use; messages name the field.
    pub fn validate(&self, cmd: Command) -> Result<(), Failure> {
        if let Some(p) = self.pipeline {
            if !cmd.accepts(p) {
                return bad("pipeline", format!("config declares {p:?} but the command is {}", cmd.name()));
            }
        }
        let dim = match &self.potential {
            PotentialSpec::Builtin(spec) => {
                spec.validate().map_err(|e| Failure::Config(format!("potential: {}", e)))?;
                Some(spec.kind.dim())
            }
            PotentialSpec::Fitted(_) => None,
        };
        match cmd {
            Command::EstimateCov => {
                let cov = self.covariance.as_ref().ok_or_else(|| missing("covariance"))?;
                self.validate_cov(cov, dim)?;
                if cov.from_file.is_some() {
                    return bad("covariance.from_file", "estimate-cov computes the covariance; from_file is for learn".into());
                }
            }
            Command::Learn => {
                let sim = self.sim()?;
                validate_sim(sim, dim)?;
                if let Some(l) = &self.learn {
                    validate_learn(l)?;
                }
                let multi = dim.is_some_and(|d| d > 1) || sim.init_q.as_ref().is_some_and(|q| q.len() > 1);
                let friction = self.learn.as_ref().map_or(default_friction(), |l| l.friction);
                if multi && friction == FrictionMode::Calibrated {
                    let cov = self.covariance.as_ref().ok_or_else(|| missing("covariance"))?;
                    self.validate_cov(cov, dim)?;
                }
            }
            Command::ScaleScan => {
                let sim = self.sim()?;
                validate_sim(sim, dim)?;
                if let Some(l) = &self.learn {
                    validate_learn(l)?;
                }
                let scan = self.scan.as_ref().ok_or_else(|| missing("scan"))?;
                if scan.deltas.is_empty() {
                    return bad("scan.deltas", "needs at least one step size".into());
                }
                if scan.deltas.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
                    return bad("scan.deltas", "step sizes must be positive".into());
                }
                if scan.deltas.windows(2).any(|w| w[1] >= w[0]) {
                    return bad("scan.deltas", "step sizes must be strictly decreasing".into());
                }
            }
            Command::SurrogateCompare => {
                let s = self.surrogate.as_ref().ok_or_else(|| missing("surrogate"))?;
                validate_surrogate(s, dim)?;
                if matches!(s.model, SurrogateModel::Truncation(_)) && dim.is_none() {
                    return bad("surrogate.model", "a truncation needs a built-in potential".into());
                }
            }
            Command::GradientCheck => {
                let g = self.gradient_check.clone().unwrap_or_default();
                if g.points == 0 {
                    return bad("gradient_check.points", "must be at least 1".into());
                }
                positive("gradient_check.step", g.step)?;
                positive("gradient_check.tolerance", g.tolerance)?;
                if !(g.hi > g.lo && g.lo.is_finite() && g.hi.is_finite()) {
                    return bad("gradient_check.hi", "need lo < hi".into());
                }
            }
        }
        Ok(())
    }

    pub fn sim(&self) -> Result<&SimSection, Failure> {
        self.sim.as_ref().ok_or_else(|| missing("sim"))
    }

    fn validate_cov(&self, cov: &CovSection, dim: Option<usize>) -> Result<(), Failure> {
        if cov.macroscopic_only && !matches!(self.potential, PotentialSpec::Builtin(_)) {
            return bad("covariance.macroscopic_only", "needs a built-in potential".into());
        }
        if cov.from_file.is_some() {
            return Ok(());
        }
        positive("covariance.gamma", cov.gamma)?;
        positive("covariance.probe_scale", cov.probe_scale)?;
        match (cov.delta, self.sim.as_ref()) {
            (Some(d), _) => positive("covariance.delta", d)?,
            (None, Some(s)) => positive("sim.delta", s.delta)?,
            (None, None) => return bad("covariance.delta", "needed when there is no sim section".into()),
        }
        match (cov.n_steps, self.sim.as_ref()) {
            (Some(n), _) => steps("covariance.n_steps", n)?,
            (None, Some(s)) => steps("sim.n_steps", s.n_steps)?,
            (None, None) => return bad("covariance.n_steps", "needed when there is no sim section".into()),
        };
        if let Some(z) = &cov.injected_noise {
            let d = z.len();
            if d == 0 || z.iter().any(|r| r.len() != d) || z.iter().flatten().any(|x| !x.is_finite()) {
                return bad("covariance.injected_noise", "must be a finite square matrix".into());
            }
            if dim.is_some_and(|k| k != d) {
                return bad("covariance.injected_noise", format!("is {d}×{d} but the potential has dimension {}", dim.unwrap_or(0)));
            }
        }
        if let Some(q) = self.sim.as_ref().and_then(|s| s.init_q.as_ref()) {
            if dim.is_some_and(|k| k != q.len()) {
                return bad("sim.init_q", "length differs from the potential dimension".into());
            }
        }
        Ok(())
    }
}

fn validate_sim(sim: &SimSection, dim: Option<usize>) -> Result<(), Failure> {
    positive("sim.delta", sim.delta)?;
    positive("sim.gamma", sim.gamma)?;
    let n = steps("sim.n_steps", sim.n_steps)?;
    if let Some(b) = sim.burn_in {
        if !(b >= 0.0 && b.fract() == 0.0 && (b as u64) < n) {
            return bad("sim.burn_in", format!("must be a whole number below n_steps, got {b}"));
        }
    }
    if sim.subsample == Some(0) {
        return bad("sim.subsample", "must be at least 1".into());
    }
    if let Some(q) = &sim.init_q {
        if q.is_empty() || q.iter().any(|x| !x.is_finite()) {
            return bad("sim.init_q", "must be a non-empty finite vector".into());
        }
        if dim.is_some_and(|d| d != q.len()) {
            return bad("sim.init_q", format!("has {} entries but the potential has dimension {}", q.len(), dim.unwrap_or(0)));
        }
    }
    if let Some(g) = sim.stall_guard {
        if g.window == 0 || !(g.ratio > 0.0 && g.ratio < 1.0) {
            return bad("sim.stall_guard", "needs window >= 1 and 0 < ratio < 1".into());
        }
    }
    Ok(())
}

fn validate_learn(l: &LearnSection) -> Result<(), Failure> {
    if !(l.threshold > 0.0 && l.threshold < 1.0) {
        return bad("learn.threshold", format!("must lie in (0, 1), got {}", l.threshold));
    }
    if l.bins == 1 {
        return bad("learn.bins", "must be 0 (automatic) or at least 2".into());
    }
    if l.fit.basis_size < 4 {
        return bad("learn.fit.basis_size", format!("must be at least 4, got {}", l.fit.basis_size));
    }
    if !(l.fit.smoothing >= 0.0 && l.fit.smoothing.is_finite()) {
        return bad("learn.fit.smoothing", "must be non-negative".into());
    }
    Ok(())
}

fn validate_surrogate(s: &SurrogateSection, dim: Option<usize>) -> Result<(), Failure> {
    if s.n_traj == 0 {
        return bad("surrogate.n_traj", "must be at least 1".into());
    }
    positive("surrogate.horizon", s.horizon)?;
    positive("surrogate.step", s.step)?;
    positive("surrogate.fine_step", s.fine_step)?;
    if s.fine_step > s.step {
        return bad("surrogate.fine_step", "must not exceed surrogate.step".into());
    }
    if s.step > s.horizon {
        return bad("surrogate.step", "must not exceed the horizon".into());
    }
    if s.store_every == 0 {
        return bad("surrogate.store_every", "must be at least 1".into());
    }
    if s.init_q.is_empty() || s.init_q.len() != s.init_p.len() {
        return bad("surrogate.init_p", "init_q and init_p need one entry per dimension".into());
    }
    if dim.is_some_and(|d| d != s.init_q.len()) {
        return bad("surrogate.init_q", "length differs from the potential dimension".into());
    }
    for (field, dists) in [("surrogate.init_q", &s.init_q), ("surrogate.init_p", &s.init_p)] {
        for d in dists {
            let ok = match *d {
                InitDist::Normal { mean, sd } => mean.is_finite() && sd >= 0.0 && sd.is_finite(),
                InitDist::Uniform { lo, hi, shift } => lo.is_finite() && hi > lo && hi.is_finite() && shift.is_finite(),
            };
            if !ok {
                return bad(field, format!("invalid distribution {d:?}"));
            }
        }
    }
    positive("surrogate.gamma", s.gamma)?;
    if let Some(b) = s.beta_hat {
        positive("surrogate.beta_hat", b)?;
    }
    if !(s.extrapolation_margin >= 0.0) {
        return bad("surrogate.extrapolation_margin", "must be non-negative".into());
    }
    let o = &s.diagnostics;
    for (field, v) in [("surrogate.diagnostics.acf_start_frac", o.acf_start_frac), ("surrogate.diagnostics.eq_start_frac", o.eq_start_frac)]
    {
        if !(0.0..1.0).contains(&v) {
            return bad(field, format!("must lie in [0, 1), got {v}"));
        }
    }
    positive("surrogate.diagnostics.max_lag_time", o.max_lag_time)?;
    if o.eq_bins == 0 {
        return bad("surrogate.diagnostics.eq_bins", "must be at least 1".into());
    }
    if let Some(r) = &o.eq_range {
        if r.len() != s.init_q.len() || r.iter().any(|(lo, hi)| !(hi > lo)) {
            return bad("surrogate.diagnostics.eq_range", "needs one increasing (lo, hi) pair per dimension".into());
        }
    }
    Ok(())
}

fn bad<T>(field: &str, msg: String) -> Result<T, Failure> {
    Err(Failure::Config(format!("{field}: {msg}")))
}

fn missing(section: &str) -> Failure {
    Failure::Config(format!("{section}: section is required by this command"))
}

fn positive(field: &str, v: f64) -> Result<(), Failure> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        bad(field, format!("must be positive and finite, got {v}"))
    }
}

fn steps(field: &str, v: f64) -> Result<u64, Failure> {
    if v >= 1.0 && v.fract() == 0.0 && v <= 1e15 {
        Ok(v as u64)
    } else {
        bad(field, format!("must be a whole number of steps >= 1, got {v}"))
    }
}
