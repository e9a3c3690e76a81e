//! The five pipelines. Each returns its artifacts in memory.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use effpot_core::covariance::{self, CovarianceEstimate, ProbeRunConfig, RhsMeasurement};
use effpot_core::equilibrium::{learn_from_samples, scale_scan, FittedPotential, ScanConfig, ScanEntry};
use effpot_core::integrators::{simulate_damped, InjectedNoise, SimConfig, State};
use effpot_core::potentials::{gradient_check, make_builtin, Builtin, GradientCheckReport, Potential};
use effpot_core::surrogate::{self, compare_reports, paired_diagnostics, EnsembleConfig, LangevinParams, Mode};
use effpot_core::{rng, SampleSet};
use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Command, CovSection, FrictionMode, LearnSection, PotentialSpec, RunConfig, SimSection, SurrogateModel};
use crate::{Failure, SeedRecord, StageTiming};

/// One output file, path relative to the output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub path: String,
    pub bytes: Vec<u8>,
}

/// Everything a command produced.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub artifacts: Vec<Artifact>,
    pub warnings: Vec<String>,
    pub stages: Vec<StageTiming>,
    pub seeds: Vec<SeedRecord>,
    /// Printed to stdout at the end of the run.
    pub summary: serde_json::Value,
    /// A failure found after the run started; artifacts are still written.
    pub failure: Option<Failure>,
}

impl Outcome {
    pub fn failed(f: Failure) -> Self {
        Outcome { failure: Some(f), ..Default::default() }
    }

    /// The artifact at `path`, if produced.
    pub fn artifact(&self, path: &str) -> Option<&[u8]> {
        self.artifacts.iter().find(|a| a.path == path).map(|a| a.bytes.as_slice())
    }

    /// Deserializes the JSON artifact at `path`.
    pub fn json<T: for<'de> Deserialize<'de>>(&self, path: &str) -> Option<T> {
        serde_json::from_slice(self.artifact(path)?).ok()
    }

    fn json_artifact<T: Serialize>(&mut self, path: &str, value: &T) -> Result<(), Failure> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Failure::Other(format!("{path}: {e}")))?;
        bytes.push(b'\n');
        self.artifacts.push(Artifact { path: path.to_string(), bytes });
        Ok(())
    }

    fn csv_artifact<F>(&mut self, path: &str, write: F) -> Result<(), Failure>
    where
        F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    {
        let mut bytes = Vec::new();
        write(&mut bytes).map_err(|e| Failure::Other(format!("{path}: {e}")))?;
        self.artifacts.push(Artifact { path: path.to_string(), bytes });
        Ok(())
    }

    fn seed(&mut self, job: impl Into<String>, seed: u64) {
        self.seeds.push(SeedRecord { job: job.into(), seed });
    }

    fn timed<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        log::info!("{stage}: started");
        let t = Instant::now();
        let out = f();
        let seconds = t.elapsed().as_secs_f64();
        log::info!("{stage}: {seconds:.2} s");
        self.stages.push(StageTiming { stage: stage.to_string(), seconds });
        out
    }
}

/// Covariance JSON written by `estimate-cov` and read by `learn`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceFile {
    pub estimate: CovarianceEstimate,
    /// Calibrated friction `Γ = Z/2`, row-major rows.
    pub friction: Vec<Vec<f64>>,
    pub measurements: Vec<RhsMeasurement>,
    #[serde(default)]
    pub reference: Option<CovarianceReference>,
}

/// Known covariances to compare the estimate with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceReference {
    /// Injected `ΣΣᵀ` of a validation run.
    pub injected: Option<Vec<Vec<f64>>>,
    pub injected_rel_error: Option<f64>,
    /// `δ E[∇W ∇Wᵀ]` of the unresolved built-in part, uniform on `[0, 1]^d`.
    pub quadrature_unit_box: Option<Vec<Vec<f64>>>,
    pub quadrature_unit_box_rel_error: Option<f64>,
    /// The same on `[−1, 1]^d`.
    pub quadrature_symmetric_box: Option<Vec<Vec<f64>>>,
    pub quadrature_symmetric_box_rel_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeStatus {
    pub index: usize,
    pub seed: u64,
    pub probe: Vec<f64>,
    pub measurement: Option<RhsMeasurement>,
    pub error: Option<String>,
}

/// Learning summary written next to the fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnReport {
    pub delta: f64,
    pub dim: usize,
    pub friction: Vec<Vec<f64>>,
    pub samples: usize,
    pub stride: u64,
    pub restarts: u64,
    pub beta_hat: f64,
    pub beta_in_range: bool,
    pub normality_pass: bool,
    pub normality_min_p: f64,
    /// Sample covariance of the stored momenta.
    pub p_covariance: Vec<Vec<f64>>,
    pub local_minima: Vec<Vec<f64>>,
    /// Quadratic-fit center of the lowest basin (2D only), see
    /// `FittedPotential::basin_center`.
    #[serde(default)]
    pub basin_center: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCheckOutput {
    pub report: GradientCheckReport,
    pub tolerance: f64,
    pub pass: bool,
}

/// Inputs resolved before any simulation starts.
struct Context<'a> {
    cfg: &'a RunConfig,
    potential: Arc<dyn Potential>,
    builtin: Option<Builtin>,
}

fn read_artifact(path: &Path, what: &str) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| Failure::MissingArtifact(format!("{what} {}: {e}", path.display())))
}

/// Loads and validates a fitted-potential JSON.
pub fn load_fit(path: &Path) -> Result<FittedPotential, Failure> {
    let bytes = read_artifact(path, "fitted potential")?;
    let fit: FittedPotential =
        serde_json::from_slice(&bytes).map_err(|e| Failure::MissingArtifact(format!("fitted potential {}: {e}", path.display())))?;
    fit.validate().map_err(|e| Failure::MissingArtifact(format!("{}: {e}", path.display())))?;
    Ok(fit)
}

fn load_covariance(path: &Path) -> Result<CovarianceFile, Failure> {
    let bytes = read_artifact(path, "covariance")?;
    serde_json::from_slice(&bytes).map_err(|e| Failure::MissingArtifact(format!("covariance {}: {e}", path.display())))
}

fn resolve<'a>(cfg: &'a RunConfig) -> Result<Context<'a>, Failure> {
    Ok(match &cfg.potential {
        PotentialSpec::Builtin(spec) => {
            let b = make_builtin(spec)?;
            Context { cfg, potential: b.full(), builtin: Some(b) }
        }
        PotentialSpec::Fitted(path) => Context { cfg, potential: Arc::new(load_fit(path)?), builtin: None },
    })
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

fn from_rows(r: &[Vec<f64>]) -> DMatrix<f64> {
    let d = r.len();
    DMatrix::from_fn(d, d, |i, j| r[i][j])
}

fn rel_error(est: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    (est - reference).norm() / reference.norm()
}

fn initial_position(ctx: &Context, sim: Option<&SimSection>) -> Vec<f64> {
    if let Some(q) = sim.and_then(|s| s.init_q.clone()) {
        return q;
    }
    match ctx.builtin.as_ref().and_then(|b| b.well_center) {
        Some(c) => c.to_vec(),
        None => vec![0.0; ctx.potential.dim()],
    }
}

/// Runs `cmd` without touching the filesystem except to read inputs.
pub fn run_command(cmd: Command, cfg: &RunConfig) -> Result<Outcome, Failure> {
    cfg.validate(cmd)?;
    let ctx = resolve(cfg)?;
    match cmd {
        Command::EstimateCov => estimate_cov(&ctx),
        Command::Learn => learn(&ctx),
        Command::ScaleScan => scan(&ctx),
        Command::SurrogateCompare => surrogate_compare(&ctx),
        Command::GradientCheck => grad_check(&ctx),
    }
}

/// Probes in parallel; every probe runs to completion so a failure report
/// covers all of them.
fn run_probes(ctx: &Context, cov: &CovSection, out: &mut Outcome) -> Result<CovarianceFile, Failure> {
    let sim = ctx.cfg.sim.as_ref();
    let d = ctx.potential.dim();
    let delta = cov.delta.or(sim.map(|s| s.delta)).unwrap_or_default();
    let n_steps = cov.n_steps.or(sim.map(|s| s.n_steps)).unwrap_or_default() as u64;
    let plan = covariance::build_scaled_probe_plan(d, cov.gamma, cov.probe_scale)?;
    let injected = cov.injected_noise.as_deref().map(from_rows);
    if injected.as_ref().is_some_and(|z| z.nrows() != d) {
        return Err(Failure::Config("covariance.injected_noise: dimension differs from the potential".into()));
    }
    let run = ProbeRunConfig {
        delta,
        n_steps,
        burn_in: None,
        seed: ctx.cfg.seed,
        init: State::at_rest(initial_position(ctx, sim)),
        stall_guard: sim.and_then(|s| s.stall_guard),
        injected_noise: injected.clone().map(|z| InjectedNoise { z }),
    };
    let target: Arc<dyn Potential> = match (&ctx.builtin, cov.macroscopic_only) {
        (Some(b), true) => b.component(0),
        _ => ctx.potential.clone(),
    };
    let seeds: Vec<u64> = (0..plan.len()).map(|k| rng::derive_seed(ctx.cfg.seed, "probe", k as u64)).collect();
    let results: Vec<_> = out.timed("probes", || {
        plan.probes
            .par_iter()
            .zip(&seeds)
            .map(|(a, &seed)| covariance::measure_rhs(&*target, a, plan.gamma, &ProbeRunConfig { seed, ..run.clone() }))
            .collect()
    });
    for (k, &s) in seeds.iter().enumerate() {
        out.seed(format!("probe {k}"), s);
    }
    if results.iter().any(|r| r.is_err()) {
        let statuses: Vec<ProbeStatus> = results
            .iter()
            .enumerate()
            .map(|(k, r)| ProbeStatus {
                index: k,
                seed: seeds[k],
                probe: plan.probes[k].iter().copied().collect(),
                measurement: r.as_ref().ok().copied(),
                error: r.as_ref().err().map(|e| e.to_string()),
            })
            .collect();
        out.json_artifact("probe_report.json", &statuses)?;
        let (k, e) = results
            .into_iter()
            .enumerate()
            .find_map(|(k, r)| r.err().map(|e| (k, e)))
            .unwrap_or((0, effpot_core::Error::Contract("unreachable".into())));
        let failure = Failure::from(effpot_core::Error::Probe { index: k, source: Box::new(e) });
        return Err(failure);
    }
    let measurements: Vec<RhsMeasurement> = results.into_iter().map(|r| r.map_err(Failure::from)).collect::<Result<_, _>>()?;
    let rhs: Vec<f64> = measurements.iter().map(|m| m.value).collect();
    let se: Vec<f64> = measurements.iter().map(|m| m.stderr).collect();
    let estimate = covariance::solve_covariance(&plan, &rhs, &se)?;
    if estimate.projected {
        out.warnings.push(format!("covariance: PSD projection applied (relative correction {:.3e})", estimate.relative_correction()));
    }
    for (k, m) in measurements.iter().enumerate() {
        if m.restarts > 0 {
            out.warnings.push(format!("probe {k}: stall guard restarted {} times", m.restarts));
        }
    }
    let z = estimate.z_matrix();
    let mut reference = CovarianceReference {
        injected: injected.as_ref().map(rows),
        injected_rel_error: injected.as_ref().map(|r| rel_error(&z, r)),
        quadrature_unit_box: None,
        quadrature_unit_box_rel_error: None,
        quadrature_symmetric_box: None,
        quadrature_symmetric_box_rel_error: None,
    };
    if let (Some(b), true, None, false) = (&ctx.builtin, cov.oracle_points > 0, &injected, cov.macroscopic_only) {
        let w = b.unresolved(0);
        let unit = covariance::quadrature_covariance(&*w, delta, 0.0, 1.0, cov.oracle_points);
        let sym = covariance::quadrature_covariance(&*w, delta, -1.0, 1.0, cov.oracle_points);
        reference.quadrature_unit_box_rel_error = Some(rel_error(&z, &unit));
        reference.quadrature_symmetric_box_rel_error = Some(rel_error(&z, &sym));
        reference.quadrature_unit_box = Some(rows(&unit));
        reference.quadrature_symmetric_box = Some(rows(&sym));
    }
    let friction = rows(&covariance::friction_from_covariance(&estimate));
    Ok(CovarianceFile { estimate, friction, measurements, reference: Some(reference) })
}

fn estimate_cov(ctx: &Context) -> Result<Outcome, Failure> {
    let cov = ctx.cfg.covariance.as_ref().ok_or_else(|| Failure::Config("covariance: section is required".into()))?;
    let mut out = Outcome::default();
    match run_probes(ctx, cov, &mut out) {
        Ok(file) => {
            out.summary = serde_json::json!({
                "z": rows(&file.estimate.z_matrix()),
                "friction": file.friction,
                "reference": file.reference,
            });
            out.json_artifact("covariance.json", &file)?;
        }
        Err(f) => out.failure = Some(f),
    }
    Ok(out)
}

fn sim_config(sim: &SimSection, dim: usize, seed: u64, friction: DMatrix<f64>, learn: &LearnSection) -> SimConfig {
    let mut c = SimConfig::new(dim, sim.delta, sim.gamma, sim.n_steps as u64).with_seed(seed);
    c.friction = friction;
    if let Some(b) = sim.burn_in {
        c.burn_in = b as u64;
    }
    c.subsample = sim.subsample;
    c.stall_guard = sim.stall_guard;
    c.momentum = learn.momentum;
    c
}

/// Basin depth in units of `1/β̂`.
const BASIN_LEVEL: f64 = 0.5;

fn learn_report(sim: &SimConfig, samples: &SampleSet, l: &effpot_core::equilibrium::Learned) -> LearnReport {
    LearnReport {
        delta: sim.delta,
        dim: samples.dim(),
        friction: rows(&sim.friction),
        samples: samples.len(),
        stride: samples.meta.stride,
        restarts: samples.meta.restarts,
        beta_hat: l.beta.beta_hat,
        beta_in_range: l.beta.in_range,
        normality_pass: l.normality.pass,
        normality_min_p: l.normality.min_p(),
        p_covariance: samples.p_covariance(),
        local_minima: l.fit.as_ref().map_or_else(Vec::new, |f| f.local_minima(20_000)),
        basin_center: l.fit.as_ref().and_then(|f| f.basin_center(BASIN_LEVEL / l.beta.beta_hat)),
    }
}

fn learn(ctx: &Context) -> Result<Outcome, Failure> {
    let cfg = ctx.cfg;
    let sim = cfg.sim()?;
    let learn = cfg.learn.clone().unwrap_or_default();
    let d = ctx.potential.dim();
    let mut out = Outcome::default();
    let friction = if d > 1 && learn.friction == FrictionMode::Calibrated {
        let cov = cfg.covariance.as_ref().ok_or_else(|| Failure::Config("covariance: section is required".into()))?;
        let file = match &cov.from_file {
            Some(path) => load_covariance(path)?,
            None => match run_probes(ctx, cov, &mut out) {
                Ok(f) => {
                    out.json_artifact("covariance.json", &f)?;
                    f
                }
                Err(f) => {
                    out.failure = Some(f);
                    return Ok(out);
                }
            },
        };
        if file.friction.len() != d {
            return Err(Failure::MissingArtifact(format!("covariance file has dimension {}, potential {d}", file.friction.len())));
        }
        from_rows(&file.friction)
    } else {
        DMatrix::identity(d, d) * sim.gamma
    };
    let seed = rng::derive_seed(cfg.seed, "learn", 0);
    out.seed("learn", seed);
    let sc = sim_config(sim, d, seed, friction, &learn);
    let init = State::at_rest(initial_position(ctx, Some(sim)));
    let samples = match out.timed("sample", || simulate_damped(&*ctx.potential, &sc, &init)) {
        Ok(s) => s,
        Err(e) => {
            out.failure = Some(e.into());
            return Ok(out);
        }
    };
    let learned = out.timed("fit", || learn_from_samples(&samples, &learn.options()))?;
    if !learned.beta.in_range {
        out.warnings.push(format!("beta_hat = {:.4} is outside the recommended range (0.2, 1.25)", learned.beta.beta_hat));
    }
    if samples.meta.restarts > 0 {
        out.warnings.push(format!("stall guard restarted the momentum {} times", samples.meta.restarts));
    }
    let report = learn_report(&sc, &samples, &learned);
    out.json_artifact("normality.json", &learned.normality)?;
    out.csv_artifact("histogram.csv", |w| learned.histogram.write_csv(w))?;
    out.json_artifact("report.json", &report)?;
    match &learned.fit {
        Some(fit) => out.json_artifact("fit.json", fit)?,
        None => {
            let msg = format!(
                "normality gate failed (min p = {:.3e} < {}): δ = {} is not at a separated scale; try a different step size",
                learned.normality.min_p(),
                learn.threshold,
                sim.delta
            );
            out.warnings.push(msg.clone());
            out.failure = Some(Failure::Normality(msg));
        }
    }
    out.summary = serde_json::to_value(&report).unwrap_or_default();
    Ok(out)
}

/// Per-entry summary row of a scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub delta: f64,
    pub seed: u64,
    pub beta_hat: Option<f64>,
    pub beta_in_range: Option<bool>,
    pub normality_min_p: Option<f64>,
    pub pass: bool,
    pub restarts: u64,
    pub fit_file: Option<String>,
    pub error: Option<String>,
}

fn scan(ctx: &Context) -> Result<Outcome, Failure> {
    let cfg = ctx.cfg;
    let sim = cfg.sim()?;
    let learn = cfg.learn.clone().unwrap_or_default();
    let deltas = cfg.scan.as_ref().map(|s| s.deltas.clone()).unwrap_or_default();
    let sc = ScanConfig {
        gamma: sim.gamma,
        n_steps: sim.n_steps as u64,
        burn_in: sim.burn_in.map(|b| b as u64),
        subsample: sim.subsample,
        seed: cfg.seed,
        stall_guard: sim.stall_guard,
        init: State::at_rest(initial_position(ctx, Some(sim))),
        learn: learn.options(),
        momentum: learn.momentum,
    };
    let mut out = Outcome::default();
    let entries: Vec<ScanEntry> = out.timed("scan", || scale_scan(&*ctx.potential, &deltas, &sc))?;
    let mut table = Vec::new();
    for (k, e) in entries.iter().enumerate() {
        out.seed(format!("scan δ={}", e.delta), e.seed);
        let fit_file = e.fit.as_ref().map(|_| format!("fit_{k}.json"));
        if let (Some(fit), Some(name)) = (&e.fit, &fit_file) {
            out.json_artifact(name, fit)?;
        }
        if e.beta_in_range == Some(false) {
            out.warnings.push(format!("δ = {}: beta_hat = {:.4} outside (0.2, 1.25)", e.delta, e.beta_hat.unwrap_or(f64::NAN)));
        }
        if let Some(n) = e.normality.as_ref().filter(|n| !n.pass) {
            out.warnings.push(format!("δ = {}: normality gate failed (min p = {:.3e})", e.delta, n.min_p()));
        }
        if let Some(err) = &e.error {
            out.warnings.push(format!("δ = {}: {err}", e.delta));
        }
        table.push(ScanRow {
            delta: e.delta,
            seed: e.seed,
            beta_hat: e.beta_hat,
            beta_in_range: e.beta_in_range,
            normality_min_p: e.normality.as_ref().map(|n| n.min_p()),
            pass: e.passed(),
            restarts: e.restarts,
            fit_file,
            error: e.error.clone(),
        });
    }
    out.json_artifact("scan.json", &table)?;
    out.csv_artifact("scan.csv", |w| {
        use std::io::Write;
        writeln!(w, "delta,beta_hat,normality_min_p,pass,restarts,error")?;
        for r in &table {
            let f = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
            let err = r.error.as_deref().unwrap_or("").replace(['"', ','], " ");
            writeln!(w, "{},{},{},{},{},{}", r.delta, f(r.beta_hat), f(r.normality_min_p), r.pass, r.restarts, err)?;
        }
        Ok(())
    })?;
    if !table.iter().any(|r| r.pass) {
        let diverged = entries.iter().all(|e| e.error.as_deref().is_some_and(|m| m.contains("divergence")));
        let msg = "no scan entry passed the normality gate".to_string();
        out.failure = Some(if diverged { Failure::Divergence(msg) } else { Failure::Normality(msg) });
    }
    out.summary = serde_json::to_value(&table).unwrap_or_default();
    Ok(out)
}

/// Report pair and discrepancy of a surrogate comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub discrepancy: surrogate::Discrepancy,
    pub substeps: usize,
    pub fine_step: f64,
    pub beta_hat: f64,
    pub n_included: usize,
    pub excluded_full: usize,
    pub excluded_surrogate: usize,
}

fn surrogate_compare(ctx: &Context) -> Result<Outcome, Failure> {
    let cfg = ctx.cfg;
    let s = cfg.surrogate.as_ref().ok_or_else(|| Failure::Config("surrogate: section is required".into()))?;
    let (model, fit_beta): (Arc<dyn Potential>, Option<f64>) = match &s.model {
        SurrogateModel::Fit(path) => {
            let fit = load_fit(path)?;
            let b = fit.beta_hat;
            (Arc::new(fit), Some(b))
        }
        SurrogateModel::Truncation(k) => {
            let b =
                ctx.builtin.as_ref().ok_or_else(|| Failure::Config("surrogate.model: a truncation needs a built-in potential".into()))?;
            if *k >= b.n_components() {
                return Err(Failure::Config(format!(
                    "surrogate.model: truncation {k} but the potential has {} components",
                    b.n_components()
                )));
            }
            (b.effective(*k), None)
        }
    };
    if model.dim() != ctx.potential.dim() {
        return Err(Failure::Config("surrogate.model: dimension differs from the potential".into()));
    }
    let mut out = Outcome::default();
    let ratio = s.step / s.fine_step;
    let substeps = ratio.round().max(1.0) as usize;
    if (ratio - substeps as f64).abs() > 1e-9 * ratio {
        out.warnings.push(format!("fine step rounded to step/{substeps} = {:.6e}", s.step / substeps as f64));
    }
    let beta_hat = s.beta_hat.or(fit_beta).unwrap_or(1.0);
    let d = model.dim();
    let lp = LangevinParams { friction: DMatrix::identity(d, d) * s.gamma, beta_hat };
    let base = EnsembleConfig {
        n_traj: s.n_traj,
        horizon: s.horizon,
        step: s.step,
        store_every: s.store_every,
        init_q: s.init_q.clone(),
        init_p: s.init_p.clone(),
        seed: cfg.seed,
        noise_substeps: 1,
        extrapolation_margin: s.extrapolation_margin,
    };
    let (coarse, fine) = base.coupled(substeps)?;
    out.seed("ensembles (shared)", cfg.seed);
    let mut full = out.timed("full model", || surrogate::run_ensemble(&*ctx.potential, s.mode, &fine, Some(&lp)))?;
    let mut sur = out.timed("surrogate", || surrogate::run_ensemble(&*model, s.mode, &coarse, Some(&lp)))?;
    let (excluded_full, excluded_surrogate) = (full.excluded.len(), sur.excluded.len());
    for (name, n) in [("full model", excluded_full), ("surrogate", excluded_surrogate)] {
        if n > 0 {
            out.warnings.push(format!("{name}: {n} of {} trajectories excluded (left the fitted domain or diverged)", s.n_traj));
        }
    }
    let (ra, rb) = out.timed("diagnostics", || paired_diagnostics(&mut full, &mut sur, &s.diagnostics))?;
    let discrepancy = compare_reports(&ra, &rb)?;
    out.warnings.extend(discrepancy.warnings.iter().cloned());
    for (dir, r) in [("full", &ra), ("surrogate", &rb)] {
        out.csv_artifact(&format!("{dir}/mean_path.csv"), |w| r.write_mean_path_csv(w))?;
        out.csv_artifact(&format!("{dir}/acf.csv"), |w| r.write_acf_csv(w))?;
        out.csv_artifact(&format!("{dir}/equilibrium.csv"), |w| r.write_equilibrium_csv(w))?;
        if s.mode == Mode::Hamiltonian {
            out.csv_artifact(&format!("{dir}/phase.csv"), |w| r.write_phase_csv(w))?;
        }
        out.json_artifact(&format!("{dir}/report.json"), r)?;
    }
    let summary = ComparisonSummary {
        discrepancy,
        substeps,
        fine_step: s.step / substeps as f64,
        beta_hat,
        n_included: ra.n_included,
        excluded_full,
        excluded_surrogate,
    };
    out.json_artifact("discrepancy.json", &summary)?;
    out.summary = serde_json::to_value(&summary).unwrap_or_default();
    Ok(out)
}

fn grad_check(ctx: &Context) -> Result<Outcome, Failure> {
    let g = ctx.cfg.gradient_check.clone().unwrap_or_default();
    let d = ctx.potential.dim();
    let mut out = Outcome::default();
    out.seed("points", ctx.cfg.seed);
    let mut r = rng::stream(ctx.cfg.seed, "gradient-check", 0);
    let points: Vec<Vec<f64>> = (0..g.points).map(|_| (0..d).map(|_| r.random_range(g.lo..g.hi)).collect()).collect();
    let report = out.timed("gradient check", || gradient_check(&*ctx.potential, &points, g.step));
    let pass = report.max_rel_error <= g.tolerance;
    let output = GradientCheckOutput { report, tolerance: g.tolerance, pass };
    out.json_artifact("gradient_check.json", &output)?;
    if !pass {
        out.failure = Some(Failure::Other(format!(
            "gradient check failed: max relative error {:.3e} > {:.1e} at point {}",
            report.max_rel_error, g.tolerance, report.worst_index
        )));
    }
    out.summary = serde_json::to_value(&output).unwrap_or_default();
    Ok(out)
}
