//! Estimation of the effective noise covariance `Z = ΣΣᵀ` by mass-matrix
//! probing, and friction calibration `Γ = Z/2`.
//!
//! For the stochastic system `dq = M⁻¹p dt`, `dp = (−γM⁻¹p − ∇V) dt + Σ dW`
//! the stationary energy balance gives
//!
//! ```text
//! Tr(Z M⁻¹) = 2γ E[pᵀ M⁻² p]
//! ```
//!
//! so every inverse mass `A = M⁻¹` run with friction `γI` yields one linear
//! equation in the entries of `Z`. A plan of `d(d+1)/2` probes determines `Z`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::integrators::{simulate_damped_into, InjectedNoise, SampleSink, SimConfig, StallGuard, State};
use crate::linalg;
use crate::potentials::Potential;
use crate::{rng, Error, Result};

pub const BATCHES: usize = 100;

/// Inverse-mass probes `A⁽ᵏ⁾`: `d` diagonal probes `s(I + e_k e_kᵀ)` followed
/// by one probe `s(I + (e_l e_rᵀ + e_r e_lᵀ)/2)` per pair `l < r`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbePlan {
    pub probes: Vec<DMatrix<f64>>,
    pub gamma: f64,
    /// Common scale `s` of every probe.
    pub scale: f64,
}

/// The default plan with unit scale.
pub fn build_probe_plan(d: usize, gamma: f64) -> Result<ProbePlan> {
    build_scaled_probe_plan(d, gamma, 1.0)
}

/// The default plan with every probe multiplied by `scale`.
///
/// Smaller inverse masses slow the probe dynamics down, which keeps probes
/// stable on stiff potentials.
pub fn build_scaled_probe_plan(d: usize, gamma: f64, scale: f64) -> Result<ProbePlan> {
    if d == 0 {
        return Err(Error::config("probe plan needs d >= 1"));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::config(format!("probe friction must be positive, got {gamma}")));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::config(format!("probe scale must be positive, got {scale}")));
    }
    let mut probes = Vec::with_capacity(d * (d + 1) / 2);
    if d == 1 {
        probes.push(DMatrix::identity(1, 1) * scale);
    } else {
        for k in 0..d {
            let mut a = DMatrix::identity(d, d);
            a[(k, k)] = 2.0;
            probes.push(a * scale);
        }
        for l in 0..d {
            for r in l + 1..d {
                let mut a = DMatrix::identity(d, d);
                a[(l, r)] = 0.5;
                a[(r, l)] = 0.5;
                probes.push(a * scale);
            }
        }
    }
    Ok(ProbePlan { probes, gamma, scale })
}

impl ProbePlan {
    pub fn dim(&self) -> usize {
        self.probes.first().map_or(0, |a| a.nrows())
    }

    pub fn len(&self) -> usize {
        self.probes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probes.is_empty()
    }

    /// Off-diagonal pairs `(l, r)` in probe order after the diagonal probes.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let d = self.dim();
        (0..d).flat_map(|l| (l + 1..d).map(move |r| (l, r))).collect()
    }

    /// The `d × d` design matrix of the diagonal probes.
    fn diagonal_design(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |k, i| self.probes[k][(i, i)])
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 || self.probes.len() != d * (d + 1) / 2 {
            return Err(Error::config(format!("a probe plan in dimension {d} needs {} probes", d * (d + 1) / 2)));
        }
        for (k, a) in self.probes.iter().enumerate() {
            if a.shape() != (d, d) || !linalg::is_symmetric(a, 1e-14) || linalg::min_eigenvalue(a) <= 0.0 {
                return Err(Error::config(format!("probe {k} is not symmetric positive definite")));
            }
            let off_diag = (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).filter(|&(i, j)| i != j && a[(i, j)] != 0.0);
            let expected: Vec<(usize, usize)> = if k < d {
                Vec::new()
            } else {
                let (l, r) = self.pairs()[k - d];
                vec![(l, r), (r, l)]
            };
            if off_diag.collect::<Vec<_>>() != expected {
                return Err(Error::config(format!("probe {k} has an unexpected off-diagonal pattern")));
            }
        }
        let design = self.diagonal_design();
        let svd = design.svd(false, false);
        if !(svd.singular_values.min() > 1e-12 * svd.singular_values.max()) {
            return Err(Error::config("diagonal probes are linearly dependent"));
        }
        Ok(())
    }

    /// `Tr(Z A)` for every probe: the exact right-hand sides for a given `Z`.
    pub fn analytic_rhs(&self, z: &DMatrix<f64>) -> Vec<f64> {
        self.probes.iter().map(|a| (z * a).trace()).collect()
    }
}

/// Measured right-hand side of one probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhsMeasurement {
    pub value: f64,
    pub stderr: f64,
    pub samples: u64,
    pub restarts: u64,
}

/// Run settings shared by all probes.
#[derive(Debug, Clone)]
pub struct ProbeRunConfig {
    pub delta: f64,
    pub n_steps: u64,
    /// Defaults to 10% of `n_steps`.
    pub burn_in: Option<u64>,
    pub seed: u64,
    pub init: State,
    pub stall_guard: Option<StallGuard>,
    pub injected_noise: Option<InjectedNoise>,
}

struct RhsSink {
    a: DMatrix<f64>,
    ap: Vec<f64>,
    batch_size: u64,
    in_batch: u64,
    batch_sum: f64,
    batches: Vec<f64>,
    total: f64,
    count: u64,
}

impl SampleSink for RhsSink {
    fn push(&mut self, _q: &[f64], p: &[f64]) {
        let d = p.len();
        for i in 0..d {
            self.ap[i] = (0..d).map(|j| self.a[(i, j)] * p[j]).sum();
        }
        let v: f64 = self.ap.iter().map(|x| x * x).sum();
        self.total += v;
        self.count += 1;
        self.batch_sum += v;
        self.in_batch += 1;
        if self.in_batch == self.batch_size {
            self.batches.push(self.batch_sum / self.batch_size as f64);
            self.batch_sum = 0.0;
            self.in_batch = 0;
        }
    }
}

/// Runs the damped scheme with `M⁻¹ = probe`, `Γ = γI` and returns
/// `2γ · mean(pᵀM⁻²p)` with a batch-means standard error.
pub fn measure_rhs<P: Potential + ?Sized>(oracle: &P, probe: &DMatrix<f64>, gamma: f64, run: &ProbeRunConfig) -> Result<RhsMeasurement> {
    let d = probe.nrows();
    if !linalg::is_symmetric(probe, 1e-14) || linalg::min_eigenvalue(probe) <= 0.0 {
        return Err(Error::config("probe must be symmetric positive definite"));
    }
    let mass = probe.clone().try_inverse().ok_or_else(|| Error::config("probe is singular"))?;
    let mut sim = SimConfig::new(d, run.delta, gamma, run.n_steps).with_seed(run.seed).with_subsample(1);
    sim.mass = linalg::symmetrize(&mass);
    if let Some(b) = run.burn_in {
        sim.burn_in = b;
    }
    sim.stall_guard = run.stall_guard;
    sim.injected_noise = run.injected_noise.clone();
    let n_post = run.n_steps.saturating_sub(sim.burn_in);
    let mut sink = RhsSink {
        a: probe.clone(),
        ap: vec![0.0; d],
        batch_size: (n_post / BATCHES as u64).max(1),
        in_batch: 0,
        batch_sum: 0.0,
        batches: Vec::with_capacity(BATCHES + 1),
        total: 0.0,
        count: 0,
    };
    let stats = simulate_damped_into(oracle, &sim, &run.init, &mut sink)?;
    if sink.count == 0 {
        return Err(Error::InsufficientData("probe run stored no samples".into()));
    }
    let mean = sink.total / sink.count as f64;
    let nb = sink.batches.len();
    let stderr = if nb >= 2 {
        let bm = sink.batches.iter().sum::<f64>() / nb as f64;
        let var = sink.batches.iter().map(|b| (b - bm).powi(2)).sum::<f64>() / (nb - 1) as f64;
        (var / nb as f64).sqrt()
    } else {
        f64::NAN
    };
    Ok(RhsMeasurement { value: 2.0 * gamma * mean, stderr: 2.0 * gamma * stderr, samples: sink.count, restarts: stats.restarts })
}

/// Estimated `Z` with the per-probe diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceEstimate {
    pub dim: usize,
    /// Row-major `d × d`.
    pub z: Vec<f64>,
    pub rhs: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Whether eigenvalue clipping changed the solved matrix.
    pub projected: bool,
    /// Frobenius norm of the clipping correction.
    pub projection_correction: f64,
    pub gamma: f64,
    pub probe_scale: f64,
    /// Probes `A = M⁻¹`, each row-major.
    pub probes: Vec<Vec<f64>>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)])).collect()
}

impl CovarianceEstimate {
    pub fn z_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.z)
    }

    /// Clipping correction relative to `‖Z‖_F`.
    pub fn relative_correction(&self) -> f64 {
        let n = self.z_matrix().norm();
        if n > 0.0 {
            self.projection_correction / n
        } else {
            0.0
        }
    }
}

/// Solves the probe equations for `Z`.
///
/// The diagonal of `Z` comes from the `d × d` system of the diagonal probes;
/// every pair probe then gives `z_lr = (rhs − Σ a_ii z_ii) / (2 a_lr)`. The
/// result is symmetrized and, if needed, clipped to be positive semidefinite.
pub fn solve_covariance(plan: &ProbePlan, rhs: &[f64], stderr: &[f64]) -> Result<CovarianceEstimate> {
    plan.validate()?;
    let d = plan.dim();
    if rhs.len() != plan.len() || (!stderr.is_empty() && stderr.len() != plan.len()) {
        return Err(Error::Contract(format!("{} right-hand sides for {} probes", rhs.len(), plan.len())));
    }
    let design = plan.diagonal_design();
    let b = nalgebra::DVector::from_row_slice(&rhs[..d]);
    let zd = design.lu().solve(&b).ok_or_else(|| Error::config("diagonal probe system is singular"))?;
    let mut z = DMatrix::from_diagonal(&zd);
    for (k, (l, r)) in plan.pairs().into_iter().enumerate() {
        let a = &plan.probes[d + k];
        let diag: f64 = (0..d).map(|i| a[(i, i)] * zd[i]).sum();
        let v = (rhs[d + k] - diag) / (2.0 * a[(l, r)]);
        z[(l, r)] = v;
        z[(r, l)] = v;
    }
    let z = linalg::symmetrize(&z);
    let (zp, correction) = if linalg::min_eigenvalue(&z) < 0.0 { linalg::psd_project(&z) } else { (z, 0.0) };
    Ok(CovarianceEstimate {
        dim: d,
        z: row_major(&zp),
        rhs: rhs.to_vec(),
        stderr: if stderr.is_empty() { vec![0.0; rhs.len()] } else { stderr.to_vec() },
        projected: correction > 0.0,
        projection_correction: correction,
        gamma: plan.gamma,
        probe_scale: plan.scale,
        probes: plan.probes.iter().map(row_major).collect(),
    })
}

/// Runs every probe (in parallel, each with its own RNG stream) and solves
/// for `Z`. A failing probe aborts with an error naming its index.
pub fn estimate_covariance<P: Potential + ?Sized>(
    oracle: &P,
    plan: &ProbePlan,
    run: &ProbeRunConfig,
) -> Result<(CovarianceEstimate, Vec<RhsMeasurement>)> {
    plan.validate()?;
    if oracle.dim() != plan.dim() {
        return Err(Error::config(format!("oracle dimension {} but plan dimension {}", oracle.dim(), plan.dim())));
    }
    let measurements: Vec<Result<RhsMeasurement>> = plan
        .probes
        .par_iter()
        .enumerate()
        .map(|(k, a)| {
            let mut r = run.clone();
            r.seed = rng::derive_seed(run.seed, "probe", k as u64);
            measure_rhs(oracle, a, plan.gamma, &r).map_err(|e| Error::Probe { index: k, source: Box::new(e) })
        })
        .collect();
    let measurements = measurements.into_iter().collect::<Result<Vec<_>>>()?;
    let rhs: Vec<f64> = measurements.iter().map(|m| m.value).collect();
    let se: Vec<f64> = measurements.iter().map(|m| m.stderr).collect();
    Ok((solve_covariance(plan, &rhs, &se)?, measurements))
}

/// `Γ = Z/2`.
pub fn friction_from_covariance(est: &CovarianceEstimate) -> DMatrix<f64> {
    linalg::symmetrize(&est.z_matrix()) * 0.5
}

/// `δ E_u[∇W(u) ∇W(u)ᵀ]` for `u` uniform on the box `[lo, hi]^d`, by the
/// midpoint rule with `n` points per axis. `W` is the unresolved part of the
/// potential.
pub fn quadrature_covariance<P: Potential + ?Sized>(unresolved: &P, delta: f64, lo: f64, hi: f64, n: usize) -> DMatrix<f64> {
    let d = unresolved.dim();
    let h = (hi - lo) / n as f64;
    let total = n.pow(d as u32);
    let mut acc = DMatrix::<f64>::zeros(d, d);
    let mut q = vec![0.0; d];
    let mut g = vec![0.0; d];
    for k in 0..total {
        let mut r = k;
        for x in q.iter_mut() {
            *x = lo + ((r % n) as f64 + 0.5) * h;
            r /= n;
        }
        unresolved.gradient(&q, &mut g);
        for i in 0..d {
            for j in 0..d {
                acc[(i, j)] += g[i] * g[j];
            }
        }
    }
    acc * (delta / total as f64)
}
