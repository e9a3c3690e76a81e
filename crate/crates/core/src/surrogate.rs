//! Ensembles of Hamiltonian or kinetic-Langevin trajectories and the
//! diagnostics used to compare a surrogate model with the full one: phase
//! portrait, equilibrium histogram, ensemble mean path and normalized ACF.

use std::io::Write;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::histogram::{total_variation, Histogram};
use crate::integrators::{DampedVerlet, LangevinIntegrator, SimConfig, DIVERGENCE_RADIUS};
use crate::linalg::SmallMat;
use crate::potentials::Potential;
use crate::{rng, Error, Result};

/// Per-dimension initial distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "lowercase")]
pub enum InitDist {
    Normal {
        mean: f64,
        sd: f64,
    },
    /// `U(lo, hi) + shift`
    Uniform {
        lo: f64,
        hi: f64,
        #[serde(default)]
        shift: f64,
    },
}

impl InitDist {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            InitDist::Normal { mean, sd } => mean + sd * rng.sample::<f64, _>(StandardNormal),
            InitDist::Uniform { lo, hi, shift } => lo + (hi - lo) * rng.random::<f64>() + shift,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            InitDist::Normal { mean, sd } if mean.is_finite() && sd >= 0.0 && sd.is_finite() => Ok(()),
            InitDist::Uniform { lo, hi, shift } if lo.is_finite() && hi > lo && hi.is_finite() && shift.is_finite() => Ok(()),
            d => Err(Error::config(format!("invalid initial distribution {d:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Hamiltonian,
    Langevin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub n_traj: usize,
    pub horizon: f64,
    pub step: f64,
    /// Store every `store_every`-th step.
    #[serde(default = "one")]
    pub store_every: usize,
    pub init_q: Vec<InitDist>,
    pub init_p: Vec<InitDist>,
    pub seed: u64,
    /// Each model step consumes the Gaussian draws of this many finer steps,
    /// so ensembles run at `step` and `step / noise_substeps` share noise.
    #[serde(default = "one")]
    pub noise_substeps: usize,
    /// Trajectories that leave a fitted potential's domain by more than this
    /// are excluded from the statistics.
    #[serde(default = "default_margin")]
    pub extrapolation_margin: f64,
}

fn one() -> usize {
    1
}

fn default_margin() -> f64 {
    1.0
}

impl EnsembleConfig {
    pub fn dim(&self) -> usize {
        self.init_q.len()
    }

    pub fn n_steps(&self) -> usize {
        (self.horizon / self.step).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_traj == 0 {
            return Err(Error::config("n_traj must be at least 1"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::config("horizon must be positive"));
        }
        if !(self.step > 0.0 && self.step <= self.horizon) {
            return Err(Error::config("step must be positive and at most the horizon"));
        }
        if self.store_every == 0 || self.noise_substeps == 0 {
            return Err(Error::config("store_every and noise_substeps must be at least 1"));
        }
        if self.init_q.is_empty() || self.init_q.len() != self.init_p.len() {
            return Err(Error::config("init_q and init_p need one entry per dimension"));
        }
        if !(self.extrapolation_margin >= 0.0) {
            return Err(Error::config("extrapolation_margin must be non-negative"));
        }
        self.init_q.iter().chain(&self.init_p).try_for_each(InitDist::validate)
    }

    /// A coarse/fine pair from a single-step configuration: the coarse one
    /// runs at `step` and aggregates `substeps` Gaussian draws per step, the
    /// fine one runs at `step / substeps` and stores on the coarse time grid.
    /// With the common seed both are driven by the same Brownian paths.
    /// The horizon is snapped to a whole number of coarse steps so both grids
    /// coincide.
    pub fn coupled(&self, substeps: usize) -> Result<(EnsembleConfig, EnsembleConfig)> {
        if self.noise_substeps != 1 {
            return Err(Error::config("coupled ensembles start from noise_substeps = 1"));
        }
        if substeps == 0 {
            return Err(Error::config("substeps must be at least 1"));
        }
        let horizon = self.n_steps() as f64 * self.step;
        let coarse = EnsembleConfig { noise_substeps: substeps, horizon, ..self.clone() };
        let fine = EnsembleConfig { step: self.step / substeps as f64, store_every: self.store_every * substeps, horizon, ..self.clone() };
        Ok((coarse, fine))
    }
}

/// Friction and temperature of a Langevin ensemble (unit mass).
#[derive(Debug, Clone, PartialEq)]
pub struct LangevinParams {
    pub friction: DMatrix<f64>,
    pub beta_hat: f64,
}

/// Stored trajectories on a common time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub dim: usize,
    pub times: Vec<f64>,
    /// Row-major `(time, coordinate)` positions of each included trajectory.
    pub qs: Vec<Vec<f64>>,
    pub ps: Vec<Vec<f64>>,
    /// Trajectory index of each stored path.
    pub indices: Vec<usize>,
    /// Indices of trajectories dropped for leaving the trusted domain or diverging.
    pub excluded: Vec<usize>,
}

impl Ensemble {
    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn len(&self) -> usize {
        self.qs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.qs.is_empty()
    }

    /// Drops every trajectory whose index is in `drop`.
    pub fn exclude(&mut self, drop: &[usize]) {
        let keep: Vec<bool> = self.indices.iter().map(|i| !drop.contains(i)).collect();
        let mut k = keep.iter();
        self.qs.retain(|_| *k.next().unwrap());
        let mut k = keep.iter();
        self.ps.retain(|_| *k.next().unwrap());
        let mut k = keep.iter();
        self.indices.retain(|_| *k.next().unwrap());
        for &i in drop {
            if !self.excluded.contains(&i) {
                self.excluded.push(i);
            }
        }
        self.excluded.sort_unstable();
    }
}

/// Restricts two ensembles run with the same seed (hence the same initial
/// conditions) to the trajectories included in both.
pub fn retain_common(a: &mut Ensemble, b: &mut Ensemble) {
    let mut drop: Vec<usize> = a.excluded.iter().chain(&b.excluded).copied().collect();
    drop.sort_unstable();
    drop.dedup();
    a.exclude(&drop);
    b.exclude(&drop);
}

enum Stepper {
    Hamiltonian(DampedVerlet),
    Langevin {
        integrator: LangevinIntegrator,
        /// Fine-step damping and noise factor for aggregated draws.
        fine: Option<(SmallMat, SmallMat)>,
    },
}

fn make_stepper(mode: Mode, cfg: &EnsembleConfig, langevin: Option<&LangevinParams>) -> Result<Stepper> {
    let d = cfg.dim();
    match mode {
        Mode::Hamiltonian => Ok(Stepper::Hamiltonian(DampedVerlet::from_config(&SimConfig::new(d, cfg.step, 0.0, 2))?)),
        Mode::Langevin => {
            let lp = langevin.ok_or_else(|| Error::config("langevin mode needs friction and beta_hat"))?;
            let mass = DMatrix::identity(d, d);
            let integrator = LangevinIntegrator::new(cfg.step, &mass, &lp.friction, lp.beta_hat)?;
            let fine = if cfg.noise_substeps > 1 {
                let f = LangevinIntegrator::new(cfg.step / cfg.noise_substeps as f64, &mass, &lp.friction, lp.beta_hat)?;
                Some((f.damp_factor().clone(), f.noise_factor().clone()))
            } else {
                None
            };
            Ok(Stepper::Langevin { integrator, fine })
        }
    }
}

struct TrajectoryOut {
    q: Vec<f64>,
    p: Vec<f64>,
    ok: bool,
}

fn run_one<P: Potential + ?Sized>(
    oracle: &P,
    mode: Mode,
    cfg: &EnsembleConfig,
    langevin: Option<&LangevinParams>,
    domain: Option<&[(f64, f64)]>,
    index: usize,
) -> Result<TrajectoryOut> {
    let d = cfg.dim();
    let mut stepper = make_stepper(mode, cfg, langevin)?;
    let mut init_rng = rng::stream(cfg.seed, "init", index as u64);
    let mut q: Vec<f64> = cfg.init_q.iter().map(|x| x.sample(&mut init_rng)).collect();
    let mut p: Vec<f64> = cfg.init_p.iter().map(|x| x.sample(&mut init_rng)).collect();
    let mut noise_rng = rng::stream(cfg.seed, "noise", index as u64);
    let n_steps = cfg.n_steps();
    let n_store = n_steps / cfg.store_every + 1;
    let mut qs = Vec::with_capacity(n_store * d);
    let mut ps = Vec::with_capacity(n_store * d);
    qs.extend_from_slice(&q);
    ps.extend_from_slice(&p);
    let mut z = vec![0.0; d];
    let mut lz = vec![0.0; d];
    let mut acc = vec![0.0; d];
    let mut tmp = vec![0.0; d];
    let outside = |q: &[f64]| -> f64 {
        domain.map_or(0.0, |dom| q.iter().zip(dom).map(|(x, &(lo, hi))| (x - x.clamp(lo, hi)).powi(2)).sum::<f64>().sqrt())
    };
    for n in 1..=n_steps {
        match &mut stepper {
            Stepper::Hamiltonian(v) => v.step(oracle, &mut q, &mut p),
            Stepper::Langevin { integrator, fine: None } => integrator.step(oracle, &mut q, &mut p, &mut noise_rng),
            Stepper::Langevin { integrator, fine: Some((damp, factor)) } => {
                acc.iter_mut().for_each(|a| *a = 0.0);
                for _ in 0..cfg.noise_substeps {
                    for x in z.iter_mut() {
                        *x = noise_rng.sample(StandardNormal);
                    }
                    factor.apply(&z, &mut lz);
                    damp.apply(&acc, &mut tmp);
                    for i in 0..d {
                        acc[i] = tmp[i] + lz[i];
                    }
                }
                integrator.step_with_xi(oracle, &mut q, &mut p, Some(&acc));
            }
        }
        let qn2: f64 = q.iter().map(|x| x * x).sum();
        if !(qn2 <= DIVERGENCE_RADIUS * DIVERGENCE_RADIUS) || p.iter().any(|x| !x.is_finite()) || outside(&q) > cfg.extrapolation_margin {
            return Ok(TrajectoryOut { q: qs, p: ps, ok: false });
        }
        if n % cfg.store_every == 0 {
            qs.extend_from_slice(&q);
            ps.extend_from_slice(&p);
        }
    }
    Ok(TrajectoryOut { q: qs, p: ps, ok: true })
}

/// Runs `cfg.n_traj` independent trajectories in parallel.
///
/// Trajectory `ℓ` draws its initial condition and noise from streams derived
/// from `(seed, ℓ)`, so results do not depend on scheduling. In Hamiltonian
/// mode `langevin` is ignored.
pub fn run_ensemble<P: Potential + ?Sized>(
    oracle: &P,
    mode: Mode,
    cfg: &EnsembleConfig,
    langevin: Option<&LangevinParams>,
) -> Result<Ensemble> {
    cfg.validate()?;
    let d = cfg.dim();
    if oracle.dim() != d {
        return Err(Error::config(format!("oracle dimension {} but initial distribution dimension {d}", oracle.dim())));
    }
    make_stepper(mode, cfg, langevin)?;
    let domain = oracle.domain();
    let outs: Vec<Result<TrajectoryOut>> =
        (0..cfg.n_traj).into_par_iter().map(|l| run_one(oracle, mode, cfg, langevin, domain.as_deref(), l)).collect();
    let n_steps = cfg.n_steps();
    let dt = cfg.step * cfg.store_every as f64;
    let times: Vec<f64> = (0..=n_steps / cfg.store_every).map(|k| k as f64 * dt).collect();
    let mut ens = Ensemble { dim: d, times, qs: Vec::new(), ps: Vec::new(), indices: Vec::new(), excluded: Vec::new() };
    for (l, out) in outs.into_iter().enumerate() {
        let out = out?;
        if out.ok {
            ens.qs.push(out.q);
            ens.ps.push(out.p);
            ens.indices.push(l);
        } else {
            ens.excluded.push(l);
        }
    }
    Ok(ens)
}

/// Pointwise ensemble average of equal-length trajectories (row-major,
/// `dim` entries per time point).
pub fn mean_trajectory<T: AsRef<[f64]>>(trajectories: &[T], dim: usize) -> Result<Vec<f64>> {
    let first = trajectories.first().ok_or_else(|| Error::InsufficientData("no trajectories".into()))?;
    let len = first.as_ref().len();
    if dim == 0 || len % dim != 0 || trajectories.iter().any(|t| t.as_ref().len() != len) {
        return Err(Error::Contract("trajectories must share one time grid".into()));
    }
    let mut mean = vec![0.0; len];
    for t in trajectories {
        for (m, x) in mean.iter_mut().zip(t.as_ref()) {
            *m += x;
        }
    }
    let n = trajectories.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

/// Normalized autocorrelation of each coordinate for lags `0..=max_lag`
/// (in stored steps), pooled over time and ensemble members.
///
/// Time averages start at index `start`; for lag `n_τ` they run up to
/// `N − n_τ`. Returns `acf[coordinate][lag]`.
pub fn normalized_acf<T: AsRef<[f64]>>(trajectories: &[T], dim: usize, start: usize, max_lag: usize) -> Result<Vec<Vec<f64>>> {
    let first = trajectories.first().ok_or_else(|| Error::InsufficientData("no trajectories".into()))?;
    let len = first.as_ref().len();
    if dim == 0 || len % dim != 0 || trajectories.iter().any(|t| t.as_ref().len() != len) {
        return Err(Error::Contract("trajectories must share one time grid".into()));
    }
    let n = len / dim;
    if start + max_lag >= n {
        return Err(Error::config(format!("max_lag {max_lag} from index {start} does not fit {n} time points")));
    }
    let mut out = Vec::with_capacity(dim);
    for c in 0..dim {
        let at = |t: &T, k: usize| t.as_ref()[k * dim + c];
        let window = (n - start) as f64 * trajectories.len() as f64;
        let mean: f64 = trajectories.iter().map(|t| (start..n).map(|k| at(t, k)).sum::<f64>()).sum::<f64>() / window;
        let cov: f64 = trajectories.iter().map(|t| (start..n).map(|k| (at(t, k) - mean).powi(2)).sum::<f64>()).sum::<f64>() / window;
        if !(cov > 0.0) {
            return Err(Error::Degenerate(format!("coordinate {} has zero covariance", c + 1)));
        }
        let mut acf = Vec::with_capacity(max_lag + 1);
        for lag in 0..=max_lag {
            let end = n - lag;
            let w = (end - start) as f64 * trajectories.len() as f64;
            let (m1, m2) = if lag == 0 {
                (mean, mean)
            } else {
                (
                    trajectories.iter().map(|t| (start..end).map(|k| at(t, k)).sum::<f64>()).sum::<f64>() / w,
                    trajectories.iter().map(|t| (start..end).map(|k| at(t, k + lag)).sum::<f64>()).sum::<f64>() / w,
                )
            };
            let num: f64 =
                trajectories.iter().map(|t| (start..end).map(|k| (at(t, k) - m1) * (at(t, k + lag) - m2)).sum::<f64>()).sum::<f64>() / w;
            acf.push(if lag == 0 { 1.0 } else { num / cov });
        }
        out.push(acf);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagnosticsOptions {
    /// ACF time averages start after this fraction of the horizon.
    pub acf_start_frac: f64,
    /// Largest ACF lag, in time units.
    pub max_lag_time: f64,
    /// Equilibrium histogram pools positions with `t ≥ eq_start_frac · T`.
    pub eq_start_frac: f64,
    pub eq_bins: usize,
    /// Histogram range per dimension; `None` uses the padded pooled range.
    pub eq_range: Option<Vec<(f64, f64)>>,
}

impl Default for DiagnosticsOptions {
    fn default() -> Self {
        DiagnosticsOptions { acf_start_frac: 0.2, max_lag_time: 10.0, eq_start_frac: 0.5, eq_bins: 20, eq_range: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub dim: usize,
    pub times: Vec<f64>,
    /// Row-major `(time, coordinate)` ensemble mean.
    pub mean_path: Vec<f64>,
    pub lags: Vec<f64>,
    /// `acf[coordinate][lag]`
    pub acf: Vec<Vec<f64>>,
    pub equilibrium: Histogram,
    /// First included trajectory as `(q, p)` rows.
    pub phase_q: Vec<f64>,
    pub phase_p: Vec<f64>,
    pub n_included: usize,
    pub n_excluded: usize,
}

/// Pooled late-time positions of an ensemble.
pub fn pooled_positions(ens: &Ensemble, start_frac: f64) -> Vec<f64> {
    let t_end = *ens.times.last().unwrap_or(&0.0);
    let k0 = ens.times.iter().position(|&t| t >= start_frac * t_end - 1e-12).unwrap_or(0);
    ens.qs.iter().flat_map(|q| q[k0 * ens.dim..].iter().copied()).collect()
}

/// Diagnostics of an ensemble.
pub fn diagnostics(ens: &Ensemble, opts: &DiagnosticsOptions) -> Result<DiagnosticsReport> {
    if ens.is_empty() {
        return Err(Error::InsufficientData(format!("all {} trajectories were excluded", ens.excluded.len())));
    }
    let d = ens.dim;
    let n = ens.n_times();
    let dt = if n > 1 { ens.times[1] - ens.times[0] } else { 1.0 };
    let start = ((opts.acf_start_frac * (n - 1) as f64).floor() as usize).min(n - 2);
    let max_lag = ((opts.max_lag_time / dt).round() as usize).clamp(1, n - 1 - start);
    let mean_path = mean_trajectory(&ens.qs, d)?;
    let acf = normalized_acf(&ens.qs, d, start, max_lag)?;
    let pooled = pooled_positions(ens, opts.eq_start_frac);
    let axes: Vec<(f64, f64, usize)> = (0..d)
        .map(|j| {
            let (lo, hi) = match &opts.eq_range {
                Some(r) => r[j],
                None => {
                    let (lo, hi) =
                        pooled.iter().skip(j).step_by(d).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
                    let pad = if hi > lo { 0.01 * (hi - lo) } else { 0.5 };
                    (lo - pad, hi + pad)
                }
            };
            (lo, hi, opts.eq_bins)
        })
        .collect();
    let equilibrium = Histogram::from_points(&pooled, d, &axes)?;
    Ok(DiagnosticsReport {
        dim: d,
        times: ens.times.clone(),
        mean_path,
        lags: (0..=max_lag).map(|k| k as f64 * dt).collect(),
        acf,
        equilibrium,
        phase_q: ens.qs[0].clone(),
        phase_p: ens.ps[0].clone(),
        n_included: ens.len(),
        n_excluded: ens.excluded.len(),
    })
}

/// Diagnostics of two ensembles made comparable: both are restricted to the
/// trajectories included in each, and the equilibrium histograms share the
/// pooled range unless `opts` fixes one.
pub fn paired_diagnostics(a: &mut Ensemble, b: &mut Ensemble, opts: &DiagnosticsOptions) -> Result<(DiagnosticsReport, DiagnosticsReport)> {
    if a.dim != b.dim || a.times.len() != b.times.len() {
        return Err(Error::Contract("paired ensembles need the same dimension and time grid".into()));
    }
    retain_common(a, b);
    let mut opts = opts.clone();
    if opts.eq_range.is_none() {
        let pa = pooled_positions(a, opts.eq_start_frac);
        let pb = pooled_positions(b, opts.eq_start_frac);
        let d = a.dim;
        let range = (0..d)
            .map(|j| {
                let (lo, hi) = pa
                    .iter()
                    .skip(j)
                    .step_by(d)
                    .chain(pb.iter().skip(j).step_by(d))
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
                let pad = if hi > lo { 0.01 * (hi - lo) } else { 0.5 };
                (lo - pad, hi + pad)
            })
            .collect();
        opts.eq_range = Some(range);
    }
    Ok((diagnostics(a, &opts)?, diagnostics(b, &opts)?))
}

/// Discrepancies between two diagnostics reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discrepancy {
    pub mean_path_linf: f64,
    pub mean_path_l2: f64,
    pub acf_linf: f64,
    pub acf_l2: f64,
    pub tv: f64,
    pub warnings: Vec<String>,
}

fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let k = xs.partition_point(|&v| v <= x);
    if k == 0 {
        return ys[0];
    }
    if k >= xs.len() {
        return ys[xs.len() - 1];
    }
    let t = (x - xs[k - 1]) / (xs[k] - xs[k - 1]);
    ys[k - 1] + t * (ys[k] - ys[k - 1])
}

/// `(L∞, RMS)` of `a − b` where `b` is interpolated onto `a`'s grid inside
/// the common range.
fn grid_distance(xa: &[f64], ya: &[f64], xb: &[f64], yb: &[f64]) -> (f64, f64) {
    let hi = xa.last().copied().unwrap_or(0.0).min(xb.last().copied().unwrap_or(0.0));
    let same = xa == xb;
    let (mut linf, mut sum, mut n) = (0.0_f64, 0.0, 0usize);
    for (k, (&x, &y)) in xa.iter().zip(ya).enumerate() {
        if x > hi + 1e-12 {
            break;
        }
        let other = if same { yb[k] } else { interpolate(xb, yb, x) };
        let e = (y - other).abs();
        linf = linf.max(e);
        sum += e * e;
        n += 1;
    }
    (linf, if n > 0 { (sum / n as f64).sqrt() } else { 0.0 })
}

/// Mean-path and ACF distances (maximum over coordinates) and the total
/// variation distance between the equilibrium histograms.
pub fn compare_reports(a: &DiagnosticsReport, b: &DiagnosticsReport) -> Result<Discrepancy> {
    if a.dim != b.dim {
        return Err(Error::Contract("reports of different dimension".into()));
    }
    let d = a.dim;
    let mut warnings = Vec::new();
    if a.times != b.times || a.lags != b.lags {
        warnings.push("time grids differ; second report interpolated onto the first".to_string());
    }
    let (mut mp_inf, mut mp_l2, mut acf_inf, mut acf_l2) = (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
    for c in 0..d {
        let ya: Vec<f64> = a.mean_path.iter().skip(c).step_by(d).copied().collect();
        let yb: Vec<f64> = b.mean_path.iter().skip(c).step_by(d).copied().collect();
        let (i, l) = grid_distance(&a.times, &ya, &b.times, &yb);
        mp_inf = mp_inf.max(i);
        mp_l2 = mp_l2.max(l);
        let (i, l) = grid_distance(&a.lags, &a.acf[c], &b.lags, &b.acf[c]);
        acf_inf = acf_inf.max(i);
        acf_l2 = acf_l2.max(l);
    }
    let tv = total_variation(&a.equilibrium, &b.equilibrium)?;
    if tv >= 1.0 {
        warnings.push("equilibrium histograms have disjoint supports".to_string());
    }
    Ok(Discrepancy { mean_path_linf: mp_inf, mean_path_l2: mp_l2, acf_linf: acf_inf, acf_l2, tv, warnings })
}

impl DiagnosticsReport {
    pub fn write_mean_path_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let d = self.dim;
        let cols: Vec<String> = (1..=d).map(|i| format!("qbar_{i}")).collect();
        writeln!(w, "t,{}", cols.join(","))?;
        for (k, t) in self.times.iter().enumerate() {
            let row: Vec<String> = self.mean_path[k * d..(k + 1) * d].iter().map(|x| x.to_string()).collect();
            writeln!(w, "{t},{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn write_acf_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let cols: Vec<String> = (1..=self.dim).map(|i| format!("acf_{i}")).collect();
        writeln!(w, "tau,{}", cols.join(","))?;
        for (k, tau) in self.lags.iter().enumerate() {
            let row: Vec<String> = self.acf.iter().map(|a| a[k].to_string()).collect();
            writeln!(w, "{tau},{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn write_equilibrium_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        self.equilibrium.write_csv(w)
    }

    pub fn write_phase_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let d = self.dim;
        let q: Vec<String> = (1..=d).map(|i| format!("q_{i}")).collect();
        let p: Vec<String> = (1..=d).map(|i| format!("p_{i}")).collect();
        writeln!(w, "{},{}", q.join(","), p.join(","))?;
        for k in 0..self.phase_q.len() / d {
            let row: Vec<String> =
                self.phase_q[k * d..(k + 1) * d].iter().chain(&self.phase_p[k * d..(k + 1) * d]).map(|x| x.to_string()).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}
