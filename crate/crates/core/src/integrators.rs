//! Time steppers: the damped (dissipative) Störmer–Verlet scheme, plain
//! leapfrog, and a splitting integrator for kinetic Langevin dynamics.
//!
//! The damped scheme with step `δ`, mass `M` and friction `Γ` reads
//!
//! ```text
//! q_{n+1/2} = q_n + (δ/2) M⁻¹ p_n
//! p_{n+1}   = exp(−Γ M⁻¹ δ) p_n − δ ∇V(q_{n+1/2})
//! q_{n+1}   = q_{n+1/2} + (δ/2) M⁻¹ p_{n+1}
//! ```
//!
//! and costs exactly one gradient evaluation per step.

use std::io::Write;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{SampleMeta, SampleSet};
use crate::linalg::{self, SmallMat};
use crate::potentials::Potential;
use crate::rng;
use crate::{Error, Result};

/// Positions beyond this norm count as a divergence.
pub const DIVERGENCE_RADIUS: f64 = 1e8;

/// Stored samples are capped at roughly this many when no stride is given.
pub const DEFAULT_SAMPLE_CAP: u64 = 4_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl State {
    pub fn new(q: Vec<f64>, p: Vec<f64>) -> Self {
        assert_eq!(q.len(), p.len(), "q and p must have the same dimension");
        State { q, p }
    }

    pub fn at_rest(q: Vec<f64>) -> Self {
        let p = vec![0.0; q.len()];
        State { q, p }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(&self.p).all(|x| x.is_finite())
    }
}

/// Restarts the momentum when the damped map gets captured by a stable
/// fixed point or short periodic orbit.
///
/// At large steps the deterministic map can fall into an attracting cycle
/// where `|p|` collapses and sampling stops. The guard watches the mean of
/// `|p|²` over consecutive windows; a window whose mean drops below
/// `ratio` times the long-run mean is a stall. Samples are committed with a
/// delay of two windows, so the lead-in to a stall is discarded, and the
/// momentum is redrawn from a normal with the long-run per-coordinate
/// variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StallGuard {
    pub window: usize,
    pub ratio: f64,
}

impl Default for StallGuard {
    fn default() -> Self {
        StallGuard { window: 2000, ratio: 1e-2 }
    }
}

/// Explicit white noise `Σ dW` added to the momentum kick, `z = ΣΣᵀ`.
///
/// Turns the damped scheme into an Euler-type discretization of the
/// stochastic Langevin system; used to validate the covariance estimator
/// against a known noise level.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectedNoise {
    pub z: DMatrix<f64>,
}

/// Which momentum is handed to the sample sink after each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentumSample {
    /// `p_{n+1}` as produced by the step.
    #[default]
    Endpoint,
    /// `(p_n + p_{n+1})/2 = M (q_{n+1} − q_n)/δ`. Its variance matches the
    /// configurational temperature of the scheme to `O(δ⁴)` on quadratic
    /// wells, while `var(p_{n+1})` is inflated by `1/(1 − δ²ω²/4)`.
    StepAverage,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub delta: f64,
    pub mass: DMatrix<f64>,
    pub friction: DMatrix<f64>,
    pub n_steps: u64,
    pub burn_in: u64,
    /// Keep every `subsample`-th post-burn-in state; `None` picks the
    /// smallest stride that stores at most [`DEFAULT_SAMPLE_CAP`] samples.
    pub subsample: Option<u64>,
    pub seed: u64,
    pub stall_guard: Option<StallGuard>,
    pub injected_noise: Option<InjectedNoise>,
    pub momentum: MomentumSample,
}

impl SimConfig {
    /// Unit mass, scalar friction `gamma`, 10% burn-in.
    pub fn new(dim: usize, delta: f64, gamma: f64, n_steps: u64) -> Self {
        SimConfig {
            delta,
            mass: DMatrix::identity(dim, dim),
            friction: DMatrix::identity(dim, dim) * gamma,
            n_steps,
            burn_in: n_steps / 10,
            subsample: None,
            seed: 0,
            stall_guard: None,
            injected_noise: None,
            momentum: MomentumSample::Endpoint,
        }
    }

    pub fn dim(&self) -> usize {
        self.mass.nrows()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_subsample(mut self, stride: u64) -> Self {
        self.subsample = Some(stride);
        self
    }

    pub fn with_burn_in(mut self, burn_in: u64) -> Self {
        self.burn_in = burn_in;
        self
    }

    pub fn stride(&self) -> u64 {
        self.subsample.unwrap_or_else(|| (self.n_steps - self.burn_in).div_ceil(DEFAULT_SAMPLE_CAP).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.mass.nrows();
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::config(format!("delta must be positive and finite, got {}", self.delta)));
        }
        if d == 0 || !self.mass.is_square() {
            return Err(Error::config("mass must be a non-empty square matrix"));
        }
        if !linalg::is_symmetric(&self.mass, 1e-12) || linalg::min_eigenvalue(&self.mass) <= 0.0 {
            return Err(Error::config("mass must be symmetric positive definite"));
        }
        if self.friction.shape() != (d, d) {
            return Err(Error::config("friction and mass dimensions differ"));
        }
        if !linalg::is_symmetric(&self.friction, 1e-12) || linalg::min_eigenvalue(&self.friction) < -1e-12 {
            return Err(Error::config("friction must be symmetric positive semidefinite"));
        }
        if self.burn_in >= self.n_steps {
            return Err(Error::config(format!("burn_in ({}) must be smaller than n_steps ({})", self.burn_in, self.n_steps)));
        }
        if self.subsample == Some(0) {
            return Err(Error::config("subsample must be at least 1"));
        }
        if let Some(g) = &self.stall_guard {
            if g.window == 0 || !(g.ratio > 0.0 && g.ratio < 1.0) {
                return Err(Error::config("stall guard needs window >= 1 and 0 < ratio < 1"));
            }
        }
        if let Some(n) = &self.injected_noise {
            if n.z.shape() != (d, d) || !linalg::is_symmetric(&n.z, 1e-12) || linalg::min_eigenvalue(&n.z) < -1e-12 {
                return Err(Error::config("injected noise covariance must be symmetric PSD with the mass dimension"));
            }
        }
        Ok(())
    }
}

/// Step factors that depend only on the configuration.
#[derive(Debug, Clone)]
pub struct PrecomputedStep {
    pub delta: f64,
    /// `M⁻¹`
    pub mass_inv: SmallMat,
    /// `(δ/2) M⁻¹`
    pub half_mass_inv_delta: SmallMat,
    /// `exp(−Γ M⁻¹ δ)`
    pub damp_factor: SmallMat,
}

/// Builds the step factors; fails when the mass is not positive definite.
pub fn precompute(config: &SimConfig) -> Result<PrecomputedStep> {
    let d = config.dim();
    if !linalg::is_symmetric(&config.mass, 1e-12) || linalg::min_eigenvalue(&config.mass) <= 0.0 {
        return Err(Error::config("mass must be symmetric positive definite"));
    }
    let minv = config.mass.clone().try_inverse().ok_or_else(|| Error::config("mass matrix is singular"))?;
    let minv = linalg::symmetrize(&minv);
    let damp = if config.friction.iter().all(|&x| x == 0.0) {
        DMatrix::identity(d, d)
    } else {
        linalg::expm(&(-(&config.friction * &minv) * config.delta))
    };
    Ok(PrecomputedStep {
        delta: config.delta,
        half_mass_inv_delta: SmallMat::from_matrix(&(&minv * (0.5 * config.delta))),
        mass_inv: SmallMat::from_matrix(&minv),
        damp_factor: SmallMat::from_matrix(&damp),
    })
}

/// Damped Verlet stepper with its own scratch buffers.
pub struct DampedVerlet {
    pre: PrecomputedStep,
    grad: Vec<f64>,
    tmp: Vec<f64>,
}

impl DampedVerlet {
    pub fn new(pre: PrecomputedStep) -> Self {
        let d = pre.mass_inv.dim();
        DampedVerlet { pre, grad: vec![0.0; d], tmp: vec![0.0; d] }
    }

    pub fn from_config(config: &SimConfig) -> Result<Self> {
        Ok(Self::new(precompute(config)?))
    }

    pub fn precomputed(&self) -> &PrecomputedStep {
        &self.pre
    }

    /// Advances `(q, p)` in place by one step.
    #[inline]
    pub fn step<P: Potential + ?Sized>(&mut self, oracle: &P, q: &mut [f64], p: &mut [f64]) {
        let pre = &self.pre;
        pre.half_mass_inv_delta.apply_add(1.0, p, q);
        oracle.gradient(q, &mut self.grad);
        if pre.damp_factor.is_identity() {
            for (pi, gi) in p.iter_mut().zip(&self.grad) {
                *pi -= pre.delta * gi;
            }
        } else {
            pre.damp_factor.apply(p, &mut self.tmp);
            for ((pi, ti), gi) in p.iter_mut().zip(&self.tmp).zip(&self.grad) {
                *pi = ti - pre.delta * gi;
            }
        }
        pre.half_mass_inv_delta.apply_add(1.0, p, q);
    }
}

/// One damped Verlet step from `state`.
///
/// Fails with a divergence error (step index 0) when the new state is not
/// finite.
pub fn verlet_step<P: Potential + ?Sized>(state: &State, oracle: &P, pre: &PrecomputedStep) -> Result<State> {
    let mut stepper = DampedVerlet::new(pre.clone());
    let mut next = state.clone();
    stepper.step(oracle, &mut next.q, &mut next.p);
    if !next.is_finite() {
        return Err(Error::Divergence { step: 0, last_q: state.q.clone(), last_p: state.p.clone() });
    }
    Ok(next)
}

/// One leapfrog step (the damped step with `Γ = 0`).
pub fn hamiltonian_step<P: Potential + ?Sized>(state: &State, oracle: &P, delta: f64, mass: &DMatrix<f64>) -> Result<State> {
    let d = state.dim();
    let mut config = SimConfig::new(d, delta, 0.0, 2);
    config.mass = mass.clone();
    verlet_step(state, oracle, &precompute(&config)?)
}

/// Receives post-burn-in samples from [`simulate_damped_into`].
pub trait SampleSink {
    fn push(&mut self, q: &[f64], p: &[f64]);
}

impl SampleSink for SampleSet {
    fn push(&mut self, q: &[f64], p: &[f64]) {
        self.push_sample(q, p);
    }
}

/// Summary of a damped run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub steps: u64,
    pub stored: u64,
    pub stride: u64,
    /// Momentum refreshes triggered by the stall guard.
    pub restarts: u64,
    pub final_q_norm: f64,
}

fn check_state(step: u64, q: &[f64], p: &[f64], prev_q: &[f64], prev_p: &[f64]) -> Result<()> {
    let qn2: f64 = q.iter().map(|x| x * x).sum();
    let pn2: f64 = p.iter().map(|x| x * x).sum();
    if !(qn2 <= DIVERGENCE_RADIUS * DIVERGENCE_RADIUS) || !pn2.is_finite() {
        return Err(Error::Divergence { step, last_q: prev_q.to_vec(), last_p: prev_p.to_vec() });
    }
    Ok(())
}

struct Pending {
    q: Vec<f64>,
    p: Vec<f64>,
    count: usize,
}

/// Runs the damped scheme and feeds post-burn-in samples (every
/// `stride`-th step) to `sink`.
pub fn simulate_damped_into<P, S>(oracle: &P, config: &SimConfig, init: &State, sink: &mut S) -> Result<RunStats>
where
    P: Potential + ?Sized,
    S: SampleSink + ?Sized,
{
    config.validate()?;
    let d = config.dim();
    if oracle.dim() != d || init.dim() != d {
        return Err(Error::config(format!("dimension mismatch: oracle {}, config {}, initial state {}", oracle.dim(), d, init.dim())));
    }
    if !init.is_finite() {
        return Err(Error::config("initial state is not finite"));
    }
    let mut stepper = DampedVerlet::from_config(config)?;
    let stride = config.stride();
    let mut q = init.q.clone();
    let mut p = init.p.clone();
    let mut prev_q = q.clone();
    let mut prev_p = p.clone();
    let mut stats = RunStats { stride, ..RunStats::default() };

    let noise = match &config.injected_noise {
        Some(n) => Some(linalg::psd_factor(&n.z)?.map(|x| x * config.delta.sqrt())),
        None => None,
    };
    let noise = noise.as_ref().map(SmallMat::from_matrix);
    let mut noise_rng = rng::stream(config.seed, "injected-noise", 0);
    let mut xi = vec![0.0; d];
    let average = config.momentum == MomentumSample::StepAverage;
    let mut rec = vec![0.0; d];

    let guard = config.stall_guard;
    let mut guard_rng = rng::stream(config.seed, "stall-guard", 0);
    let window = guard.map_or(0, |g| g.window);
    let mut win_p2 = 0.0;
    let mut win_len = 0usize;
    let mut healthy_p2 = vec![0.0; d];
    let mut healthy_n = 0u64;
    let mut cooldown = 0usize;
    // Committed with a delay of two windows when the guard is active.
    let mut pending: std::collections::VecDeque<Pending> = std::collections::VecDeque::new();
    let mut current = Pending { q: Vec::new(), p: Vec::new(), count: 0 };
    let mut block_p2 = vec![0.0; d];

    for n in 0..config.n_steps {
        prev_q.copy_from_slice(&q);
        prev_p.copy_from_slice(&p);
        stepper.step(oracle, &mut q, &mut p);
        if let Some(l) = &noise {
            for x in xi.iter_mut() {
                *x = noise_rng.sample(StandardNormal);
            }
            l.apply_add(1.0, &xi, &mut p);
        }
        check_state(n + 1, &q, &p, &prev_q, &prev_p)?;

        let keep = n >= config.burn_in && (n - config.burn_in) % stride == 0;
        if keep {
            for i in 0..d {
                rec[i] = if average { 0.5 * (prev_p[i] + p[i]) } else { p[i] };
            }
        }
        let Some(g) = guard else {
            if keep {
                sink.push(&q, &rec);
                stats.stored += 1;
            }
            continue;
        };

        let p2: f64 = p.iter().map(|x| x * x).sum();
        win_p2 += p2;
        win_len += 1;
        for (b, x) in block_p2.iter_mut().zip(&p) {
            *b += x * x;
        }
        if keep {
            current.q.extend_from_slice(&q);
            current.p.extend_from_slice(&rec);
            current.count += 1;
        }
        if win_len < window {
            continue;
        }
        let mean_p2 = win_p2 / win_len as f64;
        let long_run = healthy_p2.iter().sum::<f64>() / healthy_n.max(1) as f64;
        let stalled = cooldown == 0 && healthy_n >= 2 * window as u64 && mean_p2 < g.ratio * long_run;
        cooldown = cooldown.saturating_sub(1);
        if stalled {
            stats.restarts += 1;
            pending.clear();
            current = Pending { q: Vec::new(), p: Vec::new(), count: 0 };
            for (i, x) in p.iter_mut().enumerate() {
                let var = healthy_p2[i] / healthy_n as f64;
                let z: f64 = guard_rng.sample(StandardNormal);
                *x = z * var.sqrt();
            }
            cooldown = 1;
        } else {
            for (h, b) in healthy_p2.iter_mut().zip(&block_p2) {
                *h += b;
            }
            healthy_n += win_len as u64;
            pending.push_back(std::mem::replace(&mut current, Pending { q: Vec::new(), p: Vec::new(), count: 0 }));
            while pending.len() > 2 {
                let block = pending.pop_front().expect("non-empty");
                for i in 0..block.count {
                    sink.push(&block.q[i * d..(i + 1) * d], &block.p[i * d..(i + 1) * d]);
                }
                stats.stored += block.count as u64;
            }
        }
        win_p2 = 0.0;
        win_len = 0;
        block_p2.iter_mut().for_each(|b| *b = 0.0);
    }
    if guard.is_some() {
        pending.push_back(current);
        for block in pending {
            for i in 0..block.count {
                sink.push(&block.q[i * d..(i + 1) * d], &block.p[i * d..(i + 1) * d]);
            }
            stats.stored += block.count as u64;
        }
    }
    stats.steps = config.n_steps;
    stats.final_q_norm = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(stats)
}

/// Runs the damped scheme and collects the post-burn-in samples.
pub fn simulate_damped<P: Potential + ?Sized>(oracle: &P, config: &SimConfig, init: &State) -> Result<SampleSet> {
    let d = config.dim();
    let stride = config.stride();
    let expected = (config.n_steps.saturating_sub(config.burn_in)).div_ceil(stride);
    let mut set = SampleSet::with_capacity(d, expected as usize);
    let stats = simulate_damped_into(oracle, config, init, &mut set)?;
    set.delta = config.delta;
    set.meta = SampleMeta {
        n_steps: config.n_steps,
        burn_in: config.burn_in,
        stride,
        seed: config.seed,
        restarts: stats.restarts,
        diverged: false,
    };
    Ok(set)
}

/// Splitting integrator for `dq = M⁻¹p dt, dp = −∇U dt − ΓM⁻¹p dt + noise`
/// at inverse temperature `β̂`: half drift, kick, exact Ornstein–Uhlenbeck
/// momentum refresh, half drift.
///
/// The refresh is `p ← D p + ξ` with `D = exp(−ΓM⁻¹δ)` and
/// `ξ ~ N(0, (M − D M Dᵀ)/β̂)`.
#[derive(Debug, Clone)]
pub struct LangevinIntegrator {
    pub delta: f64,
    pub beta_hat: f64,
    half_drift: SmallMat,
    damp: SmallMat,
    /// Cholesky-type factor of the refresh covariance.
    noise: SmallMat,
    zero_noise: bool,
    grad: Vec<f64>,
    tmp: Vec<f64>,
    kicked: Vec<f64>,
    z: Vec<f64>,
}

impl LangevinIntegrator {
    pub fn new(delta: f64, mass: &DMatrix<f64>, friction: &DMatrix<f64>, beta_hat: f64) -> Result<Self> {
        if !(beta_hat > 0.0 && beta_hat.is_finite()) {
            return Err(Error::config(format!("beta_hat must be positive, got {beta_hat}")));
        }
        if !linalg::is_symmetric(friction, 1e-12) || linalg::min_eigenvalue(friction) < -1e-12 {
            return Err(Error::config("friction must be symmetric positive semidefinite"));
        }
        let d = mass.nrows();
        let mut config = SimConfig::new(d, delta, 0.0, 2);
        config.mass = mass.clone();
        config.friction = friction.clone();
        config.validate()?;
        let pre = precompute(&config)?;
        let dm = pre.damp_factor.to_matrix();
        let cov = (mass - &dm * mass * dm.transpose()) / beta_hat;
        let zero_noise = friction.iter().all(|&x| x == 0.0);
        let factor = if zero_noise { DMatrix::zeros(d, d) } else { linalg::psd_factor(&linalg::symmetrize(&cov))? };
        Ok(LangevinIntegrator {
            delta,
            beta_hat,
            half_drift: pre.half_mass_inv_delta,
            damp: pre.damp_factor,
            noise: SmallMat::from_matrix(&factor),
            zero_noise,
            grad: vec![0.0; d],
            tmp: vec![0.0; d],
            kicked: vec![0.0; d],
            z: vec![0.0; d],
        })
    }

    pub fn dim(&self) -> usize {
        self.grad.len()
    }

    pub fn damp_factor(&self) -> &SmallMat {
        &self.damp
    }

    /// Factor `L` with `L Lᵀ` equal to the refresh covariance.
    pub fn noise_factor(&self) -> &SmallMat {
        &self.noise
    }

    /// One step drawing the refresh noise from `rng`.
    pub fn step<P: Potential + ?Sized, R: Rng + ?Sized>(&mut self, oracle: &P, q: &mut [f64], p: &mut [f64], rng: &mut R) {
        if self.zero_noise {
            self.step_with_xi(oracle, q, p, None);
            return;
        }
        let mut z = std::mem::take(&mut self.z);
        for x in z.iter_mut() {
            *x = rng.sample(StandardNormal);
        }
        let mut xi = std::mem::take(&mut self.tmp);
        self.noise.apply(&z, &mut xi);
        self.step_with_xi(oracle, q, p, Some(&xi));
        self.z = z;
        self.tmp = xi;
    }

    /// One step with an explicit refresh increment `xi` (`None` means zero).
    pub fn step_with_xi<P: Potential + ?Sized>(&mut self, oracle: &P, q: &mut [f64], p: &mut [f64], xi: Option<&[f64]>) {
        self.half_drift.apply_add(1.0, p, q);
        oracle.gradient(q, &mut self.grad);
        if self.damp.is_identity() {
            for (pi, gi) in p.iter_mut().zip(&self.grad) {
                *pi -= self.delta * gi;
            }
        } else {
            for ((k, pi), gi) in self.kicked.iter_mut().zip(p.iter()).zip(&self.grad) {
                *k = pi - self.delta * gi;
            }
            self.damp.apply(&self.kicked, p);
        }
        if let Some(xi) = xi {
            for (pi, x) in p.iter_mut().zip(xi) {
                *pi += x;
            }
        }
        self.half_drift.apply_add(1.0, p, q);
    }
}

/// One Langevin step from `state`.
pub fn langevin_step<P: Potential + ?Sized, R: Rng + ?Sized>(
    state: &State,
    oracle: &P,
    integrator: &mut LangevinIntegrator,
    rng: &mut R,
) -> Result<State> {
    let mut next = state.clone();
    integrator.step(oracle, &mut next.q, &mut next.p, rng);
    if !next.is_finite() {
        return Err(Error::Divergence { step: 0, last_q: state.q.clone(), last_p: state.p.clone() });
    }
    Ok(next)
}

/// Writes a trajectory as CSV with columns `t, q_1..q_d, p_1..p_d`.
///
/// `qs` and `ps` are row-major with `dim` entries per time point.
pub fn write_trajectory_csv<W: Write>(mut w: W, times: &[f64], qs: &[f64], ps: &[f64], dim: usize) -> std::io::Result<()> {
    let mut header = String::from("t");
    for i in 1..=dim {
        header.push_str(&format!(",q_{i}"));
    }
    for i in 1..=dim {
        header.push_str(&format!(",p_{i}"));
    }
    writeln!(w, "{header}")?;
    for (k, t) in times.iter().enumerate() {
        write!(w, "{t}")?;
        for x in &qs[k * dim..(k + 1) * dim] {
            write!(w, ",{x}")?;
        }
        for x in &ps[k * dim..(k + 1) * dim] {
            write!(w, ",{x}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}
