//! Potential oracles and the built-in multiscale test potentials.
//!
//! A [`Potential`] is anything that can report `V(q)` and `∇V(q)` on `R^d`.
//! Built-ins are assembled from analytic terms so that their macroscopic and
//! microscopic components can be evaluated separately; the sampling pipeline
//! itself only ever sees the full potential.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// First-order oracle for a potential on `R^dim`.
///
/// Implementations must be deterministic and safe to call from many threads.
pub trait Potential: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, q: &[f64]) -> f64;

    /// Writes `∇V(q)` into `out` (length `dim`).
    fn gradient(&self, q: &[f64], out: &mut [f64]);

    /// Box on which the potential is trusted, if it is only known there
    /// (fitted potentials); `None` means all of `R^dim`.
    fn domain(&self) -> Option<Vec<(f64, f64)>> {
        None
    }
}

impl<P: Potential + ?Sized> Potential for Arc<P> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn value(&self, q: &[f64]) -> f64 {
        (**self).value(q)
    }
    fn gradient(&self, q: &[f64], out: &mut [f64]) {
        (**self).gradient(q, out)
    }
    fn domain(&self) -> Option<Vec<(f64, f64)>> {
        (**self).domain()
    }
}

impl<P: Potential + ?Sized> Potential for &P {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn value(&self, q: &[f64]) -> f64 {
        (**self).value(q)
    }
    fn gradient(&self, q: &[f64], out: &mut [f64]) {
        (**self).gradient(q, out)
    }
    fn domain(&self) -> Option<Vec<(f64, f64)>> {
        (**self).domain()
    }
}

/// Potential defined by a pair of closures.
pub struct FnPotential<V, G> {
    dim: usize,
    value: V,
    gradient: G,
}

impl<V, G> FnPotential<V, G>
where
    V: Fn(&[f64]) -> f64 + Send + Sync,
    G: Fn(&[f64], &mut [f64]) + Send + Sync,
{
    pub fn new(dim: usize, value: V, gradient: G) -> Self {
        FnPotential { dim, value, gradient }
    }
}

impl<V, G> Potential for FnPotential<V, G>
where
    V: Fn(&[f64]) -> f64 + Send + Sync,
    G: Fn(&[f64], &mut [f64]) + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, q: &[f64]) -> f64 {
        (self.value)(q)
    }
    fn gradient(&self, q: &[f64], out: &mut [f64]) {
        (self.gradient)(q, out)
    }
}

/// `V(q) = |q|^2 / 2` on `R^dim`.
pub fn harmonic(dim: usize) -> impl Potential {
    FnPotential::new(dim, |q: &[f64]| 0.5 * q.iter().map(|x| x * x).sum::<f64>(), |q: &[f64], g: &mut [f64]| g.copy_from_slice(q))
}

/// Analytic building blocks of the built-in potentials.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Term {
    /// q²/2
    HalfSquare,
    /// (q² − 1)²/4
    DoubleWell,
    /// ε sin(q/ε)
    Sine { eps: f64 },
    /// (q − π/2)²/4
    ShiftedQuadratic,
    /// cos(k q)/k with k = i²
    Cosine { k: f64 },
    /// ¼(2x + y − 1)² + (x − y − 1)²
    TiltedQuadratic,
    /// ε (sin(x/ε) + sin((s x + y)/ε))
    SinePair { eps: f64, s: f64 },
    /// 0.1 (V_q + V_m)
    LeveledMullerBrown { xc: f64, yc: f64 },
}

const MB_A: [f64; 4] = [-200.0, -100.0, -170.0, 15.0];
const MB_AX: [f64; 4] = [-1.0, -1.0, -6.5, 0.7];
const MB_BXY: [f64; 4] = [0.0, 0.0, 11.0, 0.6];
const MB_CY: [f64; 4] = [-10.0, -10.0, -6.5, 0.7];
const MB_X0: [f64; 4] = [1.0, 0.0, -0.5, -1.0];
const MB_Y0: [f64; 4] = [0.0, 0.5, 1.5, 1.0];

/// Well-leveling weights of the quadratic added to Müller-Brown.
pub const MB_LEVEL_X: f64 = 35.0136;
pub const MB_LEVEL_Y: f64 = 59.8399;

/// The classical Müller-Brown potential `V_m(x, y)`.
pub fn muller_brown(x: f64, y: f64) -> f64 {
    (0..4)
        .map(|k| {
            let dx = x - MB_X0[k];
            let dy = y - MB_Y0[k];
            MB_A[k] * (MB_AX[k] * dx * dx + MB_BXY[k] * dx * dy + MB_CY[k] * dy * dy).exp()
        })
        .sum()
}

/// Gradient of [`muller_brown`].
pub fn muller_brown_gradient(x: f64, y: f64) -> [f64; 2] {
    let mut g = [0.0; 2];
    for k in 0..4 {
        let dx = x - MB_X0[k];
        let dy = y - MB_Y0[k];
        let e = MB_A[k] * (MB_AX[k] * dx * dx + MB_BXY[k] * dx * dy + MB_CY[k] * dy * dy).exp();
        g[0] += e * (2.0 * MB_AX[k] * dx + MB_BXY[k] * dy);
        g[1] += e * (MB_BXY[k] * dx + 2.0 * MB_CY[k] * dy);
    }
    g
}

impl Term {
    fn value(&self, q: &[f64]) -> f64 {
        match *self {
            Term::HalfSquare => 0.5 * q[0] * q[0],
            Term::DoubleWell => {
                let s = q[0] * q[0] - 1.0;
                0.25 * s * s
            }
            Term::Sine { eps } => eps * (q[0] / eps).sin(),
            Term::ShiftedQuadratic => {
                let s = q[0] - FRAC_PI_2;
                0.25 * s * s
            }
            Term::Cosine { k } => (k * q[0]).cos() / k,
            Term::TiltedQuadratic => {
                let a = 2.0 * q[0] + q[1] - 1.0;
                let b = q[0] - q[1] - 1.0;
                0.25 * a * a + b * b
            }
            Term::SinePair { eps, s } => eps * ((q[0] / eps).sin() + ((s * q[0] + q[1]) / eps).sin()),
            Term::LeveledMullerBrown { xc, yc } => {
                let (x, y) = (q[0], q[1]);
                let vq = MB_LEVEL_X * (x - xc).powi(2) + MB_LEVEL_Y * (y - yc).powi(2);
                0.1 * (vq + muller_brown(x, y))
            }
        }
    }

    /// Adds this term's gradient to `out`.
    #[inline]
    fn add_gradient(&self, q: &[f64], out: &mut [f64]) {
        match *self {
            Term::HalfSquare => out[0] += q[0],
            Term::DoubleWell => out[0] += q[0] * (q[0] * q[0] - 1.0),
            Term::Sine { eps } => out[0] += (q[0] / eps).cos(),
            Term::ShiftedQuadratic => out[0] += 0.5 * (q[0] - FRAC_PI_2),
            Term::Cosine { k } => out[0] -= (k * q[0]).sin(),
            Term::TiltedQuadratic => {
                let a = 2.0 * q[0] + q[1] - 1.0;
                let b = q[0] - q[1] - 1.0;
                out[0] += a + 2.0 * b;
                out[1] += 0.5 * a - 2.0 * b;
            }
            Term::SinePair { eps, s } => {
                let c2 = ((s * q[0] + q[1]) / eps).cos();
                out[0] += (q[0] / eps).cos() + s * c2;
                out[1] += c2;
            }
            Term::LeveledMullerBrown { xc, yc } => {
                let (x, y) = (q[0], q[1]);
                let g = muller_brown_gradient(x, y);
                out[0] += 0.1 * (2.0 * MB_LEVEL_X * (x - xc) + g[0]);
                out[1] += 0.1 * (2.0 * MB_LEVEL_Y * (y - yc) + g[1]);
            }
        }
    }
}

/// Sum of analytic terms; the concrete type behind every built-in.
#[derive(Debug, Clone)]
pub struct TermSum {
    dim: usize,
    terms: Vec<Term>,
}

impl Potential for TermSum {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, q: &[f64]) -> f64 {
        self.terms.iter().map(|t| t.value(q)).sum()
    }

    fn gradient(&self, q: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|g| *g = 0.0);
        for t in &self.terms {
            t.add_gradient(q, out);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BuiltinKind {
    /// q²/2 + ε₁ sin(q/ε₁) + ε₂ sin(q/ε₂)
    Quad3Scale,
    /// (q² − 1)²/4 + ε₁ sin(q/ε₁) + ε₂ sin(q/ε₂)
    DoubleWell3Scale,
    /// (q − π/2)²/4 + Σ_{i ≤ N} cos(i² q)/i²
    CosSum,
    /// Tilted 2D quadratic with an anisotropic sine micro-scale.
    Quad2d,
    /// Leveled Müller-Brown with an anisotropic sine micro-scale.
    MullerBrown2d,
}

impl BuiltinKind {
    pub fn dim(self) -> usize {
        match self {
            BuiltinKind::Quad3Scale | BuiltinKind::DoubleWell3Scale | BuiltinKind::CosSum => 1,
            BuiltinKind::Quad2d | BuiltinKind::MullerBrown2d => 2,
        }
    }

    fn required(self) -> &'static [&'static str] {
        match self {
            BuiltinKind::Quad3Scale | BuiltinKind::DoubleWell3Scale => &["eps1", "eps2"],
            BuiltinKind::CosSum => &["n"],
            BuiltinKind::Quad2d | BuiltinKind::MullerBrown2d => &["eps"],
        }
    }

    fn optional(self) -> &'static [&'static str] {
        match self {
            BuiltinKind::MullerBrown2d => &["xc", "yc"],
            _ => &[],
        }
    }
}

impl fmt::Display for BuiltinKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BuiltinKind::Quad3Scale => "quad3scale",
            BuiltinKind::DoubleWell3Scale => "doublewell3scale",
            BuiltinKind::CosSum => "cossum",
            BuiltinKind::Quad2d => "quad2d",
            BuiltinKind::MullerBrown2d => "mullerbrown2d",
        };
        f.write_str(s)
    }
}

/// Built-in selection plus its named scalar parameters.
///
/// Parameter names: `eps1`, `eps2` (three-scale 1D kinds), `n` (cossum),
/// `eps` (2D kinds), optional `xc`, `yc` (Müller-Brown well center).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuiltinSpec {
    pub kind: BuiltinKind,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl BuiltinSpec {
    pub fn new(kind: BuiltinKind, params: &[(&str, f64)]) -> Self {
        BuiltinSpec { kind, params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect() }
    }

    pub fn quad3scale(eps1: f64, eps2: f64) -> Self {
        Self::new(BuiltinKind::Quad3Scale, &[("eps1", eps1), ("eps2", eps2)])
    }

    pub fn doublewell3scale(eps1: f64, eps2: f64) -> Self {
        Self::new(BuiltinKind::DoubleWell3Scale, &[("eps1", eps1), ("eps2", eps2)])
    }

    pub fn cossum(n: usize) -> Self {
        Self::new(BuiltinKind::CosSum, &[("n", n as f64)])
    }

    pub fn quad2d(eps: f64) -> Self {
        Self::new(BuiltinKind::Quad2d, &[("eps", eps)])
    }

    pub fn mullerbrown2d(eps: f64) -> Self {
        Self::new(BuiltinKind::MullerBrown2d, &[("eps", eps)])
    }

    fn param(&self, name: &str) -> Result<f64> {
        self.params.get(name).copied().ok_or_else(|| Error::config(format!("{}: missing parameter `{name}`", self.kind)))
    }

    pub fn validate(&self) -> Result<()> {
        let kind = self.kind;
        for name in self.params.keys() {
            if !kind.required().contains(&name.as_str()) && !kind.optional().contains(&name.as_str()) {
                return Err(Error::config(format!("{kind}: unknown parameter `{name}`")));
            }
        }
        for (name, v) in &self.params {
            if !v.is_finite() {
                return Err(Error::config(format!("{kind}: parameter `{name}` is not finite")));
            }
        }
        for name in kind.required() {
            self.param(name)?;
        }
        match kind {
            BuiltinKind::Quad3Scale | BuiltinKind::DoubleWell3Scale => {
                let (e1, e2) = (self.param("eps1")?, self.param("eps2")?);
                if !(e2 > 0.0 && e1 > e2) {
                    return Err(Error::config(format!("{kind}: need eps1 > eps2 > 0, got ({e1}, {e2})")));
                }
            }
            BuiltinKind::CosSum => {
                let n = self.param("n")?;
                if n < 0.0 || n.fract() != 0.0 {
                    return Err(Error::config(format!("cossum: `n` must be a non-negative integer, got {n}")));
                }
            }
            BuiltinKind::Quad2d | BuiltinKind::MullerBrown2d => {
                let eps = self.param("eps")?;
                if eps <= 0.0 {
                    return Err(Error::config(format!("{kind}: `eps` must be positive, got {eps}")));
                }
            }
        }
        Ok(())
    }
}

/// A constructed built-in: the full potential plus its scale components
/// `V_0, V_1, ...` (coarsest first).
#[derive(Clone)]
pub struct Builtin {
    pub spec: BuiltinSpec,
    full: TermSum,
    components: Vec<TermSum>,
    /// Müller-Brown middle-well center used by the leveling quadratic.
    pub well_center: Option<[f64; 2]>,
}

impl fmt::Debug for Builtin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Builtin")
            .field("spec", &self.spec)
            .field("components", &self.components.len())
            .field("well_center", &self.well_center)
            .finish()
    }
}

impl Builtin {
    pub fn dim(&self) -> usize {
        self.full.dim
    }

    pub fn full(&self) -> Arc<dyn Potential> {
        Arc::new(self.full.clone())
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    /// Component `V_j` (`j = 0` is the macroscopic part).
    pub fn component(&self, j: usize) -> Arc<dyn Potential> {
        Arc::new(self.components[j].clone())
    }

    /// `U_k = V_0 + ... + V_k`, the effective potential at cutoff `k`.
    pub fn effective(&self, k: usize) -> Arc<dyn Potential> {
        let k = k.min(self.components.len() - 1);
        let terms = self.components[..=k].iter().flat_map(|c| c.terms.iter().copied()).collect();
        Arc::new(TermSum { dim: self.dim(), terms })
    }

    /// Sum of the components finer than cutoff `k` (what large steps turn into noise).
    pub fn unresolved(&self, k: usize) -> Arc<dyn Potential> {
        let terms = self.components[(k + 1).min(self.components.len())..].iter().flat_map(|c| c.terms.iter().copied()).collect();
        Arc::new(TermSum { dim: self.dim(), terms })
    }
}

/// Constructs a built-in potential from its specification.
pub fn make_builtin(spec: &BuiltinSpec) -> Result<Builtin> {
    spec.validate()?;
    let single = |dim: usize, t: Term| TermSum { dim, terms: vec![t] };
    let mut well_center = None;
    let components: Vec<TermSum> = match spec.kind {
        BuiltinKind::Quad3Scale | BuiltinKind::DoubleWell3Scale => {
            let base = if spec.kind == BuiltinKind::Quad3Scale { Term::HalfSquare } else { Term::DoubleWell };
            vec![single(1, base), single(1, Term::Sine { eps: spec.param("eps1")? }), single(1, Term::Sine { eps: spec.param("eps2")? })]
        }
        BuiltinKind::CosSum => {
            let n = spec.param("n")? as usize;
            std::iter::once(single(1, Term::ShiftedQuadratic))
                .chain((1..=n).map(|i| single(1, Term::Cosine { k: (i * i) as f64 })))
                .collect()
        }
        BuiltinKind::Quad2d => vec![single(2, Term::TiltedQuadratic), single(2, Term::SinePair { eps: spec.param("eps")?, s: 1.0 })],
        BuiltinKind::MullerBrown2d => {
            let center = match (spec.params.get("xc"), spec.params.get("yc")) {
                (Some(&xc), Some(&yc)) => [xc, yc],
                (None, None) => muller_brown_middle_well()?,
                _ => return Err(Error::config("mullerbrown2d: give both `xc` and `yc` or neither")),
            };
            well_center = Some(center);
            vec![
                single(2, Term::LeveledMullerBrown { xc: center[0], yc: center[1] }),
                single(2, Term::SinePair { eps: spec.param("eps")?, s: -1.0 }),
            ]
        }
    };
    let full = TermSum { dim: spec.kind.dim(), terms: components.iter().flat_map(|c| c.terms.iter().copied()).collect() };
    Ok(Builtin { spec: spec.clone(), full, components, well_center })
}

/// Center of the middle Müller-Brown well, found by gradient descent on `V_m`
/// from `(0, 0.5)` until `|∇V_m| < 1e-8`.
pub fn muller_brown_middle_well() -> Result<[f64; 2]> {
    let mut x = [0.0, 0.5];
    let mut step = 1e-3;
    // Armijo descent into the basin, then Newton with a difference Hessian.
    for _ in 0..20_000 {
        let g = muller_brown_gradient(x[0], x[1]);
        let gn = g[0].hypot(g[1]);
        if gn < 1e-2 {
            break;
        }
        let v = muller_brown(x[0], x[1]);
        loop {
            let trial = [x[0] - step * g[0], x[1] - step * g[1]];
            if muller_brown(trial[0], trial[1]) <= v - 0.5 * step * gn * gn {
                x = trial;
                step *= 1.5;
                break;
            }
            step *= 0.5;
            if step < 1e-16 {
                return Err(Error::config("Müller-Brown well search stalled"));
            }
        }
    }
    let h = 1e-6;
    for _ in 0..50 {
        let g = muller_brown_gradient(x[0], x[1]);
        if g[0].hypot(g[1]) < 1e-8 {
            return Ok(x);
        }
        let gx = muller_brown_gradient(x[0] + h, x[1]);
        let gxm = muller_brown_gradient(x[0] - h, x[1]);
        let gy = muller_brown_gradient(x[0], x[1] + h);
        let gym = muller_brown_gradient(x[0], x[1] - h);
        let (a, b) = ((gx[0] - gxm[0]) / (2.0 * h), 0.5 * ((gx[1] - gxm[1]) + (gy[0] - gym[0])) / (2.0 * h));
        let c = (gy[1] - gym[1]) / (2.0 * h);
        let det = a * c - b * b;
        if !(a > 0.0 && det > 0.0) {
            break;
        }
        x[0] -= (c * g[0] - b * g[1]) / det;
        x[1] -= (a * g[1] - b * g[0]) / det;
    }
    Err(Error::config("Müller-Brown well search did not converge"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub points: usize,
    pub step: f64,
}

/// Compares the analytic gradient with central differences of step `step`.
///
/// The error at a point is `|g − g_fd|_∞ / max(|g|_∞, 1)`; the report holds
/// the maximum over `points`.
pub fn gradient_check<P: Potential + ?Sized>(oracle: &P, points: &[Vec<f64>], step: f64) -> GradientCheckReport {
    let d = oracle.dim();
    let mut g = vec![0.0; d];
    let mut x = vec![0.0; d];
    let mut worst = (0.0_f64, 0usize);
    for (idx, q) in points.iter().enumerate() {
        oracle.gradient(q, &mut g);
        let mut err = 0.0_f64;
        for i in 0..d {
            x.copy_from_slice(q);
            x[i] = q[i] + step;
            let up = oracle.value(&x);
            x[i] = q[i] - step;
            let down = oracle.value(&x);
            let fd = (up - down) / (2.0 * step);
            err = err.max((g[i] - fd).abs());
        }
        let scale = g.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        let rel = err / scale;
        if rel > worst.0 || idx == 0 {
            worst = (rel, idx);
        }
    }
    GradientCheckReport { max_rel_error: worst.0, worst_index: worst.1, points: points.len(), step }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform_points(n: usize, dim: usize, lo: f64, hi: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..dim).map(|_| rng.random_range(lo..hi)).collect()).collect()
    }

    fn all_builtins() -> Vec<Builtin> {
        [
            BuiltinSpec::quad3scale(0.05, 0.001),
            BuiltinSpec::doublewell3scale(0.025, 0.001),
            BuiltinSpec::cossum(20),
            BuiltinSpec::quad2d(1e-5),
            BuiltinSpec::mullerbrown2d(1e-5),
        ]
        .iter()
        .map(|s| make_builtin(s).unwrap())
        .collect()
    }

    #[test]
    fn quad3scale_at_origin() {
        let b = make_builtin(&BuiltinSpec::quad3scale(0.05, 0.001)).unwrap();
        assert_eq!(b.full().value(&[0.0]), 0.0);
        assert_eq!(b.n_components(), 3);
    }

    #[test]
    fn quad2d_components_at_origin() {
        let b = make_builtin(&BuiltinSpec::quad2d(1e-5)).unwrap();
        assert_eq!(b.component(0).value(&[0.0, 0.0]), 1.25);
        assert_eq!(b.component(1).value(&[0.0, 0.0]), 0.0);
    }

    #[test]
    fn muller_brown_center_is_stationary() {
        let c = muller_brown_middle_well().unwrap();
        let g = muller_brown_gradient(c[0], c[1]);
        assert!(g[0].hypot(g[1]) < 1e-8);
        // The middle well of the classical surface sits near (-0.05, 0.47).
        assert!((c[0] + 0.05).abs() < 0.01 && (c[1] - 0.467).abs() < 0.01, "{c:?}");
    }

    #[test]
    fn muller_brown_wells_are_leveled() {
        let b = make_builtin(&BuiltinSpec::mullerbrown2d(1e-5)).unwrap();
        let v0 = b.component(0);
        let c = b.well_center.unwrap();
        // Classical minima (rounded); leveled values agree to a few percent.
        let wells = [[-0.558, 1.442], c, [0.623, 0.028]];
        let vals: Vec<f64> = wells.iter().map(|w| v0.value(w)).collect();
        let spread = vals.iter().cloned().fold(f64::MIN, f64::max) - vals.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread < 0.6, "{vals:?}");
    }

    #[test]
    fn gradient_check_builtins() {
        let b = all_builtins();
        let r = gradient_check(&*b[0].full(), &uniform_points(20, 1, -2.0, 2.0, 1), 1e-6);
        assert!(r.max_rel_error <= 1e-5, "{r:?}");
        let r = gradient_check(&*b[1].full(), &uniform_points(20, 1, -2.0, 2.0, 2), 1e-6);
        assert!(r.max_rel_error <= 1e-5, "{r:?}");
        let r = gradient_check(&*b[2].full(), &uniform_points(20, 1, -1.0, 4.0, 3), 1e-7);
        assert!(r.max_rel_error <= 1e-4, "{r:?}");
        // The 1e-5 micro-scale needs a step well below eps.
        let r = gradient_check(&*b[3].full(), &uniform_points(10, 2, -1.5, 1.5, 4), 1e-8);
        assert!(r.max_rel_error <= 1e-5, "{r:?}");
        let r = gradient_check(&*b[4].full(), &uniform_points(10, 2, -1.5, 1.5, 5), 1e-8);
        assert!(r.max_rel_error <= 1e-5, "{r:?}");
    }

    #[test]
    fn macro_components_pass_gradient_check_in_ball_of_radius_10() {
        for b in all_builtins() {
            let d = b.dim();
            let pts: Vec<Vec<f64>> =
                uniform_points(200, d, -10.0, 10.0, 11).into_iter().filter(|p| p.iter().map(|x| x * x).sum::<f64>() <= 100.0).collect();
            let r = gradient_check(&*b.component(0), &pts, 1e-6);
            assert!(r.max_rel_error <= 1e-5, "{}: {r:?}", b.spec.kind);
        }
    }

    #[test]
    fn full_equals_sum_of_components() {
        for b in all_builtins() {
            let d = b.dim();
            for q in uniform_points(100, d, -3.0, 3.0, 9) {
                let full = b.full().value(&q);
                let sum: f64 = (0..b.n_components()).map(|j| b.component(j).value(&q)).sum();
                assert_relative_eq!(full, sum, max_relative = 1e-12, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn macro_parts_are_even() {
        let dw = make_builtin(&BuiltinSpec::doublewell3scale(0.025, 0.001)).unwrap();
        let qd = make_builtin(&BuiltinSpec::quad3scale(0.05, 0.001)).unwrap();
        for q in uniform_points(100, 1, -3.0, 3.0, 13) {
            for b in [&dw, &qd] {
                assert_eq!(b.component(0).value(&q), b.component(0).value(&[-q[0]]));
            }
        }
    }

    #[test]
    fn empty_cossum_is_shifted_quadratic() {
        let b = make_builtin(&BuiltinSpec::cossum(0)).unwrap();
        for q in [-1.0, 0.0, 0.7, 3.0] {
            let s = q - FRAC_PI_2;
            assert_relative_eq!(b.full().value(&[q]), s * s / 4.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn effective_and_unresolved_split() {
        let b = make_builtin(&BuiltinSpec::quad3scale(0.05, 0.001)).unwrap();
        let q = [0.3];
        let u1 = b.effective(1).value(&q);
        assert_relative_eq!(u1, 0.045 + 0.05 * (0.3f64 / 0.05).sin(), epsilon = 1e-15);
        assert_relative_eq!(u1 + b.unresolved(1).value(&q), b.full().value(&q), epsilon = 1e-15);
    }

    #[test]
    fn invalid_specs_rejected() {
        let bad = [
            BuiltinSpec::quad3scale(0.001, 0.05),
            BuiltinSpec::new(BuiltinKind::Quad3Scale, &[("eps1", 0.05)]),
            BuiltinSpec::quad2d(-1.0),
            BuiltinSpec::new(BuiltinKind::CosSum, &[("n", 2.5)]),
            BuiltinSpec::new(BuiltinKind::Quad2d, &[("eps", 1e-5), ("bogus", 1.0)]),
            BuiltinSpec::new(BuiltinKind::MullerBrown2d, &[("eps", 1e-5), ("xc", 0.0)]),
        ];
        for s in bad {
            assert!(matches!(make_builtin(&s), Err(Error::Config(_))), "{s:?}");
        }
    }

    #[test]
    fn builtin_spec_json_shape() {
        let s: BuiltinSpec = serde_json::from_str(r#"{"kind":"quad3scale","params":{"eps1":0.05,"eps2":0.001}}"#).unwrap();
        assert_eq!(s, BuiltinSpec::quad3scale(0.05, 0.001));
        assert!(serde_json::from_str::<BuiltinSpec>(r#"{"kind":"nope"}"#).is_err());
    }
}
