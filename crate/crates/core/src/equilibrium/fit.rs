use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::histogram::Histogram;
use crate::potentials::Potential;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisKind {
    /// Uniform cubic B-splines (1D).
    CubicBspline,
    /// Tensor-product bilinear interpolation on the histogram grid (2D).
    Bilinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    /// Number of B-spline basis functions (1D).
    pub basis_size: usize,
    /// Bins with fewer counts are left out of the regression.
    pub count_floor: u64,
    /// Weight of the neighbor-difference penalty (2D), in units of the mean
    /// count of a supported bin.
    pub smoothing: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { basis_size: 30, count_floor: 5, smoothing: 0.05 }
    }
}

/// Regressed potential `U = Σ aᵢ φᵢ`, gauge-shifted so its minimum over the
/// domain is 0.
///
/// Outside the domain the potential continues quadratically from the nearest
/// domain point and always confines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedPotential {
    pub basis: BasisKind,
    /// Spline breakpoints (1D) or node coordinates per axis (2D); uniform.
    pub knots: Vec<Vec<f64>>,
    pub coeffs: Vec<f64>,
    pub beta_hat: f64,
    pub domain: Vec<(f64, f64)>,
    /// Constant subtracted from the raw regression to put the minimum at 0.
    pub gauge: f64,
    /// Count-weighted RMS residual of the regression.
    pub residual_rms: f64,
    pub bins_used: usize,
    /// Per-node flag: the node's bin entered the regression (2D only).
    #[serde(default)]
    pub supported: Vec<bool>,
}

#[inline]
fn bspline_weights(u: f64) -> ([f64; 4], [f64; 4]) {
    let u2 = u * u;
    let u3 = u2 * u;
    let v = 1.0 - u;
    (
        [v * v * v / 6.0, (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0, (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0, u3 / 6.0],
        [-0.5 * v * v, 1.5 * u2 - 2.0 * u, -1.5 * u2 + u + 0.5, 0.5 * u2],
    )
}

fn uniform(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
}

impl FittedPotential {
    pub fn dim(&self) -> usize {
        self.domain.len()
    }

    /// Checks the structural consistency of a deserialized fit.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(format!("fitted potential: {m}")));
        if !(self.beta_hat > 0.0) {
            return bad("beta_hat must be positive");
        }
        if self.knots.len() != self.domain.len() {
            return bad("knots and domain dimensions differ");
        }
        for (k, &(lo, hi)) in self.knots.iter().zip(&self.domain) {
            if k.len() < 2 || !(hi > lo) {
                return bad("degenerate axis");
            }
            let h = (hi - lo) / (k.len() - 1) as f64;
            if k.iter().enumerate().any(|(i, x)| (x - (lo + h * i as f64)).abs() > 1e-9 * (1.0 + h)) {
                return bad("knots must be uniform and span the domain");
            }
        }
        let expected = match self.basis {
            BasisKind::CubicBspline if self.dim() == 1 => self.knots[0].len() + 2,
            BasisKind::Bilinear if self.dim() == 2 => self.knots[0].len() * self.knots[1].len(),
            _ => return bad("basis kind does not match dimension"),
        };
        if self.coeffs.len() != expected {
            return bad(&format!("expected {expected} coefficients, got {}", self.coeffs.len()));
        }
        if self.coeffs.iter().any(|c| !c.is_finite()) {
            return bad("non-finite coefficient");
        }
        Ok(())
    }

    fn spline_eval(&self, x: f64) -> (f64, f64, f64) {
        let (lo, hi) = self.domain[0];
        let n = self.knots[0].len() - 1;
        let h = (hi - lo) / n as f64;
        let s = (x - lo) / h;
        let j = (s.floor().max(0.0) as usize).min(n - 1);
        let u = s - j as f64;
        let (w, dw) = bspline_weights(u);
        let c = &self.coeffs[j..j + 4];
        let v = (0..4).map(|i| w[i] * c[i]).sum();
        let d = (0..4).map(|i| dw[i] * c[i]).sum::<f64>() / h;
        // Second derivative: piecewise linear.
        let dd = ((1.0 - u) * (c[0] - 2.0 * c[1] + c[2]) + u * (c[1] - 2.0 * c[2] + c[3])) / (h * h);
        (v, d, dd)
    }

    /// Value, gradient and mixed second derivative on the domain.
    fn bilinear_eval(&self, x: f64, y: f64) -> (f64, [f64; 2], f64) {
        let (nx, ny) = (self.knots[0].len(), self.knots[1].len());
        let (x0, x1) = self.domain[0];
        let (y0, y1) = self.domain[1];
        let hx = (x1 - x0) / (nx - 1) as f64;
        let hy = (y1 - y0) / (ny - 1) as f64;
        let sx = (x - x0) / hx;
        let sy = (y - y0) / hy;
        let i = (sx.floor().max(0.0) as usize).min(nx - 2);
        let j = (sy.floor().max(0.0) as usize).min(ny - 2);
        let t = sx - i as f64;
        let s = sy - j as f64;
        let c = |a: usize, b: usize| self.coeffs[a * ny + b];
        let (c00, c10, c01, c11) = (c(i, j), c(i + 1, j), c(i, j + 1), c(i + 1, j + 1));
        let v = (1.0 - t) * (1.0 - s) * c00 + t * (1.0 - s) * c10 + (1.0 - t) * s * c01 + t * s * c11;
        let gx = ((1.0 - s) * (c10 - c00) + s * (c11 - c01)) / hx;
        let gy = ((1.0 - t) * (c01 - c00) + t * (c11 - c10)) / hy;
        (v, [gx, gy], (c11 - c10 - c01 + c00) / (hx * hy))
    }

    /// Euclidean distance from `q` to the fitted domain.
    pub fn distance_outside(&self, q: &[f64]) -> f64 {
        q.iter()
            .zip(&self.domain)
            .map(|(x, &(lo, hi))| {
                let r = x - x.clamp(lo, hi);
                r * r
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Strict local minima of the node values among supported nodes (2D,
    /// 8-neighborhood) or of the spline sampled at `samples` points (1D).
    pub fn local_minima(&self, samples: usize) -> Vec<Vec<f64>> {
        match self.basis {
            BasisKind::CubicBspline => {
                let (lo, hi) = self.domain[0];
                let xs = uniform(lo, hi, samples.max(3) - 1);
                let vs: Vec<f64> = xs.iter().map(|&x| self.spline_eval(x).0).collect();
                (1..xs.len() - 1).filter(|&i| vs[i] < vs[i - 1] && vs[i] <= vs[i + 1]).map(|i| vec![xs[i]]).collect()
            }
            BasisKind::Bilinear => {
                let (nx, ny) = (self.knots[0].len(), self.knots[1].len());
                let mut out = Vec::new();
                for i in 0..nx {
                    for j in 0..ny {
                        let k = i * ny + j;
                        if !self.supported.get(k).copied().unwrap_or(true) {
                            continue;
                        }
                        let v = self.coeffs[k];
                        let mut is_min = true;
                        for di in -1i64..=1 {
                            for dj in -1i64..=1 {
                                let (a, b) = (i as i64 + di, j as i64 + dj);
                                if (di, dj) == (0, 0) || a < 0 || b < 0 || a >= nx as i64 || b >= ny as i64 {
                                    continue;
                                }
                                // Ties go to the first node of a plateau in scan order.
                                let w = self.coeffs[a as usize * ny + b as usize];
                                if w < v || (w == v && (di, dj) < (0, 0)) {
                                    is_min = false;
                                }
                            }
                        }
                        if is_min {
                            out.push(vec![self.knots[0][i], self.knots[1][j]]);
                        }
                    }
                }
                out
            }
        }
    }
}

impl FittedPotential {
    /// Center of the basin around the lowest supported node (2D).
    ///
    /// Collects the supported nodes connected to the lowest one whose value
    /// is at most `level` above it, fits a quadratic by least squares and
    /// returns its stationary point. Less sensitive to histogram noise than
    /// the lowest node itself. `None` in 1D or when the basin is too small
    /// or not convex.
    pub fn basin_center(&self, level: f64) -> Option<Vec<f64>> {
        if self.basis != BasisKind::Bilinear {
            return None;
        }
        let (nx, ny) = (self.knots[0].len(), self.knots[1].len());
        let ok = |k: usize| self.supported.get(k).copied().unwrap_or(true);
        let start = (0..nx * ny).filter(|&k| ok(k)).min_by(|&a, &b| self.coeffs[a].total_cmp(&self.coeffs[b]))?;
        let top = self.coeffs[start] + level;
        let mut seen = vec![false; nx * ny];
        let mut stack = vec![start];
        let mut basin = Vec::new();
        seen[start] = true;
        while let Some(k) = stack.pop() {
            basin.push(k);
            let (i, j) = ((k / ny) as i64, (k % ny) as i64);
            for (a, b) in [(i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)] {
                if a < 0 || b < 0 || a >= nx as i64 || b >= ny as i64 {
                    continue;
                }
                let n = a as usize * ny + b as usize;
                if !seen[n] && ok(n) && self.coeffs[n] <= top {
                    seen[n] = true;
                    stack.push(n);
                }
            }
        }
        if basin.len() < 6 {
            return None;
        }
        let (x0, y0) = (self.knots[0][start / ny], self.knots[1][start % ny]);
        let mut a = DMatrix::<f64>::zeros(basin.len(), 6);
        let mut y = DVector::<f64>::zeros(basin.len());
        for (r, &k) in basin.iter().enumerate() {
            let (dx, dy) = (self.knots[0][k / ny] - x0, self.knots[1][k % ny] - y0);
            let row = [1.0, dx, dy, dx * dx, dx * dy, dy * dy];
            for (c, v) in row.iter().enumerate() {
                a[(r, c)] = *v;
            }
            y[r] = self.coeffs[k];
        }
        let c = a.svd(true, true).solve(&y, 1e-12).ok()?;
        // ∇ = (c1 + 2c3 x + c4 y, c2 + c4 x + 2c5 y) = 0
        let (hxx, hxy, hyy) = (2.0 * c[3], c[4], 2.0 * c[5]);
        let det = hxx * hyy - hxy * hxy;
        if !(hxx > 0.0 && det > 0.0) {
            return None;
        }
        let dx = (-c[1] * hyy + c[2] * hxy) / det;
        let dy = (-c[2] * hxx + c[1] * hxy) / det;
        Some(vec![x0 + dx, y0 + dy])
    }
}

impl Potential for FittedPotential {
    fn dim(&self) -> usize {
        self.domain.len()
    }

    fn value(&self, q: &[f64]) -> f64 {
        let mut g = vec![0.0; q.len()];
        value_and_gradient(self, q, &mut g)
    }

    fn gradient(&self, q: &[f64], out: &mut [f64]) {
        value_and_gradient(self, q, out);
    }

    fn domain(&self) -> Option<Vec<(f64, f64)>> {
        Some(self.domain.clone())
    }
}

/// Outside the domain the value continues as `U(b) + s·r + κ|r|²/2` from the
/// nearest domain point `b`, `r = q − b`. In 1D `s` and `κ` are secant slope
/// and curvature over the outer tenth of the domain (κ ≥ 1); in 2D `s` is the
/// boundary gradient and κ = 1. A slope that points outward (the fit
/// decreasing away from the data) is dropped so the extension always confines.
fn value_and_gradient(f: &FittedPotential, q: &[f64], out: &mut [f64]) -> f64 {
    let inward = |g: f64, r: f64| if g * r < 0.0 { 0.0 } else { g };
    match f.basis {
        BasisKind::CubicBspline => {
            let (lo, hi) = f.domain[0];
            let b = q[0].clamp(lo, hi);
            let r = q[0] - b;
            if r == 0.0 {
                let (v, d, _) = f.spline_eval(b);
                out[0] = d;
                return v;
            }
            let step = 0.1 * (hi - lo) * r.signum();
            let u0 = f.spline_eval(b).0;
            let u1 = f.spline_eval(b - step).0;
            let u2 = f.spline_eval(b - 2.0 * step).0;
            let kappa = ((u0 - 2.0 * u1 + u2) / (step * step)).max(1.0);
            let d = inward((u0 - u1) / step + 0.5 * kappa * step, r);
            out[0] = d + kappa * r;
            u0 + d * r + 0.5 * kappa * r * r
        }
        BasisKind::Bilinear => {
            let b: Vec<f64> = q.iter().zip(&f.domain).map(|(x, &(lo, hi))| x.clamp(lo, hi)).collect();
            let r = [q[0] - b[0], q[1] - b[1]];
            let (v, g, gxy) = f.bilinear_eval(b[0], b[1]);
            let e = [inward(g[0], r[0]), inward(g[1], r[1])];
            // With one coordinate inside, the other slope varies along it.
            let cross0 = if r[0] == 0.0 && e[1] != 0.0 { gxy * r[1] } else { 0.0 };
            let cross1 = if r[1] == 0.0 && e[0] != 0.0 { gxy * r[0] } else { 0.0 };
            out[0] = if r[0] == 0.0 { g[0] + cross0 } else { e[0] + r[0] };
            out[1] = if r[1] == 0.0 { g[1] + cross1 } else { e[1] + r[1] };
            v + e[0] * r[0] + e[1] * r[1] + 0.5 * (r[0] * r[0] + r[1] * r[1])
        }
    }
}

/// Regresses `−log(density)/β̂` on the basis over bins holding at least
/// `count_floor` samples, weighted by their counts, then shifts the result
/// so that its minimum is 0.
pub fn fit_potential(hist: &Histogram, beta_hat: f64, opts: &FitOptions) -> Result<FittedPotential> {
    if !(beta_hat > 0.0 && beta_hat.is_finite()) {
        return Err(Error::config(format!("beta_hat must be positive, got {beta_hat}")));
    }
    match hist.dim() {
        1 => fit_spline(hist, beta_hat, opts),
        2 => fit_bilinear(hist, beta_hat, opts),
        d => Err(Error::config(format!("potential fitting supports 1 or 2 dimensions, got {d}"))),
    }
}

const TAIL_RUN: usize = 5;

fn fit_spline(hist: &Histogram, beta_hat: f64, opts: &FitOptions) -> Result<FittedPotential> {
    let m = opts.basis_size;
    if m < 4 {
        return Err(Error::config(format!("basis_size must be at least 4, got {m}")));
    }
    let centers = hist.centers(0);
    let w = hist.bin_width(0);
    let ok: Vec<bool> = (0..hist.len()).map(|k| hist.counts[k] >= opts.count_floor.max(1) && hist.density[k] > 0.0).collect();
    // Ragged tails (isolated supported bins between empty ones) are cut off:
    // each end moves inward to the first run of TAIL_RUN supported bins.
    let dense = |k: usize| k + TAIL_RUN <= ok.len() && ok[k..k + TAIL_RUN].iter().all(|&b| b);
    let first = (0..ok.len()).find(|&k| dense(k));
    let last = (0..ok.len()).rev().find(|&k| k + 1 >= TAIL_RUN && dense(k + 1 - TAIL_RUN));
    let used: Vec<usize> = match (first, last) {
        (Some(a), Some(b)) if a <= b => (a..=b).filter(|&k| ok[k]).collect(),
        _ => Vec::new(),
    };
    if used.len() < m {
        return Err(Error::IllPosedFit(format!(
            "{} bins hold at least {} samples but the basis has {m} functions",
            used.len(),
            opts.count_floor
        )));
    }
    let lo = centers[used[0]] - 0.5 * w;
    let hi = centers[*used.last().expect("non-empty")] + 0.5 * w;
    let intervals = m - 3;
    let h = (hi - lo) / intervals as f64;

    let mut support = vec![0u64; m];
    let mut a = DMatrix::<f64>::zeros(used.len(), m);
    let mut y = DVector::<f64>::zeros(used.len());
    let mut weights = Vec::with_capacity(used.len());
    for (row, &k) in used.iter().enumerate() {
        let x = centers[k];
        let s = (x - lo) / h;
        let j = (s.floor().max(0.0) as usize).min(intervals - 1);
        let (bw, _) = bspline_weights(s - j as f64);
        let sw = (hist.counts[k] as f64).sqrt();
        for i in 0..4 {
            a[(row, j + i)] = sw * bw[i];
            support[j + i] += hist.counts[k];
        }
        y[row] = sw * (-hist.density[k].ln() / beta_hat);
        weights.push(hist.counts[k] as f64);
    }
    if let Some(j) = support.iter().position(|&c| c == 0) {
        let a0 = lo + (j.saturating_sub(3)) as f64 * h;
        let b0 = lo + (j + 1).min(intervals) as f64 * h;
        return Err(Error::IllPosedFit(format!("no well-sampled bins in [{a0:.4}, {b0:.4}]")));
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-10 * smax) {
        return Err(Error::IllPosedFit(format!("design matrix is rank deficient on [{lo:.4}, {hi:.4}] (condition {:.3e})", smax / smin)));
    }
    let coef = svd.solve(&y, 0.0).map_err(|e| Error::IllPosedFit(e.to_string()))?;
    let resid = &a * &coef - &y;
    let wsum: f64 = weights.iter().sum();
    let residual_rms = (resid.iter().map(|r| r * r).sum::<f64>() / wsum).sqrt();

    let mut fit = FittedPotential {
        basis: BasisKind::CubicBspline,
        knots: vec![uniform(lo, hi, intervals)],
        coeffs: coef.iter().copied().collect(),
        beta_hat,
        domain: vec![(lo, hi)],
        gauge: 0.0,
        residual_rms,
        bins_used: used.len(),
        supported: Vec::new(),
    };
    let xs = uniform(lo, hi, 64 * intervals);
    let min = xs.iter().map(|&x| fit.spline_eval(x).0).fold(f64::INFINITY, f64::min);
    fit.coeffs.iter_mut().for_each(|c| *c -= min);
    fit.gauge = min;
    Ok(fit)
}

fn fit_bilinear(hist: &Histogram, beta_hat: f64, opts: &FitOptions) -> Result<FittedPotential> {
    let (nx, ny) = (hist.axes[0].2, hist.axes[1].2);
    if nx < 2 || ny < 2 {
        return Err(Error::config("bilinear fit needs at least 2 bins per axis"));
    }
    if !(opts.smoothing > 0.0) {
        return Err(Error::config("smoothing must be positive"));
    }
    let n = nx * ny;
    let floor = opts.count_floor.max(1);
    let supported: Vec<bool> = (0..n).map(|k| hist.counts[k] >= floor && hist.density[k] > 0.0).collect();
    let used = supported.iter().filter(|&&s| s).count();
    if used < 4 {
        return Err(Error::IllPosedFit(format!("only {used} bins hold at least {floor} samples")));
    }
    let w: Vec<f64> = (0..n).map(|k| if supported[k] { hist.counts[k] as f64 } else { 0.0 }).collect();
    let y: Vec<f64> = (0..n).map(|k| if supported[k] { -hist.density[k].ln() / beta_hat } else { 0.0 }).collect();
    // Relative to the mean supported count, so the same setting means the
    // same thing at any sample size.
    let lambda = opts.smoothing * w.iter().sum::<f64>() / used as f64;

    // (W + λL) c = W y with L the grid-graph Laplacian; L·1 = 0 keeps the
    // solution equivariant under constant shifts of y.
    let apply = |c: &[f64], out: &mut [f64]| {
        for i in 0..nx {
            for j in 0..ny {
                let k = i * ny + j;
                let mut lap = 0.0;
                if i > 0 {
                    lap += c[k] - c[k - ny];
                }
                if i + 1 < nx {
                    lap += c[k] - c[k + ny];
                }
                if j > 0 {
                    lap += c[k] - c[k - 1];
                }
                if j + 1 < ny {
                    lap += c[k] - c[k + 1];
                }
                out[k] = w[k] * c[k] + lambda * lap;
            }
        }
    };
    let diag: Vec<f64> = (0..n)
        .map(|k| {
            let (i, j) = (k / ny, k % ny);
            let deg = (i > 0) as usize + (i + 1 < nx) as usize + (j > 0) as usize + (j + 1 < ny) as usize;
            w[k] + lambda * deg as f64
        })
        .collect();
    let b: Vec<f64> = (0..n).map(|k| w[k] * y[k]).collect();
    // Start from the weighted mean so unsupported regions begin level.
    let ymean = b.iter().sum::<f64>() / w.iter().sum::<f64>();
    let coeffs = conjugate_gradient(apply, &diag, &b, vec![ymean; n], 1e-13, 20 * n)?;

    let wsum: f64 = w.iter().sum();
    let residual_rms = ((0..n).map(|k| w[k] * (coeffs[k] - y[k]).powi(2)).sum::<f64>() / wsum).sqrt();
    let min = coeffs.iter().cloned().fold(f64::INFINITY, f64::min);
    let c0 = hist.centers(0);
    let c1 = hist.centers(1);
    Ok(FittedPotential {
        basis: BasisKind::Bilinear,
        domain: vec![(c0[0], c0[nx - 1]), (c1[0], c1[ny - 1])],
        knots: vec![c0, c1],
        coeffs: coeffs.iter().map(|c| c - min).collect(),
        beta_hat,
        gauge: min,
        residual_rms,
        bins_used: used,
        supported,
    })
}

/// Jacobi-preconditioned conjugate gradients for an SPD operator.
fn conjugate_gradient<F>(apply: F, diag: &[f64], b: &[f64], mut x: Vec<f64>, rtol: f64, max_iter: usize) -> Result<Vec<f64>>
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = b.len();
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    let mut ax = vec![0.0; n];
    apply(&x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut z: Vec<f64> = r.iter().zip(diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let bnorm = dot(b, b).sqrt().max(1e-300);
    let mut ap = vec![0.0; n];
    for _ in 0..max_iter {
        if dot(&r, &r).sqrt() <= rtol * bnorm {
            return Ok(x);
        }
        apply(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if dot(&r, &r).sqrt() <= 1e-8 * bnorm {
        return Ok(x);
    }
    Err(Error::IllPosedFit("smoothing solve did not converge".into()))
}
