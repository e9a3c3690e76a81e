use serde::{Deserialize, Serialize};

use super::samples::{mean_var, SampleSet};
use crate::{Error, Result};

/// The test runs on at most this many (thinned) points.
pub const MAX_TEST_POINTS: usize = 100_000;

/// Fewest momentum samples accepted by [`normality_test`].
pub const MIN_SAMPLES: usize = 1000;

/// Jarque–Bera normality test of each momentum coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalityReport {
    pub per_dim_stat: Vec<f64>,
    pub per_dim_p: Vec<f64>,
    /// Largest absolute off-diagonal momentum correlation (reported only).
    pub cross_corr_max: f64,
    pub threshold: f64,
    /// Thinning stride applied before testing.
    pub stride: usize,
    pub n_used: usize,
    pub pass: bool,
}

impl NormalityReport {
    pub fn min_p(&self) -> f64 {
        self.per_dim_p.iter().cloned().fold(1.0, f64::min)
    }
}

/// Jarque–Bera statistic and its asymptotic (χ², 2 dof) p-value.
///
/// Constant data yields `(∞, 0)`.
pub fn jarque_bera(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for x in xs {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    if !(m2 > 0.0) {
        return (f64::INFINITY, 0.0);
    }
    let skew = m3 / m2.powf(1.5);
    let kurt = m4 / (m2 * m2);
    let jb = n / 6.0 * (skew * skew + 0.25 * (kurt - 3.0).powi(2));
    (jb, (-0.5 * jb).exp())
}

/// Integrated autocorrelation time estimated from 100 batch means.
fn autocorrelation_time(xs: &[f64]) -> f64 {
    let batches = 100;
    let size = xs.len() / batches;
    if size < 2 {
        return 1.0;
    }
    let (_, var) = mean_var(xs);
    if !(var > 0.0) {
        return 1.0;
    }
    let bm: Vec<f64> = (0..batches).map(|b| xs[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64).collect();
    let (_, bvar) = mean_var(&bm);
    (size as f64 * bvar / var).max(1.0)
}

/// Tests every momentum coordinate for normality.
///
/// The samples are thinned by `max(⌈n / 1e5⌉, ⌈2τ⌉)` where `τ` is the
/// largest autocorrelation time of any coordinate or its centered square, so that the asymptotic
/// p-values are not distorted by serial correlation; at least
/// [`MIN_SAMPLES`] points are always kept. The verdict passes iff every
/// per-coordinate p-value is at least `threshold`; correlations between
/// coordinates are reported but never fail the test.
pub fn normality_test(samples: &SampleSet, threshold: f64) -> Result<NormalityReport> {
    let n = samples.len();
    if n < MIN_SAMPLES {
        return Err(Error::InsufficientData(format!("normality test needs at least {MIN_SAMPLES} samples, got {n}")));
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::config(format!("normality threshold must lie in [0, 1], got {threshold}")));
    }
    let d = samples.dim();
    let coords: Vec<Vec<f64>> = (0..d).map(|j| samples.p_coord(j)).collect();
    // Skewness and kurtosis depend on p² and p⁴, which decorrelate on the
    // energy relaxation time; that is much longer than the oscillating
    // autocorrelation of p itself.
    let tau = coords
        .iter()
        .map(|c| {
            let (m, _) = mean_var(c);
            let sq: Vec<f64> = c.iter().map(|x| (x - m) * (x - m)).collect();
            autocorrelation_time(c).max(autocorrelation_time(&sq))
        })
        .fold(1.0, f64::max);
    let stride = n.div_ceil(MAX_TEST_POINTS).max((2.0 * tau).ceil() as usize).min(n / MIN_SAMPLES).max(1);
    let thinned: Vec<Vec<f64>> = coords.iter().map(|c| c.iter().step_by(stride).copied().collect()).collect();
    let mut per_dim_stat = Vec::with_capacity(d);
    let mut per_dim_p = Vec::with_capacity(d);
    for c in &thinned {
        let (jb, p) = jarque_bera(c);
        per_dim_stat.push(jb);
        per_dim_p.push(p);
    }
    let mut cross = 0.0_f64;
    for a in 0..d {
        for b in a + 1..d {
            cross = cross.max(correlation(&thinned[a], &thinned[b]).abs());
        }
    }
    let pass = per_dim_p.iter().all(|&p| p >= threshold);
    Ok(NormalityReport { per_dim_stat, per_dim_p, cross_corr_max: cross, threshold, stride, n_used: thinned[0].len(), pass })
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    if !(va > 0.0 && vb > 0.0) {
        return 0.0;
    }
    let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() as f64 - 1.0);
    cov / (va * vb).sqrt()
}
