use std::io::Write;

use serde::{Deserialize, Serialize};

use super::samples::SampleSet;
use crate::{Error, Result};

/// Uniform-bin histogram of positions with its normalized density.
///
/// Bins are stored row-major with the first coordinate varying slowest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// Per-dimension `(lo, hi, bins)`.
    pub axes: Vec<(f64, f64, usize)>,
    pub counts: Vec<u64>,
    pub density: Vec<f64>,
    /// Samples that fell outside the binned range (explicit ranges only).
    pub outside: u64,
}

impl Histogram {
    /// Bins `points` (row-major, `dim` per point) on the given ranges.
    pub fn from_points(points: &[f64], dim: usize, axes: &[(f64, f64, usize)]) -> Result<Self> {
        if axes.len() != dim || dim == 0 {
            return Err(Error::Contract(format!("{} axes for dimension {dim}", axes.len())));
        }
        for &(lo, hi, n) in axes {
            if !(hi > lo) || n == 0 || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::config(format!("invalid histogram axis ({lo}, {hi}, {n})")));
            }
        }
        let total: usize = axes.iter().map(|a| a.2).product();
        let mut counts = vec![0u64; total];
        let mut outside = 0;
        'points: for q in points.chunks_exact(dim) {
            let mut idx = 0;
            for (x, &(lo, hi, n)) in q.iter().zip(axes) {
                if !(*x >= lo && *x <= hi) {
                    outside += 1;
                    continue 'points;
                }
                let b = (((x - lo) / (hi - lo)) * n as f64) as usize;
                idx = idx * n + b.min(n - 1);
            }
            counts[idx] += 1;
        }
        let mut h = Histogram { axes: axes.to_vec(), counts, density: Vec::new(), outside };
        h.normalize();
        Ok(h)
    }

    fn normalize(&mut self) {
        let n: u64 = self.counts.iter().sum();
        let vol = self.bin_volume();
        self.density = self.counts.iter().map(|&c| if n == 0 { 0.0 } else { c as f64 / (n as f64 * vol) }).collect();
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bin_width(&self, axis: usize) -> f64 {
        let (lo, hi, n) = self.axes[axis];
        (hi - lo) / n as f64
    }

    pub fn bin_volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.bin_width(a)).product()
    }

    /// Bin centers along `axis`.
    pub fn centers(&self, axis: usize) -> Vec<f64> {
        let (lo, _, n) = self.axes[axis];
        let w = self.bin_width(axis);
        (0..n).map(|i| lo + (i as f64 + 0.5) * w).collect()
    }

    /// Per-axis bin indices of flat bin `k`.
    pub fn unravel(&self, mut k: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for a in (0..self.dim()).rev() {
            let n = self.axes[a].2;
            idx[a] = k % n;
            k /= n;
        }
        idx
    }

    /// Center of flat bin `k`.
    pub fn center(&self, k: usize) -> Vec<f64> {
        self.unravel(k).iter().enumerate().map(|(a, &i)| self.axes[a].0 + (i as f64 + 0.5) * self.bin_width(a)).collect()
    }

    /// Probability mass per bin.
    pub fn masses(&self) -> Vec<f64> {
        let vol = self.bin_volume();
        self.density.iter().map(|d| d * vol).collect()
    }

    /// Redistributes the mass onto other axes, assuming it is uniform inside
    /// each bin. Mass outside the new axes is dropped.
    pub fn rebin_mass(&self, axes: &[(f64, f64, usize)]) -> Vec<f64> {
        let d = self.dim();
        // Per-axis overlap fractions old bin i -> new bin j.
        let overlaps: Vec<Vec<Vec<(usize, f64)>>> = (0..d)
            .map(|a| {
                let (lo, hi, n) = self.axes[a];
                let w = (hi - lo) / n as f64;
                let (nlo, nhi, nn) = axes[a];
                let nw = (nhi - nlo) / nn as f64;
                (0..n)
                    .map(|i| {
                        let (l, r) = (lo + i as f64 * w, lo + (i + 1) as f64 * w);
                        let first = (((l - nlo) / nw).floor().max(0.0)) as usize;
                        let last = (((r - nlo) / nw).ceil().max(0.0) as usize).min(nn);
                        (first..last)
                            .filter_map(|j| {
                                let (bl, br) = (nlo + j as f64 * nw, nlo + (j + 1) as f64 * nw);
                                let ov = (r.min(br) - l.max(bl)).max(0.0) / w;
                                (ov > 0.0).then_some((j, ov))
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let total: usize = axes.iter().map(|a| a.2).product();
        let mut out = vec![0.0; total];
        for (k, m) in self.masses().into_iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            let idx = self.unravel(k);
            let mut targets: Vec<(usize, f64)> = vec![(0, m)];
            for a in 0..d {
                let nn = axes[a].2;
                targets = targets.iter().flat_map(|&(t, w)| overlaps[a][idx[a]].iter().map(move |&(j, f)| (t * nn + j, w * f))).collect();
            }
            for (t, w) in targets {
                out[t] += w;
            }
        }
        out
    }

    /// `Σ p log(p / q)` against an analytic density `pdf`, evaluated at the
    /// bin centers (bins with no samples contribute nothing).
    pub fn kl_to<F: Fn(&[f64]) -> f64>(&self, pdf: F) -> f64 {
        let vol = self.bin_volume();
        let raw: Vec<f64> = (0..self.len()).map(|k| pdf(&self.center(k)) * vol).collect();
        let z: f64 = raw.iter().sum();
        self.masses().iter().zip(&raw).filter(|(p, _)| **p > 0.0).map(|(p, q)| p * (p / (q / z)).ln()).sum()
    }

    /// CSV with columns `x_1..x_d, count, density`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let d = self.dim();
        let header: Vec<String> = (1..=d).map(|i| format!("x_{i}")).chain(["count".into(), "density".into()]).collect();
        writeln!(w, "{}", header.join(","))?;
        for k in 0..self.len() {
            for c in self.center(k) {
                write!(w, "{c},")?;
            }
            writeln!(w, "{},{}", self.counts[k], self.density[k])?;
        }
        Ok(())
    }
}

/// Padded data range of coordinate `j`: `[min, max]` widened by 1% of the
/// span on each side.
pub fn padded_range(samples: &SampleSet, j: usize) -> (f64, f64) {
    let (lo, hi) =
        samples.qs().iter().skip(j).step_by(samples.dim()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let span = hi - lo;
    let pad = if span > 0.0 { 0.01 * span } else { 0.5 };
    (lo - pad, hi + pad)
}

/// Histogram of the sampled positions on their padded range.
pub fn histogram_density(samples: &SampleSet, bins_per_dim: usize) -> Result<Histogram> {
    if bins_per_dim < 10 {
        return Err(Error::config(format!("bins_per_dim must be at least 10, got {bins_per_dim}")));
    }
    if samples.is_empty() {
        return Err(Error::InsufficientData("no samples to bin".into()));
    }
    let axes: Vec<(f64, f64, usize)> = (0..samples.dim())
        .map(|j| {
            let (lo, hi) = padded_range(samples, j);
            (lo, hi, bins_per_dim)
        })
        .collect();
    Histogram::from_points(samples.qs(), samples.dim(), &axes)
}

/// Total-variation distance between two histograms after rebinning both onto
/// a common grid spanning their union with the finer of the two resolutions.
///
/// Returns `1.0` when the supports do not overlap.
pub fn total_variation(a: &Histogram, b: &Histogram) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Contract("histograms of different dimension".into()));
    }
    let axes: Vec<(f64, f64, usize)> = (0..a.dim())
        .map(|k| {
            let lo = a.axes[k].0.min(b.axes[k].0);
            let hi = a.axes[k].1.max(b.axes[k].1);
            let w = a.bin_width(k).min(b.bin_width(k));
            (lo, hi, ((hi - lo) / w).round().max(1.0) as usize)
        })
        .collect();
    let (ma, mb) = (a.rebin_mass(&axes), b.rebin_mass(&axes));
    let disjoint = ma.iter().zip(&mb).all(|(x, y)| *x == 0.0 || *y == 0.0);
    if disjoint {
        return Ok(1.0);
    }
    Ok(0.5 * ma.iter().zip(&mb).map(|(x, y)| (x - y).abs()).sum::<f64>())
}
