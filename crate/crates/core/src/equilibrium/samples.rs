use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// How a [`SampleSet`] was produced.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub n_steps: u64,
    pub burn_in: u64,
    pub stride: u64,
    pub seed: u64,
    pub restarts: u64,
    pub diverged: bool,
}

/// Equilibrium samples `(q_n, p_n)`, stored row-major.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleSet {
    dim: usize,
    qs: Vec<f64>,
    ps: Vec<f64>,
    /// Step size that generated the samples (0 when synthetic).
    pub delta: f64,
    pub meta: SampleMeta,
}

impl SampleSet {
    pub fn with_capacity(dim: usize, n: usize) -> Self {
        SampleSet { dim, qs: Vec::with_capacity(n * dim), ps: Vec::with_capacity(n * dim), delta: 0.0, meta: SampleMeta::default() }
    }

    /// Builds a set from row-major position and momentum buffers.
    pub fn from_parts(dim: usize, qs: Vec<f64>, ps: Vec<f64>) -> Result<Self> {
        if dim == 0 || qs.len() != ps.len() || qs.len() % dim != 0 {
            return Err(Error::Contract(format!("sample buffers of lengths {} and {} do not fit dimension {dim}", qs.len(), ps.len())));
        }
        if qs.iter().chain(&ps).any(|x| !x.is_finite()) {
            return Err(Error::Contract("samples must be finite".into()));
        }
        Ok(SampleSet { dim, qs, ps, delta: 0.0, meta: SampleMeta::default() })
    }

    /// One-dimensional set with the given momenta and zero positions.
    pub fn from_momenta(ps: Vec<f64>) -> Result<Self> {
        let qs = vec![0.0; ps.len()];
        Self::from_parts(1, qs, ps)
    }

    /// One-dimensional set with the given positions and zero momenta.
    pub fn from_positions(qs: Vec<f64>) -> Result<Self> {
        let ps = vec![0.0; qs.len()];
        Self::from_parts(1, qs, ps)
    }

    pub fn push_sample(&mut self, q: &[f64], p: &[f64]) {
        debug_assert_eq!(q.len(), self.dim);
        self.qs.extend_from_slice(q);
        self.ps.extend_from_slice(p);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.qs.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn q(&self, i: usize) -> &[f64] {
        &self.qs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn p(&self, i: usize) -> &[f64] {
        &self.ps[i * self.dim..(i + 1) * self.dim]
    }

    pub fn qs(&self) -> &[f64] {
        &self.qs
    }

    pub fn ps(&self) -> &[f64] {
        &self.ps
    }

    /// Coordinate `j` of every momentum sample.
    pub fn p_coord(&self, j: usize) -> Vec<f64> {
        self.ps.iter().skip(j).step_by(self.dim).copied().collect()
    }

    /// Coordinate `j` of every position sample.
    pub fn q_coord(&self, j: usize) -> Vec<f64> {
        self.qs.iter().skip(j).step_by(self.dim).copied().collect()
    }

    /// Momentum covariance (unbiased).
    pub fn p_covariance(&self) -> Vec<Vec<f64>> {
        let d = self.dim;
        let n = self.len();
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, x) in mean.iter_mut().zip(self.p(i)) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut cov = vec![vec![0.0; d]; d];
        for i in 0..n {
            let p = self.p(i);
            for a in 0..d {
                for b in 0..d {
                    cov[a][b] += (p[a] - mean[a]) * (p[b] - mean[b]);
                }
            }
        }
        let denom = (n.max(2) - 1) as f64;
        cov.iter_mut().flatten().for_each(|c| *c /= denom);
        cov
    }

    /// Scales every momentum by `c`.
    pub fn scale_momenta(&mut self, c: f64) {
        self.ps.iter_mut().for_each(|p| *p *= c);
    }
}

/// Mean and unbiased variance.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var)
}

/// Mean and batch-means standard error with `batches` contiguous batches.
pub fn batch_means(xs: &[f64], batches: usize) -> (f64, f64) {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let size = n / batches.max(1);
    if size == 0 || batches < 2 {
        return (mean, f64::NAN);
    }
    let bm: Vec<f64> = (0..batches).map(|b| xs[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64).collect();
    let (_, var) = mean_var(&bm);
    (mean, (var / batches as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accessors() {
        let s = SampleSet::from_parts(2, vec![1.0, 2.0, 3.0, 4.0], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.q(1), &[3.0, 4.0]);
        assert_eq!(s.p_coord(1), vec![6.0, 8.0]);
        assert_eq!(s.q_coord(0), vec![1.0, 3.0]);
    }

    #[test]
    fn rejects_ragged_and_nonfinite() {
        assert!(SampleSet::from_parts(2, vec![1.0], vec![1.0]).is_err());
        assert!(SampleSet::from_parts(1, vec![f64::NAN], vec![1.0]).is_err());
    }

    #[test]
    fn batch_means_of_constant() {
        let (m, se) = batch_means(&[2.0; 1000], 100);
        assert_eq!(m, 2.0);
        assert_eq!(se, 0.0);
    }
}
