//! Inputs shared by the kernel benchmarks.

use effpot_core::rng;
use rand_distr::{Distribution, StandardNormal};

/// `n` standard normal draws from a fixed stream.
pub fn normals(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, "bench", 0);
    (0..n).map(|_| StandardNormal.sample(&mut r)).collect()
}

/// `m` AR(1) trajectories of length `len` with coefficient `phi`.
pub fn ar1_trajectories(m: usize, len: usize, phi: f64) -> Vec<Vec<f64>> {
    let noise = normals(m * len, 1);
    noise
        .chunks_exact(len)
        .map(|e| {
            let mut x = 0.0;
            e.iter()
                .map(|z| {
                    x = phi * x + z;
                    x
                })
                .collect()
        })
        .collect()
}
