//! Deterministic seed derivation for independent jobs.
//!
//! Every parallel job (probe run, scan entry, ensemble member) gets its own
//! ChaCha stream derived from the run seed and the job index, so results do not
//! depend on how jobs are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for job `index` in the family `tag` of a run seeded with `seed`.
pub fn derive_seed(seed: u64, tag: &str, index: u64) -> u64 {
    let mut h = mix(seed);
    for b in tag.bytes() {
        h = mix(h ^ u64::from(b));
    }
    mix(h ^ mix(index))
}

pub fn stream(seed: u64, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag, index))
}
