//! Named random substreams derived from a single run seed.
//!
//! Every consumer of randomness (data generation, initialization, batching,
//! reconstruction noise) gets its own ChaCha stream so that changing how
//! much one consumer draws never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Rng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derives a 64-bit seed from a base seed and a label (FNV-1a over the label).
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(seed ^ splitmix64(h))
}

pub fn substream(seed: u64, label: &str) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, label))
}

pub fn indexed_substream(seed: u64, label: &str, index: u64) -> Rng {
    Rng::seed_from_u64(splitmix64(derive_seed(seed, label) ^ splitmix64(index)))
}

pub fn standard_normals(rng: &mut Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn substreams_are_independent_of_label_order() {
        let a1: f64 = substream(7, "init").random();
        let _: f64 = substream(7, "noise").random();
        let a2: f64 = substream(7, "init").random();
        assert_eq!(a1, a2);
        assert_ne!(derive_seed(7, "init"), derive_seed(7, "noise"));
        assert_ne!(derive_seed(7, "init"), derive_seed(8, "init"));
    }
}
