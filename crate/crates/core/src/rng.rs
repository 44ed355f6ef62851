//! Counter-based seed derivation.
//!
//! Every random stream in a run is derived from the root seed and a small
//! tuple of stream coordinates, so the stream used by (say) episode 17 does
//! not depend on how many workers exist or in what order they ran.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a root seed with stream coordinates into a new seed.
pub fn derive_seed(root: u64, coords: &[u64]) -> u64 {
    coords.iter().fold(splitmix64(root), |acc, &c| splitmix64(acc ^ splitmix64(c)))
}

pub fn stream(root: u64, coords: &[u64]) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, coords))
}

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream tags keep independent uses of the same coordinates apart.
pub mod tag {
    pub const ENV: u64 = 1;
    pub const POLICY: u64 = 2;
    pub const INIT: u64 = 3;
    pub const UPDATE: u64 = 4;
    pub const EVAL: u64 = 5;
    pub const FALLBACK: u64 = 6;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivation_is_stable_and_coordinate_sensitive() {
        assert_eq!(derive_seed(1, &[2, 3]), derive_seed(1, &[2, 3]));
        assert_ne!(derive_seed(1, &[2, 3]), derive_seed(1, &[3, 2]));
        assert_ne!(derive_seed(1, &[2]), derive_seed(2, &[2]));
    }
}
