//! Small helpers shared across modules: subset sizing, deterministic ranking
//! and seed derivation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Number of items in the top `fraction` of `n` items: `⌈fraction·n⌉`, at
/// least 1 and at most `n`.
///
/// A small tolerance absorbs products such as `0.07 * 100 = 7.000000000000001`.
pub fn ceil_count(fraction: f64, n: usize) -> usize {
    if n == 0 {
        return 0;
    }
    let raw = (fraction * n as f64 - 1e-9).ceil();
    (raw.max(1.0) as usize).min(n)
}

/// Indices of `values` sorted by descending value, ties broken by ascending
/// index. Index order equals id order for pools built by this crate.
pub fn rank_descending(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent seed for `(seed, cycle, stream)`. Streams keep the
/// random draws of different consumers within one cycle apart.
pub fn derive_seed(seed: u64, cycle: u64, stream: u64) -> u64 {
    mix64(mix64(mix64(seed) ^ cycle) ^ stream.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ceil_count_rules() {
        assert_eq!(ceil_count(0.1, 20), 2);
        assert_eq!(ceil_count(0.1, 5), 1);
        assert_eq!(ceil_count(0.07, 100), 7);
        assert_eq!(ceil_count(1.0, 13), 13);
        assert_eq!(ceil_count(0.01, 1000), 10);
        assert_eq!(ceil_count(0.5, 0), 0);
    }

    #[test]
    fn ranking_breaks_ties_by_index() {
        assert_eq!(rank_descending(&[1.0, 3.0, 3.0, 2.0]), vec![1, 2, 3, 0]);
    }

    #[test]
    fn derived_seeds_differ_by_cycle_and_stream() {
        let a = derive_seed(7, 1, 0);
        assert_ne!(a, derive_seed(7, 2, 0));
        assert_ne!(a, derive_seed(7, 1, 1));
        assert_ne!(a, derive_seed(8, 1, 0));
        assert_eq!(a, derive_seed(7, 1, 0));
    }
}
