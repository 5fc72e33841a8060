//! Small numeric helpers: stable hashing, deterministic payload generation,
//! nearest-rank percentiles.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// FNV-1a over bytes; stable across platforms and versions.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Mix strings and integers into a payload seed.
pub fn payload_seed(base: u64, function: &str, key: &str) -> u64 {
    let mut h = fnv1a(function.as_bytes()) ^ base.rotate_left(17);
    h = h.wrapping_mul(0x100000001b3) ^ fnv1a(key.as_bytes());
    h
}

/// Deterministic pseudo-random payload of `len` bytes for the given seed.
pub fn payload_bytes(seed: u64, len: usize) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = vec![0u8; len];
    rng.fill_bytes(&mut buf);
    buf
}

/// Nearest-rank percentile of an unsorted sample; `q` in (0, 100].
pub fn percentile_nearest_rank(samples: &[u64], q: f64) -> Option<u64> {
    if samples.is_empty() {
        return None;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    let rank = ((q / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn payloads_are_reproducible() {
        let a = payload_bytes(payload_seed(7, "A", "x"), 4096);
        let b = payload_bytes(payload_seed(7, "A", "x"), 4096);
        assert_eq!(a, b);
        let c = payload_bytes(payload_seed(7, "A", "y"), 4096);
        assert_ne!(a, c);
    }

    #[test]
    fn nearest_rank_percentiles() {
        let v: Vec<u64> = (1..=100).collect();
        assert_eq!(percentile_nearest_rank(&v, 50.0), Some(50));
        assert_eq!(percentile_nearest_rank(&v, 99.0), Some(99));
        assert_eq!(percentile_nearest_rank(&v, 100.0), Some(100));
        assert_eq!(percentile_nearest_rank(&[42], 99.0), Some(42));
        assert_eq!(percentile_nearest_rank(&[], 50.0), None);
        // Nearest rank, not interpolation: p90 of 5 samples is the 5th.
        assert_eq!(percentile_nearest_rank(&[10, 20, 30, 40, 50], 90.0), Some(50));
    }
}
