//! Labelled, indexable random streams.
//!
//! Every random decision in a run draws from a stream derived purely from
//! `(master_seed, label, index)`, so results never depend on call order or on
//! how work is spread across threads. The derivation is:
//!
//! ```text
//! h    = fnv1a64(label bytes)
//! a    = splitmix64(master_seed)
//! b    = splitmix64(a ^ h)
//! c    = splitmix64(b ^ index)
//! w_i  = splitmix64(c + i * 0x9E3779B97F4A7C15)   for i in 0..4
//! rng  = ChaCha8 seeded with w_0..w_3 as little-endian bytes
//! ```

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// A deterministic random stream identified by its derivation triple.
#[derive(Debug, Clone)]
pub struct RngStream {
    master_seed: u64,
    label: String,
    index: u64,
    rng: ChaCha8Rng,
}

pub fn derive_stream(master_seed: u64, label: &str, index: u64) -> RngStream {
    let a = splitmix64(master_seed);
    let b = splitmix64(a ^ fnv1a64(label.as_bytes()));
    let c = splitmix64(b ^ index);
    let mut seed = [0u8; 32];
    for (i, chunk) in seed.chunks_exact_mut(8).enumerate() {
        let w = splitmix64(c.wrapping_add((i as u64).wrapping_mul(GOLDEN_GAMMA)));
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    RngStream { master_seed, label: label.to_string(), index, rng: ChaCha8Rng::from_seed(seed) }
}

impl RngStream {
    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn next_f64(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in the open interval `(0, 1)`.
    pub fn next_open01(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, bound)`. `bound` must be nonzero.
    pub fn below(&mut self, bound: usize) -> usize {
        self.rng.random_range(0..bound)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn first_draws(seed: u64, label: &str, index: u64, n: usize) -> Vec<u64> {
        let mut s = derive_stream(seed, label, index);
        (0..n).map(|_| s.next_u64()).collect()
    }

    #[test]
    fn same_triple_same_sequence() {
        assert_eq!(first_draws(7, "seed", 0, 100), first_draws(7, "seed", 0, 100));
    }

    #[test]
    fn different_index_different_sequence() {
        let a = first_draws(7, "seed", 0, 100);
        let b = first_draws(7, "seed", 1, 100);
        assert!(a.iter().zip(&b).any(|(x, y)| x != y));
        assert_ne!(a[0], b[0]);
    }

    #[test]
    fn different_label_different_sequence() {
        assert_ne!(first_draws(7, "seed", 0, 4), first_draws(7, "group", 0, 4));
    }

    #[test]
    fn derivation_is_thread_independent() {
        let here = first_draws(7, "group", 3, 32);
        let there = std::thread::spawn(|| first_draws(7, "group", 3, 32)).join().unwrap();
        assert_eq!(here, there);
    }

    #[test]
    fn stream_remembers_its_triple() {
        let s = derive_stream(11, "random", 5);
        assert_eq!((s.master_seed(), s.label(), s.index()), (11, "random", 5));
    }

    #[test]
    fn open_unit_interval() {
        let mut s = derive_stream(1, "u", 0);
        for _ in 0..10_000 {
            let u = s.next_open01();
            assert!(u > 0.0 && u < 1.0);
            let v = s.next_f64();
            assert!((0.0..1.0).contains(&v));
        }
    }

    #[test]
    fn mixers_known_values() {
        // Reference values of the standard SplitMix64 and FNV-1a 64 constructions.
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn streams_look_independent() {
        // Correlation of paired uniforms across neighbouring indices stays near zero.
        let n = 20_000;
        let mut a = derive_stream(3, "group", 0);
        let mut b = derive_stream(3, "group", 1);
        let (mut sa, mut sb, mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let (x, y) = (a.next_f64(), b.next_f64());
            sa += x;
            sb += y;
            sab += x * y;
            saa += x * x;
            sbb += y * y;
        }
        let nf = n as f64;
        let cov = sab / nf - (sa / nf) * (sb / nf);
        let var_a = saa / nf - (sa / nf).powi(2);
        let var_b = sbb / nf - (sb / nf).powi(2);
        let corr = cov / (var_a * var_b).sqrt();
        assert!(corr.abs() < 0.03, "correlation {corr}");
        assert!((sa / nf - 0.5).abs() < 0.01);
    }
}
