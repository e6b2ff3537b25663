//! Deterministic hashing used by the synthetic trainer and the scheduler.
//!
//! Component `j` of entity `e` at version `v` is
//! `splitmix64(seed ^ fnv1a64(key ++ le_u64(j))) / 2^63 - 1`, where `key` is
//! the canonical key of `(v, e)`. Coverage draws use
//! `splitmix64(seed ^ fnv1a64(key) ^ 0x9E37) / 2^64`.

use alloc::vec::Vec;

use crate::key::canonical_key;
use crate::types::{EmbeddingVersion, EntityId};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const COVERAGE_SALT: u64 = 0x9E37;

/// Streaming 64-bit FNV-1a.
#[derive(Debug, Clone, Copy)]
pub struct Fnv1a64(u64);

impl Default for Fnv1a64 {
    fn default() -> Self {
        Self(FNV_OFFSET)
    }
}

impl Fnv1a64 {
    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(FNV_PRIME);
        }
    }

    pub fn finish(self) -> u64 {
        self.0
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = Fnv1a64::default();
    h.write(bytes);
    h.finish()
}

/// The splitmix64 output function applied to `x + golden_gamma`.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sequential splitmix64 stream; output `n` is `splitmix64(seed + n * gamma)`.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        let out = splitmix64(self.state);
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        out
    }

    /// Uniform-ish index in `0..n` by modulo reduction. `n` must be non-zero.
    pub fn below(&mut self, n: u64) -> u64 {
        self.next_u64() % n
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

const TWO_POW_63: f64 = 9_223_372_036_854_775_808.0;
const TWO_POW_64: f64 = 18_446_744_073_709_551_616.0;

/// One hashed component for the given canonical key.
pub fn hashed_component(seed: u64, key: &str, component: u64) -> f64 {
    let mut h = Fnv1a64::default();
    h.write(key.as_bytes());
    h.write(&component.to_le_bytes());
    let u = splitmix64(seed ^ h.finish());
    u as f64 / TWO_POW_63 - 1.0
}

/// Full synthetic vector of `entity` at `version`.
pub fn hashed_vector(seed: u64, version: &EmbeddingVersion, entity: &EntityId) -> Vec<f64> {
    let key = canonical_key(version, entity);
    (0..version.type_id.dimension() as u64)
        .map(|j| hashed_component(seed, &key, j))
        .collect()
}

/// The coverage draw in `[0, 1]` for `entity` at `version`.
pub fn coverage_draw(seed: u64, version: &EmbeddingVersion, entity: &EntityId) -> f64 {
    let key = canonical_key(version, entity);
    splitmix64(seed ^ fnv1a64(key.as_bytes()) ^ COVERAGE_SALT) as f64 / TWO_POW_64
}

/// Whether the trainer emits a record for `entity` at `version`. A fraction
/// of 1.0 or more always covers, even when the draw rounds up to 1.0.
pub fn is_covered(seed: u64, version: &EmbeddingVersion, entity: &EntityId, fraction: f64) -> bool {
    fraction >= 1.0 || coverage_draw(seed, version, entity) < fraction
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::EmbeddingTypeId;

    #[test]
    fn reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(splitmix64(0), 0xe220_a839_7b1d_cdaf);
        let mut s = SplitMix64::new(0);
        assert_eq!(s.next_u64(), 0xe220_a839_7b1d_cdaf);
        assert_eq!(s.next_u64(), 0x6e78_9e6a_a1b9_65f4);
    }

    #[test]
    fn hashed_vector_regression() {
        // Computed by an independent big-integer evaluation of the generator.
        let t = EmbeddingTypeId::new("mf", "base", 4).unwrap();
        let v = hashed_vector(7, &t.at(1), &EntityId::item("i1").unwrap());
        assert_eq!(
            v,
            [
                0.532275886274634,
                0.43639118960787227,
                -0.3919078501796083,
                -0.9515725102356001
            ]
        );
        assert_eq!(
            coverage_draw(7, &t.at(1), &EntityId::item("i1").unwrap()),
            0.3999430175727653
        );
    }

    #[test]
    fn coverage_extremes() {
        let t = EmbeddingTypeId::new("mf", "base", 4).unwrap();
        let e = EntityId::item("i1").unwrap();
        assert!(is_covered(1, &t.at(1), &e, 1.0));
        assert!(!is_covered(1, &t.at(1), &e, 0.0));
    }

    #[test]
    fn unit_is_half_open() {
        let mut s = SplitMix64::new(99);
        for _ in 0..1000 {
            let u = s.unit();
            assert!((0.0..1.0).contains(&u));
        }
    }
}
