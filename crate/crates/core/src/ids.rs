//! Identifiers, weights and the deterministic digest used throughout the crate.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Simulated time, in integer ticks.
pub type Tick = u64;

/// Dense validator index in `[0, n)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ValidatorId(pub u32);

impl ValidatorId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ValidatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

impl From<usize> for ValidatorId {
    fn from(i: usize) -> Self {
        ValidatorId(i as u32)
    }
}

/// 64-bit digest of a unit's canonical encoding. The total order on hashes is
/// the tie-break order everywhere a tie-break is needed.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UnitHash(pub u64);

impl fmt::Debug for UnitHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "u:{:016x}", self.0)
    }
}

impl fmt::Display for UnitHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

/// 64-bit digest of a block.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BlockHash(pub u64);

impl fmt::Debug for BlockHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "b:{:016x}", self.0)
    }
}

impl fmt::Display for BlockHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

/// Parses the 16-digit hex form produced by `Display`.
pub fn parse_hex_u64(s: &str) -> Option<u64> {
    u64::from_str_radix(s, 16).ok()
}

/// First eight bytes (little-endian) of SHA-256 over `bytes`.
pub fn digest64(bytes: &[u8]) -> u64 {
    let out = Sha256::digest(bytes);
    let mut first = [0u8; 8];
    first.copy_from_slice(&out[..8]);
    u64::from_le_bytes(first)
}

/// Keyed deterministic mixing of a list of words, used wherever a pure
/// function of `(seed, ...)` is needed (delays, pseudorandom leaders).
pub fn mix(words: &[u64]) -> u64 {
    let mut buf = Vec::with_capacity(words.len() * 8);
    for w in words {
        buf.extend_from_slice(&w.to_le_bytes());
    }
    digest64(&buf)
}

/// Validator weights. Unweighted consensus is the all-ones map.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightMap {
    weights: Vec<u64>,
    total: u64,
}

impl WeightMap {
    /// Panics if any weight is zero or the list is empty; callers validate
    /// user input before getting here.
    pub fn new(weights: Vec<u64>) -> Self {
        assert!(!weights.is_empty(), "empty validator set");
        assert!(weights.iter().all(|w| *w > 0), "weights must be positive");
        let total = weights.iter().sum();
        WeightMap { weights, total }
    }

    pub fn uniform(n: usize) -> Self {
        WeightMap::new(vec![1; n])
    }

    pub fn n(&self) -> usize {
        self.weights.len()
    }

    /// `N`, the sum of all weights.
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn weight(&self, v: ValidatorId) -> u64 {
        self.weights[v.index()]
    }

    pub fn is_uniform(&self) -> bool {
        self.weights.iter().all(|w| *w == 1)
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.weights
    }

    pub fn ids(&self) -> impl Iterator<Item = ValidatorId> + '_ {
        (0..self.weights.len()).map(ValidatorId::from)
    }

    /// Summed weight of a set of validators.
    pub fn sum<'a>(&self, ids: impl IntoIterator<Item = &'a ValidatorId>) -> u64 {
        ids.into_iter().map(|v| self.weight(*v)).sum()
    }

    /// Strict majority: `2 * w > N`.
    pub fn is_majority(&self, w: u64) -> bool {
        2 * w > self.total
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn majority_is_strict() {
        let w = WeightMap::uniform(4);
        assert!(!w.is_majority(2));
        assert!(w.is_majority(3));
        let w = WeightMap::new(vec![4, 3, 2, 1]);
        assert!(w.is_majority(7));
        assert!(!w.is_majority(5));
    }

    #[test]
    fn digest_is_stable() {
        assert_eq!(digest64(b"abc"), digest64(b"abc"));
        assert_ne!(digest64(b"abc"), digest64(b"abd"));
        assert_eq!(mix(&[1, 2]), mix(&[1, 2]));
        assert_ne!(mix(&[1, 2]), mix(&[2, 1]));
    }
}
