//! Deterministic stream derivation.
//!
//! Every random quantity in the crate is drawn from a stream derived from a
//! master seed, a domain label, and an index. Streams are independent by
//! construction, so ensemble members and Monte Carlo trials can run in
//! parallel without coordinating RNG state.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive an independent RNG stream from `(master, domain, index)`.
///
/// The 256-bit ChaCha key is the SHA-256 of the three components, so distinct
/// labels or indices never collide in practice.
pub fn stream(master: u64, domain: &str, index: u64) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update([0x1f]);
    hasher.update(domain.as_bytes());
    hasher.update([0x1f]);
    hasher.update(index.to_le_bytes());
    let key: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible() {
        let mut a = stream(7, "unit", 0);
        let mut b = stream(7, "unit", 0);
        let xs: Vec<u64> = (0..8).map(|_| a.random()).collect();
        let ys: Vec<u64> = (0..8).map(|_| b.random()).collect();
        assert_eq!(xs, ys);
    }

    #[test]
    fn streams_differ_across_domains_and_indices() {
        let mut a = stream(7, "unit", 0);
        let mut b = stream(7, "unit", 1);
        let mut c = stream(7, "other", 0);
        let x: u64 = a.random();
        let y: u64 = b.random();
        let z: u64 = c.random();
        assert_ne!(x, y);
        assert_ne!(x, z);
    }
}
