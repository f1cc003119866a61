//! Counter-based seed derivation.
//!
//! Every random stream is keyed by `(master seed, purpose label, index)`.
//! The sub-seed is the first eight bytes (little endian) of
//! `SHA-256(master_le || len(label)_le || label || index_le)`, so adding a
//! new purpose never shifts an existing stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

pub fn derive_seed(master: u64, label: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn stream(master: u64, label: &str, index: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, label, index))
}

pub fn standard_normal_vec<R: rand::Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derivation_is_stable_and_label_sensitive() {
        assert_eq!(derive_seed(7, "chain", 3), derive_seed(7, "chain", 3));
        assert_ne!(derive_seed(7, "chain", 3), derive_seed(7, "chain", 4));
        assert_ne!(derive_seed(7, "chain", 3), derive_seed(7, "chains", 3));
        assert_ne!(derive_seed(7, "chain", 3), derive_seed(8, "chain", 3));
    }

    #[test]
    fn label_boundaries_do_not_collide() {
        // length prefix keeps ("ab", idx) and ("a", ...) apart
        assert_ne!(derive_seed(1, "ab", 0), derive_seed(1, "a", 0));
    }

    #[test]
    fn streams_replay() {
        let a: Vec<u64> = (0..4).map(|_| 0).scan(stream(1, "x", 0), |r, _| Some(r.random())).collect();
        let b: Vec<u64> = (0..4).map(|_| 0).scan(stream(1, "x", 0), |r, _| Some(r.random())).collect();
        assert_eq!(a, b);
    }
}
