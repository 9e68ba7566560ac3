use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Independent stream for `(seed, label)`, stable across platforms and runs.
pub(crate) fn derived_rng(seed: u64, label: &[u8]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label);
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

pub(crate) fn indexed_rng(seed: u64, domain: &str, index: u64) -> ChaCha8Rng {
    let mut label = domain.as_bytes().to_vec();
    label.extend_from_slice(&index.to_le_bytes());
    derived_rng(seed, &label)
}
