//! Labelled deterministic random streams.
//!
//! Every stochastic component draws from a stream derived from the run seed
//! and a label. The derivation hashes `(seed, label)` with SHA-256 and uses
//! the digest as the key of a ChaCha generator, so a stream's contents depend
//! only on its label and never on the order in which other streams are used.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

/// A single-owner random stream.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    label: String,
    rng: ChaCha12Rng,
}

/// Derive the stream for `(seed, label)`.
///
/// Panics if `label` is empty.
pub fn rng_stream(seed: u64, label: &str) -> RngStream {
    assert!(!label.is_empty(), "rng stream label must be nonempty");
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((label.len() as u64).to_le_bytes());
    hasher.update(label.as_bytes());
    let key: [u8; 32] = hasher.finalize().into();
    RngStream {
        seed,
        label: label.to_owned(),
        rng: ChaCha12Rng::from_seed(key),
    }
}

impl RngStream {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Child stream labelled `<label>/<sub>`; independent of this stream's position.
    pub fn fork(&self, sub: &str) -> RngStream {
        rng_stream(self.seed, &format!("{}/{}", self.label, sub))
    }
}

impl rand::RngCore for RngStream {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }
    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
    #[inline]
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}
