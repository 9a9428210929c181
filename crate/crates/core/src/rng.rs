//! Keyed random substreams.
//!
//! Every stochastic decision draws from a ChaCha8 stream whose seed is the
//! SHA-256 of a labelled key. Streams therefore depend only on what is being
//! decided, never on call order or timing.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type EngineRng = ChaCha8Rng;

/// Builder for a stream key. Parts are length-prefixed so `("ab","c")` and
/// `("a","bc")` never collide.
#[derive(Clone)]
pub struct StreamKey {
    hasher: Sha256,
}

impl StreamKey {
    pub fn new(domain: &str) -> Self {
        let mut key = Self { hasher: Sha256::new() };
        key = key.str(domain);
        key
    }

    pub fn u64(mut self, v: u64) -> Self {
        self.hasher.update([8u8]);
        self.hasher.update(v.to_le_bytes());
        self
    }

    pub fn str(mut self, s: &str) -> Self {
        self.hasher.update([1u8]);
        self.hasher.update((s.len() as u64).to_le_bytes());
        self.hasher.update(s.as_bytes());
        self
    }

    pub fn seed(self) -> [u8; 32] {
        self.hasher.finalize().into()
    }

    pub fn rng(self) -> EngineRng {
        EngineRng::from_seed(self.seed())
    }

    /// Uniform draw in `[0, 1)` from the first 53 bits of the digest.
    pub fn unit(self) -> f64 {
        let seed = self.seed();
        let bits = u64::from_le_bytes(seed[..8].try_into().unwrap()) >> 11;
        bits as f64 / (1u64 << 53) as f64
    }
}

/// Generator for one episode, keyed by run seed and prompt position.
pub fn episode_rng(seed: u64, prompt_index: usize) -> EngineRng {
    StreamKey::new("episode").u64(seed).u64(prompt_index as u64).rng()
}

/// Goal sampling generator; independent of the method and filter so paired
/// runs see identical goals.
pub fn goal_rng(seed: u64, prompt_index: usize) -> EngineRng {
    StreamKey::new("goal").u64(seed).u64(prompt_index as u64).rng()
}
