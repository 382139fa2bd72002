//! Seed stream splitting.
//!
//! Every random stream in the crate derives from one `u64` seed and a component
//! name, so adding or reordering consumers never perturbs other components.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStream {
    seed: u64,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent generator for `component`.
    pub fn rng(&self, component: &str) -> Rng {
        Rng::from_seed(self.digest(component, None))
    }

    /// Independent generator for item `index` of `component`.
    pub fn rng_at(&self, component: &str, index: u64) -> Rng {
        Rng::from_seed(self.digest(component, Some(index)))
    }

    /// A sub-stream whose own seed is derived from `component`.
    pub fn child(&self, component: &str) -> SeedStream {
        let d = self.digest(component, None);
        SeedStream::new(u64::from_le_bytes(d[..8].try_into().expect("8 bytes")))
    }

    fn digest(&self, component: &str, index: Option<u64>) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"dragonforge/");
        h.update(self.seed.to_le_bytes());
        h.update(component.as_bytes());
        if let Some(i) = index {
            h.update([0xff]);
            h.update(i.to_le_bytes());
        }
        h.finalize().into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn streams_are_stable_and_distinct() {
        let s = SeedStream::new(7);
        let a: u64 = s.rng("init").random();
        let b: u64 = s.rng("init").random();
        let c: u64 = s.rng("masking").random();
        let d: u64 = s.rng_at("masking", 0).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(c, d);
        assert_ne!(SeedStream::new(8).rng("init").random::<u64>(), a);
    }
}
