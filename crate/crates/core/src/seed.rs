//! Named seed streams derived from one master seed.
//!
//! Each consumer of randomness (weight init, data shuffling, event order)
//! draws from its own stream, so changing how much randomness one component
//! uses never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStream {
    master: u64,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

impl SeedStream {
    pub fn new(master: u64) -> Self {
        SeedStream { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn derive(&self, name: &str) -> u64 {
        splitmix64(self.master ^ splitmix64(fnv1a(name.as_bytes())))
    }

    /// Sub-seed for the `index`-th item of a named stream.
    pub fn derive_indexed(&self, name: &str, index: u64) -> u64 {
        splitmix64(self.derive(name) ^ splitmix64(index))
    }

    pub fn rng(&self, name: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.derive(name))
    }

    pub fn child(&self, name: &str) -> SeedStream {
        SeedStream::new(self.derive(name))
    }
}
