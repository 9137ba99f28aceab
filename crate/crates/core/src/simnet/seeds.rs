//! Splitting one master seed into independent per-node, per-purpose streams.
//!
//! Child seed = `splitmix(splitmix(splitmix(splitmix(master) ^ role) ^ id) ^ purpose)`.
//! Each stream feeds its own ChaCha8 generator, so drawing more numbers for one
//! purpose never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Global = 1,
    Server = 2,
    Worker = 3,
    Adversary = 4,
    Network = 5,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Init = 1,
    Gradient = 2,
    Delivery = 3,
    Forge = 4,
    RoundRobin = 5,
    Measurement = 6,
}

/// SplitMix64 finaliser.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    master: u64,
}

impl SeedTree {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn child_seed(&self, role: Role, id: u64, purpose: Purpose) -> u64 {
        let h = splitmix64(self.master);
        let h = splitmix64(h ^ role as u64);
        let h = splitmix64(h ^ id);
        splitmix64(h ^ purpose as u64)
    }

    pub fn stream(&self, role: Role, id: u64, purpose: Purpose) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.child_seed(role, id, purpose))
    }
}
