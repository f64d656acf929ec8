//! Seed derivation. Every random source in a scenario is a separate
//! ChaCha stream keyed off the one scenario seed, so adding draws to one
//! component never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Random-source roles inside one scenario run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Role {
    Stream = 1,
    Pretrain = 2,
    ModelInit = 3,
    Trainer = 4,
    Teacher = 5,
    Transport = 6,
    Holdout = 7,
    PretrainOrder = 8,
}

pub fn rng_for(seed: u64, role: Role) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(role as u64);
    rng
}
