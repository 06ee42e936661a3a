//! Seeded random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator seeded with
//! `ChaCha8Rng::seed_from_u64(seed)` and then moved onto a dedicated stream
//! `(purpose << 32) | replicate`. Two purposes never share a stream, so adding
//! draws to one consumer cannot shift the numbers seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a random stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u32)]
pub enum Purpose {
    Init = 1,
    Velocities = 2,
    Noise = 3,
    Split = 4,
    Subsample = 5,
}

pub fn stream(seed: u64, purpose: Purpose, replicate: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 32) | u64::from(replicate));
    rng
}
