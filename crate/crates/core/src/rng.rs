//! Named random streams derived from a master seed.
//!
//! Every consumer of randomness (arrivals of one appliance, its durations,
//! one agent's action noise, ...) gets its own ChaCha stream, so adding a
//! household or reordering loops never perturbs another stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Purpose {
    Arrival = 1,
    Duration = 2,
    Action = 3,
    Init = 4,
    Shuffle = 5,
    Evaluation = 6,
}

/// splitmix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the `index`-th child of `seed` (episodes, iterations, workers).
pub fn child_seed(seed: u64, index: u64) -> u64 {
    mix64(seed ^ mix64(index.wrapping_add(0x5eed)))
}

/// Stream for `(owner, slot, purpose)` under `seed`.
///
/// `owner` is usually a household or agent index, `slot` an appliance index.
pub fn stream(seed: u64, owner: usize, slot: usize, purpose: Purpose) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed));
    let id = ((owner as u64) << 32) | ((slot as u64) << 8) | purpose as u64;
    rng.set_stream(id);
    rng
}
