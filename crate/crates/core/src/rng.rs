//! Seed derivation. Every random stream comes from one root seed; each
//! purpose gets its own ChaCha stream, and per-item seeds are drawn from it
//! by index, so results never depend on evaluation order.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Independent consumers of randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Data = 1,
    Noise = 2,
    Init = 3,
    Shuffle = 4,
    Mask = 5,
    Split = 6,
}

/// Generator for `purpose` under `root`.
pub fn stream(root: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(purpose as u64);
    rng
}

/// The `index`-th derived seed for `purpose`; a pure function of its inputs.
pub fn derive_seed(root: u64, purpose: Purpose, index: u64) -> u64 {
    let mut rng = stream(root, purpose);
    rng.set_word_pos(u128::from(index) * 2);
    rng.next_u64()
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
