//! Counter-based random streams.
//!
//! Every draw is addressed by `(seed, channel, path, step)`: the seed and
//! channel key a ChaCha8 cipher, the path selects the cipher stream and the
//! step selects a fixed block of the keystream. Parallel and serial runs
//! therefore consume identical numbers regardless of scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named sub-streams. Adding a channel never perturbs existing ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Channel {
    Brownian = 1,
    JumpCount = 2,
    JumpMark = 3,
    Probe = 4,
    Kulik = 5,
    Control = 6,
}

/// Number of 32-bit keystream words reserved per step.
const WORDS_PER_STEP: u128 = 1 << 20;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and a label, e.g. one per control.
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    splitmix64(seed ^ splitmix64(label.wrapping_add(0xA5A5_A5A5)))
}

/// Random generator positioned at `(seed, channel, path, step)`.
pub fn stream(seed: u64, channel: Channel, path: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(channel as u64)));
    rng.set_stream(path);
    rng.set_word_pos(step as u128 * WORDS_PER_STEP);
    rng
}
