//! Named, independent random substreams of a run seed.
//!
//! Each consumer (data order, VOCAMix donors, λ draws, temporal shuffles, ...)
//! gets its own ChaCha stream, so switching one feature on or off never
//! shifts another consumer's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    DataOrder = 2,
    Donor = 3,
    Lambda = 4,
    Shuffle = 5,
    Augment = 6,
    Probe = 7,
    Split = 8,
    Clip = 9,
}

pub fn substream(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Per-clip generator: deterministic in `(seed, counter)` alone.
pub fn clip_rng(seed: u64, counter: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((Stream::Clip as u64) << 48) | counter);
    rng
}
