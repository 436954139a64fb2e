//! Derived random streams. Every consumer of randomness gets its own ChaCha
//! stream so that adding draws in one place never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    ParamInit = 1,
    Chain = 2,
    Minibatch = 3,
    Recovery = 4,
    Mask = 5,
    Gibbs = 6,
    Gradcheck = 7,
}

/// Stream for item `index` (chain, video, …): seeded with `seed ⊕ index`.
pub fn stream_rng(seed: u64, index: u64, stream: Stream) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index);
    rng.set_stream(stream as u64);
    rng
}
