//! Named random substreams derived from a single run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Sampler = 2,
    Synth = 3,
    Validation = 4,
    Split = 5,
}

/// Independent generator for `(seed, stream, index)`. Batches draw from
/// `index = iteration`, so any iteration can be replayed without the
/// draws that preceded it.
pub fn substream(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    assert!(index < 1 << 48, "substream index out of range");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 48) | index);
    rng
}
