//! Named random sub-streams derived from one user seed.

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

/// Independent consumers of randomness. Each gets its own ChaCha stream so
/// that, for example, changing the sampler does not perturb the corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Corpus = 1,
    Sampler = 2,
    Init = 3,
    Heldout = 4,
    Check = 5,
}

pub fn rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream as u64);
    r
}
