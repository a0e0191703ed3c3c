//! Counter-based random substreams.
//!
//! Every unit of work (a bootstrap replicate, a Monte-Carlo replicate) gets
//! its own ChaCha stream keyed by the run seed and selected by the work
//! index, so results do not depend on how the work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type SubstreamRng = ChaCha12Rng;

/// The stream `stream` of the generator keyed by `seed`.
pub fn substream(seed: u64, stream: u64) -> SubstreamRng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fold a sequence of tags into a child seed.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}
