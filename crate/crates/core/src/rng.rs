//! Seeded random streams.
//!
//! Every consumer derives its generator from `(seed, stream)`, where the
//! stream identifies a sample index, an episode, or an epoch. ChaCha is
//! counter based, so the value a stream yields does not depend on how many
//! other streams were consumed before it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream namespaces so that distinct consumers of one seed never collide.
pub(crate) mod domain {
    pub const NOISE: u64 = 0x6e6f_6973;
    pub const INIT: u64 = 0x696e_6974;
    pub const SHUFFLE: u64 = 0x7368_7566;
    pub const SYNTH: u64 = 0x7379_6e74;
}

pub(crate) fn stream(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ domain.rotate_left(32));
    rng.set_stream(index);
    rng
}
