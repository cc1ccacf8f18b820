//! Seed-derived random streams.
//!
//! Every consumer of randomness in a run gets its own ChaCha stream keyed by
//! `(run seed, epoch, role)`, so that a stream never depends on how much
//! another stream has been consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Roles that own an independent stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Parameter initialisation of peer `j`.
    Init(usize),
    /// Base distortion and mask draws of peer `j`.
    Peer(usize),
    /// Shared mixing ratio and pairing permutation.
    MixPlan,
    /// Batch order.
    Shuffle,
    /// Peer-teacher initialisation.
    TeacherInit,
    /// Anything else keyed by a free-form tag.
    Other(u64),
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Init(j) => 0x1000 + j as u64,
            Stream::Peer(j) => 0x2000 + j as u64,
            Stream::MixPlan => 0x3000,
            Stream::Shuffle => 0x4000,
            Stream::TeacherInit => 0x5000,
            Stream::Other(t) => 0x1_0000_0000 ^ t,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the stream for `role` in `epoch` of the run seeded by `seed`.
pub fn stream(seed: u64, epoch: u64, role: Stream) -> Rng {
    let key = splitmix64(splitmix64(splitmix64(seed) ^ epoch) ^ role.tag());
    ChaCha8Rng::seed_from_u64(key)
}

/// A plain seeded generator, for one-off draws outside a training run.
pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
