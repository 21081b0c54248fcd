//! Seeded random streams.
//!
//! Every sampler takes a master seed and a stream id. Streams never overlap,
//! so results do not depend on call order or on how work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream ids for the independent consumers of one master seed.
pub mod stream {
    pub const GENERATOR: u64 = 1;
    pub const COVARIANCE: u64 = 2;
    pub const TRAIN_LATENTS: u64 = 3;
    pub const VAL_LATENTS: u64 = 4;
    pub const TEST_LATENTS: u64 = 5;
    pub const INIT: u64 = 6;
    pub const PROBES: u64 = 7;
    pub const PARTITIONS: u64 = 8;
    /// Per-epoch shuffles use `SHUFFLE_BASE + epoch`.
    pub const SHUFFLE_BASE: u64 = 1 << 32;
}

pub fn stream_rng(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
