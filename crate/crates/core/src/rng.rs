//! Seeded random streams. Every consumer asks for its own stream index so
//! results do not depend on the order in which independent jobs run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream indices reserved per stage.
pub mod streams {
    pub const ORACLE: u64 = 1;
    pub const RESTART_BASE: u64 = 1 << 16;
    pub const SELFTEST_BASE: u64 = 1 << 32;
    pub const GEN_BASE: u64 = 1 << 40;
}
