//! Seeded random substreams.
//!
//! Every stochastic unit of work (one synthetic pair, one bootstrap replicate)
//! draws from its own ChaCha8 stream: the 64-bit seed keys the generator and
//! the unit index selects the ChaCha stream id. Results therefore depend only
//! on `(seed, index)`, never on scheduling or thread count. Gaussian variates
//! come from `rand_distr::StandardNormal` (ziggurat), which consumes the stream
//! deterministically.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids at or above this offset are reserved for auxiliary draws so they
/// never collide with per-unit streams.
const AUX_STREAM_BASE: u64 = 1 << 63;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Substreams {
    seed: u64,
}

impl Substreams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Generator for unit `index`.
    pub fn stream(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }

    /// Generator for auxiliary draw `index`, disjoint from all unit streams.
    pub fn aux(&self, index: u64) -> ChaCha8Rng {
        self.stream(AUX_STREAM_BASE | index)
    }
}
