//! Seeded random streams. Trajectory `i` of a run seeded with `s` draws from
//! `ChaCha8Rng` seeded with `s ^ i`, split into independent streams per purpose.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Noise = 0,
    Initial = 1,
    Whitening = 2,
    NoiseBoundSearch = 3,
    MomentCheck = 4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrajectoryRng {
    pub seed: u64,
    pub index: u64,
}

impl TrajectoryRng {
    pub fn new(seed: u64, index: u64) -> Self {
        Self { seed, index }
    }

    pub fn stream(&self, which: Stream) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ self.index);
        rng.set_stream(which as u64);
        rng
    }
}
