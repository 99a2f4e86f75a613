//! Named random substreams derived from one master seed.
//!
//! Every consumer of randomness draws from its own ChaCha stream so that
//! switching one noise source off leaves the draws of the others untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Substream {
    Disturbance = 1,
    Observation = 2,
    Jitter = 3,
    Resampling = 4,
    Reinit = 5,
    MonteCarlo = 6,
    Init = 7,
    Scenario = 8,
    Verify = 9,
    Sweep = 10,
}

#[derive(Debug, Clone, Copy)]
pub struct Streams {
    master: u64,
}

impl Streams {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn get(&self, which: Substream) -> SimRng {
        self.indexed(which, 0)
    }

    /// Stream `index` of family `which`; used for per-trial and per-shard
    /// streams.
    pub fn indexed(&self, which: Substream, index: u64) -> SimRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(((which as u64) << 48) | (index & 0xFFFF_FFFF_FFFF));
        rng
    }
}
