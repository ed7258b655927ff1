//! One master seed fanned out into independent random streams.
//!
//! Each stream is a ChaCha generator keyed by the master seed and
//! addressed by a fixed stream id, so changing how much randomness one
//! consumer draws never shifts another consumer's values.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Data = 1,
    Init = 2,
    Perturbation = 3,
    Evaluation = 4,
    Dataset = 5,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStreams {
    master: u64,
}

impl SeedStreams {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn rng(&self, stream: Stream) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(stream as u64);
        rng
    }
}
