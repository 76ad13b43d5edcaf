//! Seedable, splittable random streams.
//!
//! Every consumer of randomness asks for a stream by `(purpose, a, b)`, usually
//! `(purpose, worker, epoch)`. Streams are independent ChaCha8 streams under one
//! key, so adding workers or running them on different threads never changes
//! the numbers any single worker sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// What a stream is used for. Part of the stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Purpose {
    Dataset = 1,
    SampleIndex = 2,
    StepCost = 3,
    CommDelay = 4,
    EpochTail = 5,
    IdleSampleIndex = 6,
    IdleStepCost = 7,
    Constants = 8,
    MonteCarlo = 9,
    InitialPoint = 10,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamFactory {
    seed: u64,
}

impl StreamFactory {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, purpose: Purpose, a: u64, b: u64) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream_id(purpose, a, b));
        rng
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream_id(purpose: Purpose, a: u64, b: u64) -> u64 {
    let h = splitmix64(purpose as u64);
    let h = splitmix64(h ^ a);
    splitmix64(h ^ b.rotate_left(32))
}
