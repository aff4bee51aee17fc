//! Counter-based seeding.
//!
//! Every random stream is addressed by a [`SeedTuple`]: the experiment seed
//! keys a ChaCha8 generator and the remaining components select its stream.
//! There is no shared generator anywhere in the crate, so concurrent trials
//! draw identical numbers regardless of scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Role tags separating the independent streams used inside one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Role {
    SourceA = 1,
    SourceB = 2,
    NoiseA = 3,
    NoiseB = 4,
    ResampleA = 5,
    ResampleB = 6,
    Empirical = 7,
    Instance = 8,
    Calibration = 9,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedTuple {
    pub seed: u64,
    pub trial: u64,
    pub tag: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl SeedTuple {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            trial: 0,
            tag: 0,
        }
    }

    pub fn trial(self, trial: u64) -> Self {
        Self { trial, ..self }
    }

    /// Folds an extra key component (cell index, sigma bits, role) into the tag.
    pub fn with(self, key: u64) -> Self {
        Self {
            tag: splitmix(self.tag ^ splitmix(key)),
            ..self
        }
    }

    pub fn role(self, role: Role) -> Self {
        self.with(role as u64)
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(splitmix(self.trial.wrapping_mul(0x2545_f491_4f6c_dd1d) ^ self.tag));
        rng
    }
}
