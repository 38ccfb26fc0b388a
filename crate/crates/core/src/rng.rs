//! Seeded, splittable random streams.
//!
//! Every consumer of randomness asks for a stream by `(seed, purpose, index)`.
//! The purpose tag separates independent uses of the same user seed, and the
//! index selects a ChaCha stream so that, for example, example `i` of a
//! generated dataset always sees the same variates no matter the order in which
//! examples are produced.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng as StreamRng;

/// What a random stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Data = 1,
    PublicData = 2,
    FreshData = 3,
    Shuffle = 4,
    GradientNoise = 5,
    ThresholdNoise = 6,
    MonteCarlo = 7,
    Split = 8,
    GroundTruth = 9,
    Diagnostics = 10,
    Trial = 11,
}

/// SplitMix64 finaliser.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and a label.
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    mix64(mix64(seed) ^ mix64(label.wrapping_mul(0xD6E8_FEB8_6659_FD93)))
}

/// The stream `index` of generator `(seed, purpose)`.
pub fn stream(seed: u64, purpose: Purpose, index: u64) -> StreamRng {
    StreamFamily::new(seed, purpose).get(index)
}

/// A family of index-keyed streams sharing one `(seed, purpose)` key.
#[derive(Debug, Clone)]
pub struct StreamFamily {
    base: StreamRng,
}

impl StreamFamily {
    pub fn new(seed: u64, purpose: Purpose) -> Self {
        Self {
            base: StreamRng::seed_from_u64(derive_seed(seed, purpose as u64)),
        }
    }

    pub fn get(&self, index: u64) -> StreamRng {
        let mut rng = self.base.clone();
        rng.set_stream(index);
        rng
    }
}
