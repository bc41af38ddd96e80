use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Named random streams. Each maps to a distinct ChaCha stream id, so draws in
/// one stream never perturb another.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    Data,
    Latent,
    Dropout,
    Init,
    Interpolation,
    Shuffle,
}

impl Stream {
    pub const ALL: [Stream; 6] = [
        Stream::Data,
        Stream::Latent,
        Stream::Dropout,
        Stream::Init,
        Stream::Interpolation,
        Stream::Shuffle,
    ];

    fn id(self) -> u64 {
        match self {
            Stream::Data => 1,
            Stream::Latent => 2,
            Stream::Dropout => 3,
            Stream::Init => 4,
            Stream::Interpolation => 5,
            Stream::Shuffle => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stream::Data => "data",
            Stream::Latent => "latent",
            Stream::Dropout => "dropout",
            Stream::Init => "init",
            Stream::Interpolation => "interpolation",
            Stream::Shuffle => "shuffle",
        }
    }
}

/// Seed from which every named stream is derived.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomState {
    pub seed: u64,
}

impl RandomState {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn stream(&self, stream: Stream) -> ChaCha8Rng {
        self.substream(stream, 0)
    }

    /// Independent generator for `(stream, index)`, e.g. one per sample so
    /// that generation order does not affect the draws.
    pub fn substream(&self, stream: Stream, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed, index));
        rng.set_stream(stream.id());
        rng
    }

    /// Derived state for a child component (e.g. per-scenario seeds).
    pub fn child(&self, salt: u64) -> RandomState {
        RandomState::new(mix(self.seed ^ 0xA076_1D64_78BD_642F, salt))
    }
}

// splitmix64 finalizer over the pair.
fn mix(a: u64, b: u64) -> u64 {
    let mut z = a
        .wrapping_add(b.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
