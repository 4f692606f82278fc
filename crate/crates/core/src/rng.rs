//! Named deterministic random streams.
//!
//! Each concern draws from its own ChaCha stream derived from the run seed, so
//! adding draws in one concern leaves the others untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    Placement,
    Fading,
    Shadowing,
    Kmeans,
    Harq,
    PrbPlacement,
}

impl StreamKind {
    fn tag(self) -> u64 {
        match self {
            StreamKind::Placement => 0x706c_6163,
            StreamKind::Fading => 0x6661_6469,
            StreamKind::Shadowing => 0x7368_6164,
            StreamKind::Kmeans => 0x6b6d_6561,
            StreamKind::Harq => 0x6861_7271,
            StreamKind::PrbPlacement => 0x7072_6270,
        }
    }
}

/// SplitMix64 finaliser; used only to decorrelate seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, kind: StreamKind) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix64(seed ^ mix64(kind.tag())))
}

/// A generator that depends only on `(seed, kind, key)`, not on draw order.
pub fn keyed(seed: u64, kind: StreamKind, key: &[u64]) -> ChaCha8Rng {
    let mut h = mix64(seed ^ mix64(kind.tag()));
    for &k in key {
        h = mix64(h ^ k);
    }
    ChaCha8Rng::seed_from_u64(h)
}

#[derive(Debug, Clone)]
pub struct RngStreams {
    pub placement: ChaCha8Rng,
    pub fading: ChaCha8Rng,
    pub kmeans: ChaCha8Rng,
    pub harq: ChaCha8Rng,
    pub prb: ChaCha8Rng,
    seed: u64,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        RngStreams {
            placement: stream(seed, StreamKind::Placement),
            fading: stream(seed, StreamKind::Fading),
            kmeans: stream(seed, StreamKind::Kmeans),
            harq: stream(seed, StreamKind::Harq),
            prb: stream(seed, StreamKind::PrbPlacement),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}
