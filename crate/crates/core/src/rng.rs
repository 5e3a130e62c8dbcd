//! Counter-based random substreams.
//!
//! A master seed keys a ChaCha8 generator; the 64-bit stream id packs a
//! domain tag, a lane (one per queue, plus policy and shuffle lanes) and an
//! episode counter. Streams with different ids never overlap, so arrivals
//! do not depend on how many draws a policy makes, and evaluation streams
//! never coincide with training streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Domain {
    Eval = 1,
    Train = 2,
    Generate = 3,
    Test = 4,
}

pub const POLICY_LANE: u32 = 0xFFFF;
pub const SHUFFLE_LANE: u32 = 0xFFFE;
pub const MAX_EPISODE: u64 = (1 << 40) - 1;

pub fn substream(seed: u64, domain: Domain, episode: u64, lane: u32) -> SimRng {
    assert!(episode <= MAX_EPISODE, "episode counter {episode} exceeds 40 bits");
    assert!(lane <= 0xFFFF, "lane {lane} exceeds 16 bits");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((domain as u64) << 56) | ((lane as u64) << 40) | episode);
    rng
}

/// One arrival stream per queue plus a policy stream, for a single episode.
#[derive(Debug, Clone)]
pub struct EpisodeStreams {
    pub arrivals: Vec<SimRng>,
    pub policy: SimRng,
}

impl EpisodeStreams {
    pub fn new(seed: u64, domain: Domain, episode: u64, num_queues: usize) -> Self {
        EpisodeStreams {
            arrivals: (0..num_queues)
                .map(|q| substream(seed, domain, episode, q as u32))
                .collect(),
            policy: substream(seed, domain, episode, POLICY_LANE),
        }
    }
}
