//! Keyed random streams.
//!
//! Every random quantity in a run is addressed by position rather than by
//! draw order: channel rates by `(seed, replication, slot, user)`, Monte Carlo
//! batches by `(seed, domain, batch)`. Two policies that consume different
//! numbers of draws therefore still see identical channels.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream domains keep independent uses of one seed apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Channel,
    Theory,
    Genie,
    Misc,
}

impl Domain {
    fn tag(self) -> u64 {
        match self {
            Domain::Channel => 0x6368_616e_6e65_6c00,
            Domain::Theory => 0x7468_656f_7279_0000,
            Domain::Genie => 0x6765_6e69_6500_0000,
            Domain::Misc => 0x6d69_7363_0000_0000,
        }
    }
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A ChaCha8 generator keyed by `(seed, domain)` positioned on `stream`.
pub fn keyed_rng(seed: u64, domain: Domain, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ domain.tag()));
    rng.set_stream(stream);
    rng
}

/// Random access to the per-slot channel draws of one replication.
///
/// User `k` in slot `n` always reads the same 64-bit word pair, whatever
/// the population size or the order in which slots are visited.
#[derive(Debug, Clone)]
pub struct ChannelStream {
    rng: ChaCha8Rng,
}

impl ChannelStream {
    pub fn new(seed: u64, replication: u64) -> Self {
        Self {
            rng: keyed_rng(seed, Domain::Channel, replication),
        }
    }

    /// Generator positioned at user 0 of `slot`; successive `u64` draws
    /// belong to users 0, 1, 2, ...
    pub fn at_slot(&mut self, slot: u64) -> &mut ChaCha8Rng {
        // two 32-bit words per u64 draw, 2^32 users per slot
        self.rng.set_word_pos(u128::from(slot) << 33);
        &mut self.rng
    }
}
