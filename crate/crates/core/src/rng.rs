//! Counter-based randomness.
//!
//! Every random draw in a simulation is a pure function of a master seed and
//! the coordinates of the draw (slot, user, kind of draw). Streams therefore
//! do not depend on evaluation order or on how replications are chunked
//! across threads.

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer. Bijective on `u64` with full avalanche.
#[inline]
pub fn avalanche(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a sequence of words into one well-mixed word.
#[inline]
pub fn mix(words: &[u64]) -> u64 {
    let mut h = 0x243f_6a88_85a3_08d3_u64;
    for &w in words {
        h = avalanche(h.wrapping_add(GOLDEN_GAMMA) ^ avalanche(w.wrapping_add(GOLDEN_GAMMA)));
    }
    h
}

/// Maps the top 53 bits of a word to a double in [0, 1).
#[inline]
pub fn to_unit(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Tag distinguishing the two draws a user makes in each slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum DrawTag {
    Arrival = 0x41,
    Window = 0x57,
}

/// Seed of replication `r` under a master seed.
#[inline]
pub fn replication_seed(master: u64, replication: u64) -> u64 {
    mix(&[master, replication])
}

/// Uniform variate for one (slot, user, tag) coordinate of a stream.
#[inline]
pub fn slot_uniform(seed: u64, slot: u64, user: usize, tag: DrawTag) -> f64 {
    to_unit(mix(&[seed, slot, user as u64, tag as u64]))
}

/// Sequential SplitMix64 state, passed by value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState(pub u64);

impl RngState {
    pub fn new(seed: u64) -> Self {
        RngState(seed)
    }

    /// Returns the next word and the advanced state.
    #[inline]
    pub fn next_u64(self) -> (u64, RngState) {
        let s = self.0.wrapping_add(GOLDEN_GAMMA);
        (avalanche(s), RngState(s))
    }

    #[inline]
    pub fn next_unit(self) -> (f64, RngState) {
        let (x, s) = self.next_u64();
        (to_unit(x), s)
    }
}
