//! Counter-based seed derivation.
//!
//! Every random stream in a run (init, data order, per-sequence corruption,
//! eval masks) is seeded from the run seed plus a small tuple of counters, so
//! the stream for step `t` can be rebuilt without replaying steps `0..t`.
//! This is what makes checkpoint resume bit-exact.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used for every stochastic component.
pub type Rng = ChaCha8Rng;

/// Stream tags keep independent uses of the same counters apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    DataOrder = 2,
    Corruption = 3,
    EvalMask = 4,
    Synthetic = 5,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix a base seed, a stream tag and any number of counters into one seed.
pub fn derive_seed(base: u64, stream: Stream, counters: &[u64]) -> u64 {
    let mut h = splitmix64(base ^ splitmix64(stream as u64));
    for &c in counters {
        h = splitmix64(h ^ splitmix64(c.wrapping_add(0x632b_e59b_d9b4_e019)));
    }
    h
}

pub fn rng_for(base: u64, stream: Stream, counters: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(base, stream, counters))
}
