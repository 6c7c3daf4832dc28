//! Counter-based random streams.
//!
//! Every consumer of randomness gets its own ChaCha8 stream keyed by the
//! master seed. The 64-bit stream id packs a purpose tag with two counters
//! (typically round and client), so a stream is a pure function of
//! `(seed, purpose, a, b)` and never depends on how many draws other
//! consumers made before it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// What a stream is used for. The discriminant is the high byte of the
/// stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Purpose {
    ClassCenters = 1,
    Samples = 2,
    Partition = 3,
    Init = 4,
    MiniBatch = 5,
    Schedule = 6,
    ClientSampler = 7,
    Probe = 8,
    GradientProbe = 9,
}

const COUNTER_BITS: u32 = 28;
const COUNTER_MASK: u64 = (1 << COUNTER_BITS) - 1;

/// Stream for `(seed, purpose, a, b)`. Counters must fit in 28 bits.
pub fn stream(seed: u64, purpose: Purpose, a: u64, b: u64) -> StreamRng {
    debug_assert!(a <= COUNTER_MASK && b <= COUNTER_MASK, "stream counter overflow");
    let id = (u64::from(purpose as u8) << (2 * COUNTER_BITS))
        | ((a & COUNTER_MASK) << COUNTER_BITS)
        | (b & COUNTER_MASK);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}
