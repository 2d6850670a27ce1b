//! Seeded, portable random streams.
//!
//! Every consumer draws from its own ChaCha8 stream derived from the
//! experiment seed, so adding draws to one purpose never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Workload = 1,
    Availability = 2,
    Bandwidth = 3,
    Latency = 4,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
