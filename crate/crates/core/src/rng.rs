//! Deterministic random streams.
//!
//! All randomness is drawn from counter-based ChaCha streams keyed by an
//! explicit `(seed, stream)` pair, so parallel consumers (one stream per
//! walk) reproduce bit-identically regardless of scheduling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// RNG for stream `stream` of the experiment keyed by `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
