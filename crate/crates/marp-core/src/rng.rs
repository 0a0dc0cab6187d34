//! Deterministic RNG derivation.
//!
//! Every random decision in the crate flows from a `u64` seed through
//! ChaCha8 streams. A consumer asks for a stream by label so that two
//! consumers sharing one episode seed never overlap, and so that adding
//! a consumer does not shift the draws of existing ones.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream labels. Keep the discriminants stable: they are part of what a
/// seed means, and changing them silently changes every trajectory.
#[derive(Debug, Clone, Copy)]
pub enum Stream {
    ScenarioGen = 1,
    Opponent = 2,
    Planner = 3,
    Suite = 4,
    Eval = 5,
}

/// ChaCha stream for `(seed, stream, lane)`; `lane` distinguishes peers
/// of the same kind, e.g. the agent index for per-opponent streams.
pub fn rng_for(seed: u64, stream: Stream, lane: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 32) | (lane & 0xffff_ffff));
    rng
}
