//! Latency-aware one-shot architecture search over a constrained
//! CNN-plus-transformer space.
//!
//! * [`space`]: architectures, stride-product constraint, counting, sampling.
//! * [`distribution`]: factored categorical sampling distribution in natural
//!   parameters, with score function and Fisher information.
//! * [`edge`]: supernet edges shared by the store and the benchmark.
//! * [`evaluator`]: synthetic benchmark, latency table, external protocol.
//! * [`supernet`]: block-partitioned score store and training strategies.
//! * [`search`]: natural-gradient, evolutionary and random search.
//! * [`analysis`]: rank correlations and experiment harnesses.

pub mod analysis;
pub mod distribution;
pub mod edge;
pub mod evaluator;
pub mod search;
pub mod space;
pub mod supernet;

use rand::SeedableRng;

/// Generator used for every seeded computation in the crate.
pub type SeededRng = rand_chacha::ChaCha8Rng;

/// Independent generator for one `stream` of a run seeded with `seed`.
pub fn derive_rng(seed: u64, stream: u64) -> SeededRng {
    let mut rng = SeededRng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
