//! Seeded synthetic clustered-deposit records.

pub mod generator;
pub mod rng;

pub use generator::{default_cooccurrence, gen_synthetic, SynthOutput, SynthParams};
pub use rng::{rng_next, SplitMix64};
