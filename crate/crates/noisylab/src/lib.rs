//! Simulation toolkit for learning with noisy labels.
//!
//! The core idea: instead of flipping labels at random, train a pool of
//! imperfect "rater" models on clean data and let them label the rest.
//! Their mistakes concentrate on genuinely hard examples, so the resulting
//! noise is instance-dependent, and each rater's training metadata doubles
//! as rater features. On top of that sit the classic synthetic-noise
//! generators, the agreement and distance metrics used to evaluate noisy
//! datasets, a rater-feature-driven label corrector, robust-training
//! baselines, and an experiment harness for trend studies.
//!
//! Everything is seeded through [`seed::SeedSpec`] named streams and is
//! bit-reproducible.
//!
//! The `examples/` directory walks through each capability; start with
//! `cargo run --example rater_pool`. The `noisylab` binary exposes the same
//! pipeline as subcommands for file-based workflows.

pub mod bench;
pub mod cli;
pub mod data;
pub mod error;
pub mod lqm;
pub mod manifest;
pub mod metrics;
pub mod nnkit;
pub mod noise;
pub mod rater;
pub mod robust;
pub mod seed;

pub use data::{Dataset, Example, FiveSplits, GaussianTaskSpec, SoftLabel};
pub use error::{Error, Result};
pub use seed::SeedSpec;
