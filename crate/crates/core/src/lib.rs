//! Continual learning with regression awareness.
//!
//! A small rectifier network is trained over a stream of experiences with a
//! pluggable continual-learning strategy. Between consecutive model versions
//! the crate measures negative flips (samples the old model got right and the
//! new model gets wrong) and can add a positive-congruent training term that
//! distills the previous version's logits to suppress them.
//!
//! Module map:
//!
//! - [`nn`]: network, masked cross-entropy, SGD with momentum
//! - [`snapshot`]: frozen model versions and their file format
//! - [`data`], [`synth`]: sparse datasets, variance filter, synthetic drift
//! - [`scenarios`]: domain- and class-incremental streams
//! - [`strategies`]: naive, cumulative, replay, A-GEM, EWC, SI, LwF and the
//!   training loop
//! - [`pct`]: the positive-congruent regularizer
//! - [`metrics`]: flip rates, forgetting, aggregation
//! - [`harness`]: configuration, experiment runs, reports

pub mod data;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod pct;
pub mod rng;
pub mod scenarios;
pub mod snapshot;
pub mod strategies;
pub mod synth;

pub use error::{Error, Result};
