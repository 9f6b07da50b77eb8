//! Stacked-GRU language modelling with out-of-distribution state contraction.
//!
//! The pipeline has three stages: train a GRU language model, freeze it and
//! fit a random-network-distillation detector on its hidden states, then at
//! inference shrink each hidden state by `alpha * exp(-beta * score)` so that
//! unfamiliar context is forgotten.

// `!(x > 0.0)` is the idiom used to reject NaN alongside out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod contraction;
pub mod error;
pub mod evaluation;
pub mod harness;
pub mod lm;
pub mod numerics;
pub mod parallel;
pub mod rnd;
pub mod rng;
pub mod synth;
pub mod tokenization;
pub mod training;

pub use error::{Error, Result};
