//! Embedding, stacked GRU recurrence and mixture-of-softmaxes readout.
//!
//! Two forward routes share one parameter store: [`infer`] runs on plain
//! slices for scoring and contraction, [`unrolled`] records a graph for
//! training. Tests hold them to each other.

mod infer;
mod params;
mod unrolled;

pub use infer::{InferenceState, SequenceScore};
pub use params::{GruIds, LmConfig, LmParameters};
pub use unrolled::{unrolled_nll, unrolled_nll_with, DropoutMasks, UnrolledOutput};
