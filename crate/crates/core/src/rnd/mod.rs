//! Random-network-distillation OOD scoring over recurrent hidden states.
//!
//! Each LM layer gets a frozen random teacher `T` and a trainable student `S`;
//! the score of a state `h` is `|T(h) - S(h)|^2`. Students only learn to match
//! the teacher where they were trained, so the score grows off-distribution.

mod detector;
mod net;
mod train;

pub use detector::{ConstantScorer, LayerDetector, OodScorer, RndDetector};
pub use net::{MlpLayer, RESIDUAL_BLOCKS};
pub use train::{train_student, StudentReport};
