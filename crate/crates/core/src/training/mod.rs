//! Optimisation loops: decaying-rate SGD for the language model and
//! constant-rate Adam for the distillation student, both with early stopping.

mod batch;
mod config;
mod lm;
mod log;
mod optim;
mod rnd_stage;

pub use batch::{batch_stream, Block};
pub use config::{OptimizerKind, TrainConfig};
pub use lm::{evaluate_stream, train_lm, LmTrainResult};
pub use log::{EpochRecord, TrainLog};
pub use optim::{Adam, Optimizer, Sgd};
pub use rnd_stage::{collect_states, train_rnd_stage};
