use crate::error::{Error, Result};
use crate::parallel::Execution;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    /// SGD whose rate is multiplied by `decay` whenever validation stalls.
    SgdDecay,
    /// Adam with a fixed rate.
    AdamConstant,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::SgdDecay => "sgd-decay",
            OptimizerKind::AdamConstant => "adam-constant",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sgd-decay" => Ok(OptimizerKind::SgdDecay),
            "adam-constant" => Ok(OptimizerKind::AdamConstant),
            other => Err(Error::config(format!("unknown optimizer {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub decay: f64,
    pub patience: usize,
    pub max_epochs: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub batch_size: usize,
    /// Truncation length for backpropagation through time.
    pub bptt: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub exec: Execution,
}

impl TrainConfig {
    /// Language-model defaults.
    pub fn lm_default() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::SgdDecay,
            learning_rate: 1.0,
            decay: 0.5,
            patience: 3,
            max_epochs: 100,
            clip_norm: Some(0.25),
            batch_size: 20,
            bptt: 35,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            exec: Execution::default(),
        }
    }

    /// Distillation-student defaults.
    pub fn rnd_default() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::AdamConstant,
            learning_rate: 1e-3,
            decay: 1.0,
            patience: 3,
            max_epochs: 100,
            clip_norm: None,
            batch_size: 64,
            bptt: 1,
            ..Self::lm_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("decay", self.decay),
            ("adam_eps", self.adam_eps),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::config(format!("clip_norm must be positive, got {c}")));
            }
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if self.batch_size == 0 || self.bptt == 0 || self.max_epochs == 0 {
            return Err(Error::config("batch_size, bptt and max_epochs must be at least 1"));
        }
        Ok(())
    }
}
