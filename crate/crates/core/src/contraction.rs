//! Inference-time state contraction `h(t+1) = h̃ · α · exp(−β · OOD(h̃))`.
//!
//! In a stack, the scaled lower-layer state is the input of the layer above
//! within the same step.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::lm::{InferenceState, LmParameters};
use crate::numerics::kernels;
use crate::rnd::OodScorer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Off,
    Full,
    Ablation,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Off => "off",
            Mode::Full => "full",
            Mode::Ablation => "ablation",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(Mode::Off),
            "full" => Ok(Mode::Full),
            "ablation" => Ok(Mode::Ablation),
            _ => Err(Error::config(format!(
                "unknown contraction mode {s:?} (off, full, ablation)"
            ))),
        }
    }
}

/// Whether each layer uses its own detector's score or the layer average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sharing {
    #[default]
    PerLayer,
    Shared,
}

impl Sharing {
    pub fn name(self) -> &'static str {
        match self {
            Sharing::PerLayer => "per-layer",
            Sharing::Shared => "shared",
        }
    }
}

impl FromStr for Sharing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-layer" => Ok(Sharing::PerLayer),
            "shared" => Ok(Sharing::Shared),
            _ => Err(Error::config(format!(
                "unknown score sharing {s:?} (per-layer, shared)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionConfig {
    pub alpha: f64,
    pub beta: f64,
    pub mode: Mode,
    pub sharing: Sharing,
}

impl Default for ContractionConfig {
    fn default() -> Self {
        ContractionConfig {
            alpha: 1.0,
            beta: 1.0,
            mode: Mode::Off,
            sharing: Sharing::PerLayer,
        }
    }
}

impl ContractionConfig {
    pub fn with_mode(mode: Mode) -> Self {
        ContractionConfig {
            mode,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::config(format!("beta must be non-negative, got {}", self.beta)));
        }
        Ok(())
    }
}

/// `α · exp(−β · score)`.
pub fn scale_factor(score: f64, config: &ContractionConfig) -> Result<f64> {
    if !(score >= 0.0) {
        return Err(Error::Numerical(format!("OOD score must be non-negative, got {score}")));
    }
    Ok(config.alpha * (-config.beta * score).exp())
}

/// Everything the readout needs from one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    /// Top-layer vector fed to the readout.
    pub readout_input: Vec<f64>,
    pub distribution: Vec<f64>,
}

/// A language model together with an optional detector and contraction settings.
#[derive(Clone, Copy)]
pub struct Contractor<'a> {
    params: &'a LmParameters,
    scorer: Option<&'a dyn OodScorer>,
    config: ContractionConfig,
}

impl<'a> Contractor<'a> {
    /// `scorer` may be omitted only in mode `off`. A scorer built for a
    /// different model is rejected.
    pub fn new(params: &'a LmParameters, scorer: Option<&'a dyn OodScorer>, config: ContractionConfig) -> Result<Self> {
        config.validate()?;
        match scorer {
            Some(s) => {
                let fp = params.fingerprint();
                if s.lm_hash() != fp {
                    return Err(Error::Mismatch {
                        what: "detector language-model hash",
                        expected: fp,
                        found: s.lm_hash().to_string(),
                    });
                }
                if s.num_layers() != params.layers() || s.dim() != params.hidden() {
                    return Err(Error::Mismatch {
                        what: "detector geometry (layers x d)",
                        expected: format!("{}x{}", params.layers(), params.hidden()),
                        found: format!("{}x{}", s.num_layers(), s.dim()),
                    });
                }
            }
            None if config.mode != Mode::Off => {
                return Err(Error::config(format!(
                    "contraction mode {} needs a detector",
                    config.mode
                )))
            }
            None => {}
        }
        Ok(Contractor { params, scorer, config })
    }

    pub fn baseline(params: &'a LmParameters) -> Self {
        Contractor {
            params,
            scorer: None,
            config: ContractionConfig::default(),
        }
    }

    pub fn params(&self) -> &'a LmParameters {
        self.params
    }

    pub fn config(&self) -> &ContractionConfig {
        &self.config
    }

    pub fn has_scorer(&self) -> bool {
        self.scorer.is_some()
    }

    fn score_of(&self, layer: usize, h: &[f64]) -> Result<f64> {
        match self.scorer {
            Some(s) => s.score(layer, h),
            None => Ok(0.0),
        }
    }

    fn shared(scores: &[f64]) -> f64 {
        scores.iter().sum::<f64>() / scores.len() as f64
    }

    /// Advances `state` by `token` and returns the readout input. Candidates
    /// and per-layer scores of this step are stored in the state; with no
    /// detector the scores are left empty.
    pub fn step(&self, state: &mut InferenceState, token: u32) -> Result<Vec<f64>> {
        let p = self.params;
        if state.layers() != p.layers() {
            return Err(Error::Mismatch {
                what: "state layer count",
                expected: p.layers().to_string(),
                found: state.layers().to_string(),
            });
        }
        let per_layer_full = self.config.mode == Mode::Full && self.config.sharing == Sharing::PerLayer;
        let mut input = p.embed(token)?.to_vec();
        let mut candidates = Vec::with_capacity(p.layers());
        let mut scores = Vec::with_capacity(p.layers());
        for l in 0..p.layers() {
            let cand = p.gru_step(l, &state.hidden[l], &input)?;
            let score = self.score_of(l, &cand)?;
            let mut next = cand.clone();
            if per_layer_full {
                let f = scale_factor(score, &self.config)?;
                next.iter_mut().for_each(|x| *x *= f);
            }
            input.clone_from(&next);
            state.hidden[l] = next;
            candidates.push(cand);
            scores.push(score);
        }
        if self.config.mode == Mode::Full && self.config.sharing == Sharing::Shared {
            let f = scale_factor(Self::shared(&scores), &self.config)?;
            for h in &mut state.hidden {
                h.iter_mut().for_each(|x| *x *= f);
            }
        }
        let mut readout = state.top().to_vec();
        if self.config.mode == Mode::Ablation {
            let s = match self.config.sharing {
                Sharing::PerLayer => *scores.last().expect("at least one layer"),
                Sharing::Shared => Self::shared(&scores),
            };
            let f = scale_factor(s, &self.config)?;
            readout.iter_mut().for_each(|x| *x *= f);
        }
        state.candidates = candidates;
        state.scores = if self.scorer.is_some() { scores } else { Vec::new() };
        state.step += 1;
        Ok(readout)
    }

    /// [`Contractor::step`] followed by the readout.
    pub fn predict(&self, state: &mut InferenceState, token: u32) -> Result<StepOutput> {
        let readout_input = self.step(state, token)?;
        let distribution = self.params.mos_readout(&readout_input)?;
        Ok(StepOutput {
            readout_input,
            distribution,
        })
    }

    /// Teacher-forced scoring of `ids` (consumes `ids[t]`, predicts `ids[t+1]`).
    pub fn trace(&self, ids: &[u32], state: &mut InferenceState) -> Result<Vec<TokenTrace>> {
        if ids.is_empty() {
            return Err(Error::data("cannot score an empty sequence"));
        }
        let mut out = Vec::with_capacity(ids.len() - 1);
        for pair in ids.windows(2) {
            let step = self.predict(state, pair[0])?;
            let p = step.distribution[pair[1] as usize];
            if !(p > 0.0) {
                return Err(Error::Numerical(format!(
                    "zero probability for target {} at step {}",
                    pair[1], state.step
                )));
            }
            out.push(TokenTrace {
                target: pair[1],
                log_prob: p.ln(),
                scores: state.scores.clone(),
                readout_norm: kernels::norm(&step.readout_input),
                entropy: kernels::entropy(&step.distribution),
            });
        }
        Ok(out)
    }
}

/// Per-prediction record of a traced sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenTrace {
    pub target: u32,
    pub log_prob: f64,
    /// Per-layer normalised OOD scores; empty without a detector.
    pub scores: Vec<f64>,
    /// L2 norm of the vector fed to the readout.
    pub readout_norm: f64,
    /// Natural-log entropy of the predicted distribution.
    pub entropy: f64,
}
