use sha2::{Digest, Sha256};

use super::net::{Network, RESIDUAL_BLOCKS};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::numerics::{Graph, NodeId, ParamStore, Tensor};
use crate::rng;

/// Anything that can score hidden states of a specific language model.
pub trait OodScorer: Sync {
    fn num_layers(&self) -> usize;

    /// State width `d`.
    fn dim(&self) -> usize;

    /// Fingerprint of the language model this scorer belongs to.
    fn lm_hash(&self) -> &str;

    /// Squared distance `|T(h) - S(h)|^2` for the detector of `layer`.
    fn raw_score(&self, layer: usize, h: &[f64]) -> Result<f64>;

    /// Raw score divided by `d`; this is the value contraction consumes.
    fn score(&self, layer: usize, h: &[f64]) -> Result<f64> {
        Ok(self.raw_score(layer, h)? / self.dim() as f64)
    }
}

/// Teacher/student pair for one LM layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerDetector {
    pub teacher: ParamStore,
    pub student: ParamStore,
    teacher_net: Network,
    student_net: Network,
}

impl LayerDetector {
    fn create(d: usize, seed: u64, layer: usize) -> Self {
        let mut rng = rng::stream(seed, &format!("{}-layer{layer}", rng::RND_INIT));
        let mut teacher = ParamStore::new();
        let teacher_net = Network::create(&mut teacher, d, 0, &mut rng);
        // frozen at checkpoint precision so reloads are bit-identical
        teacher.round_to_f32();
        let mut student = ParamStore::new();
        let student_net = Network::create(&mut student, d, RESIDUAL_BLOCKS, &mut rng);
        LayerDetector {
            teacher,
            student,
            teacher_net,
            student_net,
        }
    }

    pub fn teacher_output(&self, h: &[f64]) -> Vec<f64> {
        self.teacher_net.forward(&self.teacher, h)
    }

    pub fn student_output(&self, h: &[f64]) -> Vec<f64> {
        self.student_net.forward(&self.student, h)
    }

    pub(crate) fn student_net(&self) -> &Network {
        &self.student_net
    }

    /// Records `|S(h) - target|^2` with student values read from `store`,
    /// which must share the layout of `self.student`.
    pub fn student_loss_node<'a>(
        &self,
        g: &mut Graph<'a>,
        store: &'a ParamStore,
        h: &[f64],
        target: &[f64],
    ) -> Result<NodeId> {
        let x = g.constant(Tensor::vector(h.to_vec()))?;
        let out = self.student_net.node(g, store, x)?;
        let t = g.constant(Tensor::vector(target.to_vec()))?;
        g.squared_error(out, t)
    }

    /// Copies the teacher's trunk into the student and zeroes every residual
    /// branch, making the student an exact replica of the teacher.
    pub fn mirror_teacher(&mut self) {
        for (t, s) in self.teacher_net.trunk.iter().zip(&self.student_net.trunk) {
            for (ti, si) in t.ids().into_iter().zip(s.ids()) {
                *self.student.get_mut(si) = self.teacher.get(ti).clone();
            }
        }
        for block in &self.student_net.blocks {
            for layer in block {
                let [w, b, _, shift] = layer.ids();
                for id in [w, b, shift] {
                    self.student.get_mut(id).fill(0.0);
                }
            }
        }
    }

    pub fn raw_score(&self, h: &[f64]) -> f64 {
        let t = self.teacher_output(h);
        let s = self.student_output(h);
        t.iter().zip(&s).map(|(a, b)| (a - b) * (a - b)).sum()
    }
}

/// One detector per LM layer, tied to the LM it was trained against.
#[derive(Debug, Clone, PartialEq)]
pub struct RndDetector {
    d: usize,
    seed: u64,
    pub lm_hash: String,
    pub layers: Vec<LayerDetector>,
}

impl RndDetector {
    pub fn init(seed: u64, d: usize, num_layers: usize) -> Result<Self> {
        if d == 0 || num_layers == 0 {
            return Err(Error::config("detector width and layer count must be positive"));
        }
        let layers = (0..num_layers).map(|l| LayerDetector::create(d, seed, l)).collect();
        Ok(RndDetector {
            d,
            seed,
            lm_hash: String::new(),
            layers,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn check(&self, layer: usize, h: &[f64]) -> Result<&LayerDetector> {
        let det = self
            .layers
            .get(layer)
            .ok_or_else(|| Error::config(format!("detector has {} layers, asked for {layer}", self.layers.len())))?;
        if h.len() != self.d {
            return Err(Error::Shape {
                op: "ood_score",
                lhs: vec![self.d],
                rhs: vec![h.len()],
            });
        }
        if !h.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite state scored by layer {layer}")));
        }
        Ok(det)
    }

    /// Hash over every teacher parameter at full precision.
    pub fn teacher_checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for det in &self.layers {
            for (name, t) in det.teacher.iter() {
                hasher.update(name.as_bytes());
                for v in t.data() {
                    hasher.update(v.to_le_bytes());
                }
            }
        }
        hex::encode(hasher.finalize())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::new("rnd");
        ckpt.set("d", self.d);
        ckpt.set("layers", self.layers.len());
        ckpt.set("residual_blocks", RESIDUAL_BLOCKS);
        ckpt.set("seed", self.seed);
        ckpt.set("lm_hash", &self.lm_hash);
        ckpt.set("score", "squared-norm; contraction uses squared-norm / d");
        for (l, det) in self.layers.iter().enumerate() {
            for (name, t) in det.teacher.iter() {
                ckpt.push_tensor(&format!("layer{l}.teacher.{name}"), t.clone());
            }
            for (name, t) in det.student.iter() {
                ckpt.push_tensor(&format!("layer{l}.student.{name}"), t.clone());
            }
        }
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.kind() != "rnd" {
            return Err(Error::Mismatch {
                what: "checkpoint kind",
                expected: "rnd".into(),
                found: ckpt.kind().into(),
            });
        }
        let blocks: usize = ckpt.get_parsed("residual_blocks")?;
        if blocks != RESIDUAL_BLOCKS {
            return Err(Error::data(format!("unsupported residual block count {blocks}")));
        }
        let mut det = Self::init(
            ckpt.get_parsed("seed")?,
            ckpt.get_parsed("d")?,
            ckpt.get_parsed("layers")?,
        )?;
        det.lm_hash = ckpt.get("lm_hash")?.to_string();
        for (l, layer) in det.layers.iter_mut().enumerate() {
            for (store, role) in [(&mut layer.teacher, "teacher"), (&mut layer.student, "student")] {
                let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
                for name in names {
                    let shape = store.by_name(&name)?.shape().to_vec();
                    let t: Tensor = ckpt.tensor(&format!("layer{l}.{role}.{name}"), &shape)?;
                    store.replace(&name, t)?;
                }
            }
        }
        let expected: usize = det.layers.iter().map(|l| l.teacher.len() + l.student.len()).sum();
        if ckpt.tensors().len() != expected {
            return Err(Error::data("detector checkpoint declares unexpected tensors"));
        }
        Ok(det)
    }

    pub fn round_to_checkpoint_precision(&mut self) {
        for l in &mut self.layers {
            l.student.round_to_f32();
        }
    }
}

impl OodScorer for RndDetector {
    fn num_layers(&self) -> usize {
        self.layers.len()
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn lm_hash(&self) -> &str {
        &self.lm_hash
    }

    fn raw_score(&self, layer: usize, h: &[f64]) -> Result<f64> {
        Ok(self.check(layer, h)?.raw_score(h))
    }
}

/// Scorer returning a fixed normalised score; useful to pin contraction behaviour.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantScorer {
    pub value: f64,
    pub layers: usize,
    pub d: usize,
    pub lm_hash: String,
}

impl OodScorer for ConstantScorer {
    fn num_layers(&self) -> usize {
        self.layers
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn lm_hash(&self) -> &str {
        &self.lm_hash
    }

    fn raw_score(&self, _layer: usize, _h: &[f64]) -> Result<f64> {
        Ok(self.value * self.d as f64)
    }

    fn score(&self, _layer: usize, _h: &[f64]) -> Result<f64> {
        Ok(self.value)
    }
}
