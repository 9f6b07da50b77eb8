use rand::Rng;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};

/// Model dimensions and regularisation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct LmConfig {
    pub vocab_size: usize,
    /// state and embedding width `d`
    pub hidden: usize,
    pub layers: usize,
    /// number of softmax components in the readout
    pub mixtures: usize,
    pub dropout_input: f64,
    pub dropout_hidden: f64,
    /// share the embedding matrix with the output projection
    pub tied: bool,
}

impl LmConfig {
    pub fn new(vocab_size: usize, hidden: usize) -> Self {
        LmConfig {
            vocab_size,
            hidden,
            layers: 2,
            mixtures: 3,
            dropout_input: 0.5,
            dropout_hidden: 0.3,
            tied: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.hidden == 0 || self.layers == 0 || self.mixtures == 0 {
            return Err(Error::config(format!(
                "model dimensions must be positive: V={} d={} L={} K={}",
                self.vocab_size, self.hidden, self.layers, self.mixtures
            )));
        }
        for (name, p) in [
            ("dropout_input", self.dropout_input),
            ("dropout_hidden", self.dropout_hidden),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::config(format!("{name} must be in [0, 1), got {p}")));
            }
        }
        Ok(())
    }
}

/// Store indices for one GRU layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GruIds {
    pub w_r: usize,
    pub u_r: usize,
    pub b_r: usize,
    pub w_z: usize,
    pub u_z: usize,
    pub b_z: usize,
    pub w_n: usize,
    pub u_n: usize,
    pub b_n: usize,
}

/// Every trainable tensor of the language model plus the index layout.
#[derive(Debug, Clone, PartialEq)]
pub struct LmParameters {
    pub config: LmConfig,
    /// Hash of the tokenizer this model was trained with, empty if unknown.
    pub tokenizer_hash: String,
    pub store: ParamStore,
    pub(crate) embedding: usize,
    pub(crate) gru: Vec<GruIds>,
    pub(crate) latent: Vec<usize>,
    pub(crate) prior: usize,
    pub(crate) out_weight: usize,
    pub(crate) out_bias: usize,
}

fn uniform(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches length")
}

fn gru_names(layer: usize) -> [String; 9] {
    ["w_r", "u_r", "b_r", "w_z", "u_z", "b_z", "w_n", "u_n", "b_n"].map(|s| format!("gru{layer}.{s}"))
}

fn latent_name(k: usize) -> String {
    format!("mos.latent{k}")
}

impl LmParameters {
    /// Allocates every tensor with `fill` and records the index layout.
    fn allocate(config: LmConfig, mut fill: impl FnMut(&str, &[usize]) -> Tensor) -> Result<Self> {
        config.validate()?;
        let (v, d, k) = (config.vocab_size, config.hidden, config.mixtures);
        let mut store = ParamStore::new();
        let mut add = |store: &mut ParamStore, name: String, shape: &[usize]| {
            let t = fill(&name, shape);
            store.insert(name, t)
        };
        let embedding = add(&mut store, "embedding".into(), &[v, d]);
        let mut gru = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let n = gru_names(l);
            let [w_r, u_r, b_r, w_z, u_z, b_z, w_n, u_n, b_n] = n;
            gru.push(GruIds {
                w_r: add(&mut store, w_r, &[d, d]),
                u_r: add(&mut store, u_r, &[d, d]),
                b_r: add(&mut store, b_r, &[d]),
                w_z: add(&mut store, w_z, &[d, d]),
                u_z: add(&mut store, u_z, &[d, d]),
                b_z: add(&mut store, b_z, &[d]),
                w_n: add(&mut store, w_n, &[d, d]),
                u_n: add(&mut store, u_n, &[d, d]),
                b_n: add(&mut store, b_n, &[d]),
            });
        }
        let latent = (0..k).map(|i| add(&mut store, latent_name(i), &[d, d])).collect();
        let prior = add(&mut store, "mos.prior".into(), &[k, d]);
        let out_weight = if config.tied {
            embedding
        } else {
            add(&mut store, "mos.out.weight".into(), &[v, d])
        };
        let out_bias = add(&mut store, "mos.out.bias".into(), &[v]);
        Ok(LmParameters {
            config,
            tokenizer_hash: String::new(),
            store,
            embedding,
            gru,
            latent,
            prior,
            out_weight,
            out_bias,
        })
    }

    /// Random initialisation: embeddings U(-1, 1), matrices U(-1/sqrt(d), 1/sqrt(d)),
    /// biases zero.
    pub fn init(config: LmConfig, rng: &mut impl Rng) -> Result<Self> {
        let bound = 1.0 / (config.hidden as f64).sqrt();
        Self::allocate(config, |name, shape| {
            if shape.len() == 1 {
                Tensor::zeros(shape)
            } else if name == "embedding" {
                uniform(rng, shape, 1.0)
            } else {
                uniform(rng, shape, bound)
            }
        })
    }

    /// All-zero parameters.
    pub fn zeros(config: LmConfig) -> Result<Self> {
        Self::allocate(config, |_, shape| Tensor::zeros(shape))
    }

    pub fn hidden(&self) -> usize {
        self.config.hidden
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    pub fn layers(&self) -> usize {
        self.config.layers
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    pub fn gru_ids(&self, layer: usize) -> GruIds {
        self.gru[layer]
    }

    pub fn embedding_id(&self) -> usize {
        self.embedding
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let c = &self.config;
        let mut ckpt = Checkpoint::new("lm");
        ckpt.set("d", c.hidden);
        ckpt.set("V", c.vocab_size);
        ckpt.set("L", c.layers);
        ckpt.set("K", c.mixtures);
        ckpt.set("dropout_input", c.dropout_input);
        ckpt.set("dropout_hidden", c.dropout_hidden);
        ckpt.set("tied", c.tied);
        ckpt.set("tokenizer_hash", &self.tokenizer_hash);
        for (name, t) in self.store.iter() {
            ckpt.push_tensor(name, t.clone());
        }
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.kind() != "lm" {
            return Err(Error::Mismatch {
                what: "checkpoint kind",
                expected: "lm".into(),
                found: ckpt.kind().into(),
            });
        }
        let config = LmConfig {
            vocab_size: ckpt.get_parsed("V")?,
            hidden: ckpt.get_parsed("d")?,
            layers: ckpt.get_parsed("L")?,
            mixtures: ckpt.get_parsed("K")?,
            dropout_input: ckpt.get_parsed("dropout_input")?,
            dropout_hidden: ckpt.get_parsed("dropout_hidden")?,
            tied: ckpt.get_parsed("tied")?,
        };
        let mut err = None;
        let mut params = Self::allocate(config, |name, shape| match ckpt.tensor(name, shape) {
            Ok(t) => t,
            Err(e) => {
                err.get_or_insert(e);
                Tensor::zeros(shape)
            }
        })?;
        if let Some(e) = err {
            return Err(e);
        }
        if ckpt.tensors().len() != params.store.len() {
            return Err(Error::data("checkpoint declares unexpected extra tensors"));
        }
        params.tokenizer_hash = ckpt.get("tokenizer_hash")?.to_string();
        Ok(params)
    }

    /// Hash of the serialized checkpoint; detectors record it.
    pub fn fingerprint(&self) -> String {
        self.to_checkpoint().hash()
    }

    /// Rounds every parameter to checkpoint precision so in-memory and
    /// reloaded models behave identically.
    pub fn round_to_checkpoint_precision(&mut self) {
        self.store.round_to_f32();
    }
}
