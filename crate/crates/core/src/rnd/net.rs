use rand::Rng;

use crate::error::Result;
use crate::numerics::{kernels, Graph, NodeId, ParamStore, Tensor, LAYER_NORM_EPS, LEAKY_SLOPE};

pub const RESIDUAL_BLOCKS: usize = 4;

/// Store indices of one `Linear -> LayerNorm(affine) -> LeakyReLU` layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpLayer {
    pub weight: usize,
    pub bias: usize,
    pub gain: usize,
    pub shift: usize,
}

impl MlpLayer {
    pub(crate) fn create(store: &mut ParamStore, prefix: &str, d: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (d as f64).sqrt();
        let mut draw = |n: usize| (0..n).map(|_| rng.gen_range(-bound..=bound)).collect::<Vec<_>>();
        let weight = Tensor::matrix(d, d, draw(d * d)).expect("square");
        let bias = Tensor::vector(draw(d));
        MlpLayer {
            weight: store.insert(format!("{prefix}.weight"), weight),
            bias: store.insert(format!("{prefix}.bias"), bias),
            gain: store.insert(format!("{prefix}.ln_gain"), Tensor::vector(vec![1.0; d])),
            shift: store.insert(format!("{prefix}.ln_shift"), Tensor::zeros(&[d])),
        }
    }

    pub(crate) fn forward(&self, store: &ParamStore, x: &[f64]) -> Vec<f64> {
        let d = x.len();
        let mut y = vec![0.0; d];
        kernels::matvec(store.get(self.weight).data(), d, d, x, &mut y);
        kernels::axpy(&mut y, 1.0, store.get(self.bias).data());
        let mut n = vec![0.0; d];
        kernels::layer_norm(&y, LAYER_NORM_EPS, &mut n);
        let gain = store.get(self.gain).data();
        let shift = store.get(self.shift).data();
        for i in 0..d {
            n[i] = kernels::leaky_relu(n[i] * gain[i] + shift[i], LEAKY_SLOPE);
        }
        n
    }

    pub(crate) fn node<'a>(&self, g: &mut Graph<'a>, store: &'a ParamStore, x: NodeId) -> Result<NodeId> {
        let (w, b) = (g.param(store, self.weight), g.param(store, self.bias));
        let y = g.affine(w, x, b)?;
        let n = g.layer_norm(y)?;
        let (gain, shift) = (g.param(store, self.gain), g.param(store, self.shift));
        let scaled = g.mul(n, gain)?;
        let shifted = g.add(scaled, shift)?;
        g.leaky_relu(shifted)
    }

    pub(crate) fn ids(&self) -> [usize; 4] {
        [self.weight, self.bias, self.gain, self.shift]
    }
}

/// Two-layer trunk, optionally followed by residual blocks of two layers each.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Network {
    pub trunk: [MlpLayer; 2],
    pub blocks: Vec<[MlpLayer; 2]>,
}

impl Network {
    pub fn create(store: &mut ParamStore, d: usize, blocks: usize, rng: &mut impl Rng) -> Self {
        let trunk = [
            MlpLayer::create(store, "trunk0", d, rng),
            MlpLayer::create(store, "trunk1", d, rng),
        ];
        let blocks = (0..blocks)
            .map(|b| {
                [
                    MlpLayer::create(store, &format!("block{b}.fc0"), d, rng),
                    MlpLayer::create(store, &format!("block{b}.fc1"), d, rng),
                ]
            })
            .collect();
        Network { trunk, blocks }
    }

    pub fn forward(&self, store: &ParamStore, h: &[f64]) -> Vec<f64> {
        let mut x = self.trunk[1].forward(store, &self.trunk[0].forward(store, h));
        for [a, b] in &self.blocks {
            let branch = b.forward(store, &a.forward(store, &x));
            kernels::axpy(&mut x, 1.0, &branch);
        }
        x
    }

    pub fn node<'a>(&self, g: &mut Graph<'a>, store: &'a ParamStore, h: NodeId) -> Result<NodeId> {
        let t0 = self.trunk[0].node(g, store, h)?;
        let mut x = self.trunk[1].node(g, store, t0)?;
        for [a, b] in &self.blocks {
            let ya = a.node(g, store, x)?;
            let yb = b.node(g, store, ya)?;
            x = g.add(x, yb)?;
        }
        Ok(x)
    }
}
