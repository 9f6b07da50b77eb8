use std::borrow::Cow;

use super::tensor::kernels;
use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

/// Epsilon added to the variance inside layer normalisation.
pub const LAYER_NORM_EPS: f64 = 1e-5;
/// Negative-side slope of LeakyReLU.
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The differentiable primitives the graph can record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Primitive {
    Leaf,
    MatVec,
    Add,
    Sub,
    Mul,
    Scale,
    Offset,
    MulScalar,
    Sigmoid,
    Tanh,
    LeakyRelu,
    Exp,
    Log,
    Softmax,
    LayerNorm,
    SquaredError,
    Concat,
    Sum,
    Row,
    Pick,
    AddN,
}

impl Primitive {
    pub const ALL: [Primitive; 21] = [
        Primitive::Leaf,
        Primitive::MatVec,
        Primitive::Add,
        Primitive::Sub,
        Primitive::Mul,
        Primitive::Scale,
        Primitive::Offset,
        Primitive::MulScalar,
        Primitive::Sigmoid,
        Primitive::Tanh,
        Primitive::LeakyRelu,
        Primitive::Exp,
        Primitive::Log,
        Primitive::Softmax,
        Primitive::LayerNorm,
        Primitive::SquaredError,
        Primitive::Concat,
        Primitive::Sum,
        Primitive::Row,
        Primitive::Pick,
        Primitive::AddN,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Primitive::Leaf => "leaf",
            Primitive::MatVec => "matvec",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Scale => "scale",
            Primitive::Offset => "offset",
            Primitive::MulScalar => "mul_scalar",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Tanh => "tanh",
            Primitive::LeakyRelu => "leaky_relu",
            Primitive::Exp => "exp",
            Primitive::Log => "log",
            Primitive::Softmax => "softmax",
            Primitive::LayerNorm => "layer_norm",
            Primitive::SquaredError => "squared_error",
            Primitive::Concat => "concat",
            Primitive::Sum => "sum",
            Primitive::Row => "row",
            Primitive::Pick => "pick",
            Primitive::AddN => "add_n",
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatVec(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Offset(NodeId),
    MulScalar(NodeId, NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    LeakyRelu(NodeId, f64),
    Exp(NodeId),
    Log(NodeId),
    Softmax(NodeId),
    // keeps sigma for the backward pass
    LayerNorm(NodeId, f64),
    SquaredError(NodeId, NodeId),
    Concat(Vec<NodeId>),
    Sum(NodeId),
    Row(NodeId, usize),
    Pick(NodeId, usize),
    AddN(Vec<NodeId>),
}

impl Op {
    fn primitive(&self) -> Primitive {
        match self {
            Op::Leaf => Primitive::Leaf,
            Op::MatVec(..) => Primitive::MatVec,
            Op::Add(..) => Primitive::Add,
            Op::Sub(..) => Primitive::Sub,
            Op::Mul(..) => Primitive::Mul,
            Op::Scale(..) => Primitive::Scale,
            Op::Offset(..) => Primitive::Offset,
            Op::MulScalar(..) => Primitive::MulScalar,
            Op::Sigmoid(..) => Primitive::Sigmoid,
            Op::Tanh(..) => Primitive::Tanh,
            Op::LeakyRelu(..) => Primitive::LeakyRelu,
            Op::Exp(..) => Primitive::Exp,
            Op::Log(..) => Primitive::Log,
            Op::Softmax(..) => Primitive::Softmax,
            Op::LayerNorm(..) => Primitive::LayerNorm,
            Op::SquaredError(..) => Primitive::SquaredError,
            Op::Concat(..) => Primitive::Concat,
            Op::Sum(..) => Primitive::Sum,
            Op::Row(..) => Primitive::Row,
            Op::Pick(..) => Primitive::Pick,
            Op::AddN(..) => Primitive::AddN,
        }
    }
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    param: Option<usize>,
    requires_grad: bool,
}

/// Per-parameter gradients, indexed like the [`ParamStore`] they came from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: usize) -> Option<&Tensor> {
        self.grads.get(id).and_then(Option::as_ref)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Tensor)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (i, g)))
    }

    fn slot(&mut self, id: usize, shape: &[usize]) -> &mut Tensor {
        if self.grads.len() <= id {
            self.grads.resize(id + 1, None);
        }
        self.grads[id].get_or_insert_with(|| Tensor::zeros(shape))
    }

    /// Adds `other` into `self`.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (id, g) in other.iter() {
            let slot = self.slot(id, g.shape());
            kernels::axpy(slot.data_mut(), 1.0, g.data());
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Global L2 norm over every parameter gradient.
    pub fn norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .map(|g| kernels::dot(g.data(), g.data()))
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales so the global norm is at most `max_norm`; returns the norm before clipping.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }

    /// Dense gradient for every parameter of `store`, zero where untouched.
    pub fn into_dense(self, store: &ParamStore) -> Vec<Tensor> {
        let mut grads = self.grads;
        grads.resize(store.len(), None);
        grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.unwrap_or_else(|| Tensor::zeros(store.get(i).shape())))
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.iter().all(Option::is_none)
    }
}

/// A recorded computation. Leaves borrow parameter tensors from a store.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and the backward pass is a single reverse sweep.
#[derive(Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
    param_nodes: Vec<Option<NodeId>>,
}

fn shape_err(op: &'static str, lhs: &Tensor, rhs: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: lhs.shape().to_vec(),
        rhs: rhs.shape().to_vec(),
    }
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn primitive(&self, id: NodeId) -> Primitive {
        self.nodes[id.0].op.primitive()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite {
                node: self.nodes.len(),
                op: op.primitive().name(),
            });
        }
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::MatVec(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::MulScalar(a, b)
            | Op::SquaredError(a, b) => self.rg(*a) || self.rg(*b),
            Op::Scale(a, _)
            | Op::Offset(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::LeakyRelu(a, _)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Softmax(a)
            | Op::LayerNorm(a, _)
            | Op::Sum(a)
            | Op::Row(a, _)
            | Op::Pick(a, _) => self.rg(*a),
            Op::Concat(xs) | Op::AddN(xs) => xs.iter().any(|x| self.rg(*x)),
        };
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            param: None,
            requires_grad,
        });
        Ok(id)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn val(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Trainable leaf for parameter `id` of `store`. Repeated calls return the same node.
    pub fn param(&mut self, store: &'a ParamStore, id: usize) -> NodeId {
        if let Some(Some(node)) = self.param_nodes.get(id) {
            return *node;
        }
        let node = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value: Cow::Borrowed(store.get(id)),
            op: Op::Leaf,
            param: Some(id),
            requires_grad: true,
        });
        if self.param_nodes.len() <= id {
            self.param_nodes.resize(id + 1, None);
        }
        self.param_nodes[id] = Some(node);
        node
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor) -> Result<NodeId> {
        self.push(value, Op::Leaf)
    }

    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> Result<NodeId> {
        let (wm, xv) = (self.val(w), self.val(x));
        if wm.rank() != 2 || xv.rank() != 1 || wm.cols() != xv.len() {
            return Err(shape_err("matvec", wm, xv));
        }
        let mut out = vec![0.0; wm.rows()];
        kernels::matvec(wm.data(), wm.rows(), wm.cols(), xv.data(), &mut out);
        self.push(Tensor::vector(out), Op::MatVec(w, x))
    }

    fn zip(&mut self, a: NodeId, b: NodeId, name: &'static str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<NodeId> {
        let (av, bv) = (self.val(a), self.val(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(name, av, bv));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| f(*x, *y)).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        self.push(t, op)
    }

    fn map(&mut self, a: NodeId, f: impl Fn(f64) -> f64, op: Op) -> Result<NodeId> {
        let av = self.val(a);
        let data = av.data().iter().map(|x| f(*x)).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        self.push(t, op)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.map(a, |x| c * x, Op::Scale(a, c))
    }

    /// Adds a constant to every element.
    pub fn offset(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.map(a, |x| x + c, Op::Offset(a))
    }

    /// Multiplies tensor `v` by the one-element node `s`.
    pub fn mul_scalar(&mut self, v: NodeId, s: NodeId) -> Result<NodeId> {
        let sv = self.val(s);
        if sv.len() != 1 {
            return Err(shape_err("mul_scalar", self.val(v), sv));
        }
        let c = sv.item();
        let vv = self.val(v);
        let data = vv.data().iter().map(|x| c * x).collect();
        let t = Tensor::new(vv.shape().to_vec(), data)?;
        self.push(t, Op::MulScalar(v, s))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.map(a, kernels::sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn leaky_relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.map(
            a,
            |x| kernels::leaky_relu(x, LEAKY_SLOPE),
            Op::LeakyRelu(a, LEAKY_SLOPE),
        )
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.map(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.map(a, f64::ln, Op::Log(a))
    }

    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.val(a);
        if av.rank() != 1 {
            return Err(shape_err("softmax", av, av));
        }
        let mut out = vec![0.0; av.len()];
        kernels::softmax(av.data(), &mut out);
        self.push(Tensor::vector(out), Op::Softmax(a))
    }

    /// Layer normalisation without affine terms.
    pub fn layer_norm(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.val(a);
        if av.rank() != 1 || av.is_empty() {
            return Err(shape_err("layer_norm", av, av));
        }
        let mut out = vec![0.0; av.len()];
        let sigma = kernels::layer_norm(av.data(), LAYER_NORM_EPS, &mut out);
        self.push(Tensor::vector(out), Op::LayerNorm(a, sigma))
    }

    /// Scalar `sum((a - b)^2)`.
    pub fn squared_error(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.val(a), self.val(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("squared_error", av, bv));
        }
        let s = av.data().iter().zip(bv.data()).map(|(x, y)| (x - y) * (x - y)).sum();
        self.push(Tensor::scalar(s), Op::SquaredError(a, b))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let mut data = Vec::new();
        for &p in parts {
            let pv = self.val(p);
            if pv.rank() != 1 {
                return Err(shape_err("concat", pv, pv));
            }
            data.extend_from_slice(pv.data());
        }
        self.push(Tensor::vector(data), Op::Concat(parts.to_vec()))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.val(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Row `index` of matrix `m` (embedding lookup).
    pub fn row(&mut self, m: NodeId, index: usize) -> Result<NodeId> {
        let mv = self.val(m);
        if mv.rank() != 2 || index >= mv.rows() {
            return Err(Error::Shape {
                op: "row",
                lhs: mv.shape().to_vec(),
                rhs: vec![index],
            });
        }
        let t = Tensor::vector(mv.row(index).to_vec());
        self.push(t, Op::Row(m, index))
    }

    /// Element `index` of a vector as a scalar.
    pub fn pick(&mut self, a: NodeId, index: usize) -> Result<NodeId> {
        let av = self.val(a);
        if index >= av.len() {
            return Err(Error::Shape {
                op: "pick",
                lhs: av.shape().to_vec(),
                rhs: vec![index],
            });
        }
        let t = Tensor::scalar(av.data()[index]);
        self.push(t, Op::Pick(a, index))
    }

    pub fn add_n(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = *parts.first().ok_or_else(|| Error::Shape {
            op: "add_n",
            lhs: vec![],
            rhs: vec![],
        })?;
        let mut acc = self.val(first).clone();
        for &p in &parts[1..] {
            let pv = self.val(p);
            if pv.shape() != acc.shape() {
                return Err(shape_err("add_n", &acc, pv));
            }
            kernels::axpy(acc.data_mut(), 1.0, pv.data());
        }
        self.push(acc, Op::AddN(parts.to_vec()))
    }

    /// `w x + b`.
    pub fn affine(&mut self, w: NodeId, x: NodeId, b: NodeId) -> Result<NodeId> {
        let wx = self.matvec(w, x)?;
        self.add(wx, b)
    }

    /// Reverse sweep from a one-element `loss` node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.val(loss);
        if lv.len() != 1 {
            return Err(Error::Shape {
                op: "backward",
                lhs: lv.shape().to_vec(),
                rhs: vec![],
            });
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);
        let mut grads = Gradients::new();

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            if let Some(pid) = node.param {
                let slot = grads.slot(pid, node.value.shape());
                kernels::axpy(slot.data_mut(), 1.0, &g);
                continue;
            }
            self.propagate(&node.op, &node.value, &g, &mut adj);
        }
        Ok(grads)
    }

    fn propagate(&self, op: &Op, y: &Tensor, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let mut acc = |id: NodeId, f: &mut dyn FnMut(&mut [f64])| {
            if !self.rg(id) {
                return;
            }
            let len = self.val(id).len();
            let buf = adj[id.0].get_or_insert_with(|| vec![0.0; len]);
            f(buf);
        };
        match op {
            Op::Leaf => {}
            Op::MatVec(w, x) => {
                let (wm, xv) = (self.val(*w), self.val(*x));
                let cols = wm.cols();
                acc(*w, &mut |gw| {
                    for (r, gi) in g.iter().enumerate() {
                        if *gi != 0.0 {
                            kernels::axpy(&mut gw[r * cols..(r + 1) * cols], *gi, xv.data());
                        }
                    }
                });
                acc(*x, &mut |gx| {
                    for (r, gi) in g.iter().enumerate() {
                        kernels::axpy(gx, *gi, wm.row(r));
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| kernels::axpy(ga, 1.0, g));
                acc(*b, &mut |gb| kernels::axpy(gb, 1.0, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| kernels::axpy(ga, 1.0, g));
                acc(*b, &mut |gb| kernels::axpy(gb, -1.0, g));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.val(*a).data(), self.val(*b).data());
                acc(*a, &mut |ga| {
                    for ((o, gi), bi) in ga.iter_mut().zip(g).zip(bv) {
                        *o += gi * bi;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((o, gi), ai) in gb.iter_mut().zip(g).zip(av) {
                        *o += gi * ai;
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |ga| kernels::axpy(ga, *c, g)),
            Op::Offset(a) => acc(*a, &mut |ga| kernels::axpy(ga, 1.0, g)),
            Op::MulScalar(v, s) => {
                let c = self.val(*s).item();
                let vv = self.val(*v).data();
                acc(*v, &mut |gv| kernels::axpy(gv, c, g));
                acc(*s, &mut |gs| gs[0] += kernels::dot(g, vv));
            }
            Op::Sigmoid(a) => acc(*a, &mut |ga| {
                for ((o, gi), yi) in ga.iter_mut().zip(g).zip(y.data()) {
                    *o += gi * yi * (1.0 - yi);
                }
            }),
            Op::Tanh(a) => acc(*a, &mut |ga| {
                for ((o, gi), yi) in ga.iter_mut().zip(g).zip(y.data()) {
                    *o += gi * (1.0 - yi * yi);
                }
            }),
            Op::LeakyRelu(a, slope) => {
                let xv = self.val(*a).data();
                acc(*a, &mut |ga| {
                    for ((o, gi), xi) in ga.iter_mut().zip(g).zip(xv) {
                        *o += if *xi > 0.0 { *gi } else { slope * gi };
                    }
                })
            }
            Op::Exp(a) => acc(*a, &mut |ga| {
                for ((o, gi), yi) in ga.iter_mut().zip(g).zip(y.data()) {
                    *o += gi * yi;
                }
            }),
            Op::Log(a) => {
                let xv = self.val(*a).data();
                acc(*a, &mut |ga| {
                    for ((o, gi), xi) in ga.iter_mut().zip(g).zip(xv) {
                        *o += gi / xi;
                    }
                })
            }
            Op::Softmax(a) => {
                let gy = kernels::dot(g, y.data());
                acc(*a, &mut |ga| {
                    for ((o, gi), yi) in ga.iter_mut().zip(g).zip(y.data()) {
                        *o += yi * (gi - gy);
                    }
                })
            }
            Op::LayerNorm(a, sigma) => {
                let n = g.len() as f64;
                let mean_g = g.iter().sum::<f64>() / n;
                let mean_gy = kernels::dot(g, y.data()) / n;
                acc(*a, &mut |ga| {
                    for ((o, gi), yi) in ga.iter_mut().zip(g).zip(y.data()) {
                        *o += (gi - mean_g - yi * mean_gy) / sigma;
                    }
                })
            }
            Op::SquaredError(a, b) => {
                let (av, bv) = (self.val(*a).data(), self.val(*b).data());
                let s = 2.0 * g[0];
                acc(*a, &mut |ga| {
                    for ((o, x), t) in ga.iter_mut().zip(av).zip(bv) {
                        *o += s * (x - t);
                    }
                });
                acc(*b, &mut |gb| {
                    for ((o, x), t) in gb.iter_mut().zip(av).zip(bv) {
                        *o -= s * (x - t);
                    }
                });
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.val(*p).len();
                    let slice = &g[offset..offset + len];
                    acc(*p, &mut |gp| kernels::axpy(gp, 1.0, slice));
                    offset += len;
                }
            }
            Op::Sum(a) => acc(*a, &mut |ga| ga.iter_mut().for_each(|o| *o += g[0])),
            Op::Row(m, index) => {
                let cols = self.val(*m).cols();
                acc(*m, &mut |gm| {
                    kernels::axpy(&mut gm[index * cols..(index + 1) * cols], 1.0, g)
                })
            }
            Op::Pick(a, index) => acc(*a, &mut |ga| ga[*index] += g[0]),
            Op::AddN(parts) => {
                for p in parts {
                    acc(*p, &mut |gp| kernels::axpy(gp, 1.0, g));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: Vec<f64>) -> ParamStore {
        let mut store = ParamStore::new();
        store.insert("p", Tensor::vector(values));
        store
    }

    #[test]
    fn softmax_symmetric() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![0.0, 0.0])).unwrap();
        let y = g.softmax(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn layer_norm_constant_is_zero() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![2.5; 6])).unwrap();
        let y = g.layer_norm(x).unwrap();
        assert!(g.value(y).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn product_rule_at_origin() {
        // d/dx x * exp(-x) at 0 is 1
        let store = store_with(vec![0.0]);
        let mut g = Graph::new();
        let x = g.param(&store, 0);
        let nx = g.scale(x, -1.0).unwrap();
        let e = g.exp(nx).unwrap();
        let y = g.mul(x, e).unwrap();
        let l = g.sum(y).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(0).unwrap().data(), &[1.0]);
    }

    #[test]
    fn sum_gives_ones() {
        let store = store_with(vec![0.3, -1.0, 2.0]);
        let mut g = Graph::new();
        let p = g.param(&store, 0);
        let l = g.sum(p).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(0).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn half_squared_norm_gives_identity() {
        let store = store_with(vec![0.3, -1.0, 2.0]);
        let mut g = Graph::new();
        let p = g.param(&store, 0);
        let z = g.constant(Tensor::zeros(&[3])).unwrap();
        let se = g.squared_error(p, z).unwrap();
        let l = g.scale(se, 0.5).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(0).unwrap().data(), store.get(0).data());
    }

    #[test]
    fn shared_node_accumulates_both_paths() {
        // y = sin-free f(x) + g(x) with f = x^2 (via mul), g = 3x
        let store = store_with(vec![1.5]);
        let mut g = Graph::new();
        let x = g.param(&store, 0);
        let f = g.mul(x, x).unwrap();
        let h = g.scale(x, 3.0).unwrap();
        let y = g.add(f, h).unwrap();
        let l = g.sum(y).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(0).unwrap().data(), &[2.0 * 1.5 + 3.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let store = store_with(vec![1.0, 2.0]);
        let mut g = Graph::new();
        let p = g.param(&store, 0);
        assert!(matches!(g.backward(p), Err(Error::Shape { .. })));
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[3])).unwrap();
        let b = g.constant(Tensor::zeros(&[4])).unwrap();
        match g.add(a, b) {
            Err(Error::Shape { op, lhs, rhs }) => {
                assert_eq!(op, "add");
                assert_eq!(lhs, vec![3]);
                assert_eq!(rhs, vec![4]);
            }
            other => panic!("expected shape error, got {:?}", other.map(|n| n.index())),
        }
    }

    #[test]
    fn non_finite_output_names_node() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::vector(vec![0.0])).unwrap();
        match g.log(a) {
            Err(Error::NonFinite { node, op }) => {
                assert_eq!(node, 1);
                assert_eq!(op, "log");
            }
            _ => panic!("log(0) must be flagged"),
        }
    }

    #[test]
    fn constants_receive_no_gradient() {
        let store = store_with(vec![2.0]);
        let mut g = Graph::new();
        let p = g.param(&store, 0);
        let c = g.constant(Tensor::vector(vec![5.0])).unwrap();
        let y = g.mul(p, c).unwrap();
        let l = g.sum(y).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.iter().count(), 1);
        assert_eq!(grads.get(0).unwrap().data(), &[5.0]);
    }
}
