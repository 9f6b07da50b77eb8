use rand::Rng;

use super::LmParameters;
use crate::error::{Error, Result};
use crate::numerics::{Graph, NodeId, ParamStore, Tensor};

/// Inverted-dropout masks for one unrolled block: one input mask per step and
/// one output mask per layer per step.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    input: Vec<Tensor>,
    hidden: Vec<Vec<Tensor>>,
}

fn mask(rng: &mut impl Rng, d: usize, p: f64) -> Tensor {
    let keep = 1.0 - p;
    Tensor::vector(
        (0..d)
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect(),
    )
}

impl DropoutMasks {
    pub fn sample(params: &LmParameters, steps: usize, rng: &mut impl Rng) -> Self {
        let c = &params.config;
        let d = c.hidden;
        let input = (0..steps).map(|_| mask(rng, d, c.dropout_input)).collect();
        let hidden = (0..steps)
            .map(|_| (0..c.layers).map(|_| mask(rng, d, c.dropout_hidden)).collect())
            .collect();
        DropoutMasks { input, hidden }
    }
}

pub struct UnrolledOutput {
    /// Summed negative log-likelihood over the block.
    pub loss: NodeId,
    /// Hidden values after the last step, detached for carrying into the next block.
    pub final_hidden: Vec<Vec<f64>>,
    pub predictions: usize,
}

fn gru_node<'a>(
    g: &mut Graph<'a>,
    params: &LmParameters,
    s: &'a ParamStore,
    layer: usize,
    h: NodeId,
    u: NodeId,
) -> Result<NodeId> {
    let ids = params.gru[layer];
    let gate = |g: &mut Graph<'a>, w: usize, uu: usize, b: usize| -> Result<NodeId> {
        let (w, uu, b) = (g.param(s, w), g.param(s, uu), g.param(s, b));
        let a = g.matvec(w, u)?;
        let c = g.matvec(uu, h)?;
        let ac = g.add(a, c)?;
        let pre = g.add(ac, b)?;
        g.sigmoid(pre)
    };
    let r = gate(g, ids.w_r, ids.u_r, ids.b_r)?;
    let z = gate(g, ids.w_z, ids.u_z, ids.b_z)?;
    let (w_n, u_n, b_n) = (g.param(s, ids.w_n), g.param(s, ids.u_n), g.param(s, ids.b_n));
    let wn = g.matvec(w_n, u)?;
    let un = g.matvec(u_n, h)?;
    let run = g.mul(r, un)?;
    let sum = g.add(wn, run)?;
    let pre = g.add(sum, b_n)?;
    let n = g.tanh(pre)?;
    let zh = g.mul(z, h)?;
    let neg_z = g.scale(z, -1.0)?;
    let one_minus_z = g.offset(neg_z, 1.0)?;
    let zn = g.mul(one_minus_z, n)?;
    g.add(zh, zn)
}

/// Log-probability of `target` under the mixture-of-softmaxes readout of `h`.
fn mos_log_prob<'a>(
    g: &mut Graph<'a>,
    params: &LmParameters,
    s: &'a ParamStore,
    h: NodeId,
    target: usize,
) -> Result<NodeId> {
    let q = g.param(s, params.prior);
    let prior_logits = g.matvec(q, h)?;
    let prior = g.softmax(prior_logits)?;
    let w = g.param(s, params.out_weight);
    let b = g.param(s, params.out_bias);
    let mut terms = Vec::with_capacity(params.latent.len());
    for (k, &pid) in params.latent.iter().enumerate() {
        let p = g.param(s, pid);
        let proj = g.matvec(p, h)?;
        let latent = g.tanh(proj)?;
        let logits = g.affine(w, latent, b)?;
        let probs = g.softmax(logits)?;
        let pt = g.pick(probs, target)?;
        let pk = g.pick(prior, k)?;
        terms.push(g.mul(pk, pt)?);
    }
    let p = g.add_n(&terms)?;
    g.log(p)
}

/// Records teacher-forced scoring of one block: consumes `inputs[t]`, predicts
/// `targets[t]`. `init` holds one detached hidden vector per layer.
pub fn unrolled_nll<'a>(
    g: &mut Graph<'a>,
    params: &'a LmParameters,
    inputs: &[u32],
    targets: &[u32],
    init: &[Vec<f64>],
    masks: Option<&DropoutMasks>,
) -> Result<UnrolledOutput> {
    unrolled_nll_with(g, params, &params.store, inputs, targets, init, masks)
}

/// Same as [`unrolled_nll`] but reads values from `store`, which must share
/// the layout of `params.store`. Finite-difference probes use this.
pub fn unrolled_nll_with<'a>(
    g: &mut Graph<'a>,
    params: &LmParameters,
    store: &'a ParamStore,
    inputs: &[u32],
    targets: &[u32],
    init: &[Vec<f64>],
    masks: Option<&DropoutMasks>,
) -> Result<UnrolledOutput> {
    if store.len() != params.store.len() {
        return Err(Error::Mismatch {
            what: "parameter store layout",
            expected: params.store.len().to_string(),
            found: store.len().to_string(),
        });
    }
    if inputs.len() != targets.len() || inputs.is_empty() {
        return Err(Error::Shape {
            op: "unrolled_nll",
            lhs: vec![inputs.len()],
            rhs: vec![targets.len()],
        });
    }
    if init.len() != params.layers() {
        return Err(Error::Mismatch {
            what: "initial state layer count",
            expected: params.layers().to_string(),
            found: init.len().to_string(),
        });
    }
    let v = params.vocab_size();
    let emb = g.param(store, params.embedding);
    let mut hidden: Vec<NodeId> = init
        .iter()
        .map(|h| g.constant(Tensor::vector(h.clone())))
        .collect::<Result<_>>()?;
    let mut log_probs = Vec::with_capacity(inputs.len());
    for (t, (&x, &y)) in inputs.iter().zip(targets).enumerate() {
        if x as usize >= v || y as usize >= v {
            return Err(Error::data(format!("token id out of range at step {t}")));
        }
        let mut input = g.row(emb, x as usize)?;
        if let Some(m) = masks {
            let mk = g.constant(m.input[t].clone())?;
            input = g.mul(input, mk)?;
        }
        for l in 0..params.layers() {
            let h = gru_node(g, params, store, l, hidden[l], input)?;
            hidden[l] = h;
            input = h;
            if let Some(m) = masks {
                let mk = g.constant(m.hidden[t][l].clone())?;
                input = g.mul(h, mk)?;
            }
        }
        log_probs.push(mos_log_prob(g, params, store, input, y as usize)?);
    }
    let total = g.add_n(&log_probs)?;
    let loss = g.scale(total, -1.0)?;
    let final_hidden = hidden.iter().map(|&h| g.value(h).data().to_vec()).collect();
    Ok(UnrolledOutput {
        loss,
        final_hidden,
        predictions: inputs.len(),
    })
}
