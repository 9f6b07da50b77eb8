use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rndlm::lm::{unrolled_nll_with, DropoutMasks, LmConfig, LmParameters};
use rndlm::numerics::{grad_check, Graph, NodeId, ParamStore, Tensor};
use rndlm::Result;

const INSTANCES: usize = 100;
const TOL: f64 = 1e-5;

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

/// Weighted sum of `y` with fixed random weights so every output entry
/// receives a distinct upstream gradient.
fn project<'a>(g: &mut Graph<'a>, y: NodeId, weights: &[f64]) -> Result<NodeId> {
    let w = g.constant(Tensor::vector(weights[..g.value(y).len()].to_vec()))?;
    let p = g.mul(y, w)?;
    g.sum(p)
}

type Builder = for<'s> fn(&mut Graph<'s>, &'s ParamStore, &[f64], usize) -> Result<NodeId>;

fn check(name: &str, build: Builder) {
    let mut rng = ChaCha8Rng::seed_from_u64(0xad10);
    for case in 0..INSTANCES {
        // n = 2 makes layer norm constant, leaving only round-off to compare
        let n = rng.gen_range(3..7);
        let mut store = ParamStore::new();
        store.insert("a", Tensor::vector(random_vec(&mut rng, n, 2.0)));
        // strictly positive, safe for log
        store.insert("b", Tensor::vector((0..n).map(|_| rng.gen_range(0.2..2.0)).collect()));
        store.insert("m", Tensor::matrix(n, n, random_vec(&mut rng, n * n, 1.0)).unwrap());
        let weights = random_vec(&mut rng, 3 * n, 1.0);
        let index = rng.gen_range(0..n);
        let report = grad_check(
            &store,
            |g, s| {
                let out = build(g, s, &weights, index)?;
                if g.value(out).len() == 1 {
                    Ok(out)
                } else {
                    project(g, out, &weights)
                }
            },
            1e-6,
            TOL,
        )
        .unwrap();
        assert!(report.passed(), "{name} case {case}: {report:?}");
    }
}

fn leaves<'s>(g: &mut Graph<'s>, s: &'s ParamStore) -> (NodeId, NodeId, NodeId) {
    (g.param(s, 0), g.param(s, 1), g.param(s, 2))
}

#[test]
fn matvec_adjoint() {
    check("matvec", |g, s, _, _| {
        let (a, _, m) = leaves(g, s);
        g.matvec(m, a)
    });
}

#[test]
fn affine_adjoint() {
    check("affine", |g, s, _, _| {
        let (a, b, m) = leaves(g, s);
        g.affine(m, a, b)
    });
}

#[test]
fn elementwise_binary_adjoints() {
    check("add", |g, s, _, _| {
        let (a, b, _) = leaves(g, s);
        g.add(a, b)
    });
    check("sub", |g, s, _, _| {
        let (a, b, _) = leaves(g, s);
        g.sub(a, b)
    });
    check("mul", |g, s, _, _| {
        let (a, b, _) = leaves(g, s);
        g.mul(a, b)
    });
    check("add_n", |g, s, _, _| {
        let (a, b, _) = leaves(g, s);
        let ab = g.mul(a, b)?;
        g.add_n(&[a, b, ab])
    });
}

#[test]
fn scalar_adjoints() {
    check("scale", |g, s, _, _| {
        let (a, _, _) = leaves(g, s);
        g.scale(a, -1.7)
    });
    check("offset", |g, s, _, _| {
        let (a, _, _) = leaves(g, s);
        let sq = g.mul(a, a)?;
        g.offset(sq, 0.3)
    });
    check("mul_scalar", |g, s, _, i| {
        let (a, b, _) = leaves(g, s);
        let k = g.pick(b, i)?;
        g.mul_scalar(a, k)
    });
    check("sum", |g, s, _, _| {
        let (a, b, _) = leaves(g, s);
        let ab = g.mul(a, b)?;
        g.sum(ab)
    });
}

#[test]
fn nonlinearity_adjoints() {
    check("sigmoid", |g, s, _, _| {
        let (a, _, _) = leaves(g, s);
        g.sigmoid(a)
    });
    check("tanh", |g, s, _, _| {
        let (a, _, _) = leaves(g, s);
        g.tanh(a)
    });
    check("exp", |g, s, _, _| {
        let (a, _, _) = leaves(g, s);
        g.exp(a)
    });
    check("log", |g, s, _, _| {
        let (_, b, _) = leaves(g, s);
        g.log(b)
    });
    check("leaky_relu", |g, s, _, _| {
        // shifted away from the kink at zero
        let (_, b, _) = leaves(g, s);
        let neg = g.scale(b, -1.0)?;
        let both = g.concat(&[b, neg])?;
        g.leaky_relu(both)
    });
}

#[test]
fn normalisation_adjoints() {
    check("softmax", |g, s, _, _| {
        let (a, _, _) = leaves(g, s);
        g.softmax(a)
    });
    check("layer_norm", |g, s, _, _| {
        let (a, _, _) = leaves(g, s);
        g.layer_norm(a)
    });
}

#[test]
fn structural_adjoints() {
    check("concat", |g, s, _, _| {
        let (a, b, _) = leaves(g, s);
        g.concat(&[a, b, a])
    });
    check("row", |g, s, _, i| {
        let (_, _, m) = leaves(g, s);
        g.row(m, i)
    });
    check("pick", |g, s, _, i| {
        let (a, _, _) = leaves(g, s);
        let sq = g.mul(a, a)?;
        g.pick(sq, i)
    });
    check("squared_error", |g, s, _, _| {
        let (a, b, _) = leaves(g, s);
        g.squared_error(a, b)
    });
}

#[test]
fn language_model_gradients_with_dropout() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut cfg = LmConfig::new(11, 4);
    cfg.dropout_input = 0.25;
    cfg.dropout_hidden = 0.25;
    let p = LmParameters::init(cfg, &mut rng).unwrap();
    let ids = [1u32, 3, 9, 4, 10];
    let masks = DropoutMasks::sample(&p, 4, &mut rng);
    let init = vec![random_vec(&mut rng, 4, 0.5), random_vec(&mut rng, 4, 0.5)];
    let report = grad_check(
        &p.store,
        |g, s| Ok(unrolled_nll_with(g, &p, s, &ids[..4], &ids[1..], &init, Some(&masks))?.loss),
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
}
