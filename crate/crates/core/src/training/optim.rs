use crate::numerics::{Gradients, ParamStore, Tensor};

pub trait Optimizer {
    fn step(&mut self, store: &mut ParamStore, grads: &Gradients);
    fn learning_rate(&self) -> f64;
    fn set_learning_rate(&mut self, lr: f64);
}

#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
}

impl Optimizer for Sgd {
    fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        for (id, g) in grads.iter() {
            store
                .get_mut(id)
                .axpy(-self.lr, g)
                .expect("gradient shape matches parameter");
        }
    }

    fn learning_rate(&self) -> f64 {
        self.lr
    }

    fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = |s: &ParamStore| (0..s.len()).map(|i| Tensor::zeros(s.get(i).shape())).collect();
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: zeros(store),
            v: zeros(store),
        }
    }
}

impl Optimizer for Adam {
    fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (id, g) in grads.iter() {
            let m = self.m[id].data_mut();
            let v = self.v[id].data_mut();
            let p = store.get_mut(id).data_mut();
            for (((pi, mi), vi), gi) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *pi -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }

    fn learning_rate(&self) -> f64 {
        self.lr
    }

    fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Graph;

    fn quad_grads(store: &ParamStore) -> Gradients {
        let mut g = Graph::new();
        let p = g.param(store, 0);
        let sq = g.mul(p, p).unwrap();
        let l = g.sum(sq).unwrap();
        g.backward(l).unwrap()
    }

    #[test]
    fn sgd_step() {
        let mut store = ParamStore::new();
        store.insert("p", Tensor::vector(vec![1.0, -2.0]));
        let grads = quad_grads(&store);
        Sgd { lr: 0.1 }.step(&mut store, &grads);
        assert_eq!(store.get(0).data(), &[0.8, -1.6]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut store = ParamStore::new();
        store.insert("p", Tensor::vector(vec![1.0, -2.0]));
        let grads = quad_grads(&store);
        let mut adam = Adam::new(&store, 0.01, 0.9, 0.999, 1e-8);
        adam.step(&mut store, &grads);
        let d = store.get(0).data();
        assert!((d[0] - 0.99).abs() < 1e-6);
        assert!((d[1] + 1.99).abs() < 1e-6);
    }

    #[test]
    fn clipping_caps_norm() {
        let mut store = ParamStore::new();
        store.insert("p", Tensor::vector(vec![0.3, 0.4]));
        let mut grads = quad_grads(&store);
        // raw gradient (0.6, 0.8) has norm 1
        let before = grads.clip_norm(0.25);
        assert!((before - 1.0).abs() < 1e-12);
        assert!((grads.norm() - 0.25).abs() < 1e-12);
    }
}
