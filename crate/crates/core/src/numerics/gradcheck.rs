use super::{Graph, NodeId, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// max over entries of |analytic - numeric| / (|analytic| + |numeric| + step)
    pub max_deviation: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub entries_checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_deviation < self.tolerance
    }
}

fn eval_loss<F>(store: &ParamStore, build: &F) -> Result<f64>
where
    F: for<'s> Fn(&mut Graph<'s>, &'s ParamStore) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let loss = build(&mut g, store)?;
    Ok(g.value(loss).item())
}

/// Compares reverse-mode gradients of the loss built by `build` against
/// central finite differences with the given `step`, over every scalar of
/// every parameter in `store`.
pub fn grad_check<F>(store: &ParamStore, build: F, step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: for<'s> Fn(&mut Graph<'s>, &'s ParamStore) -> Result<NodeId>,
{
    if step <= 0.0 {
        return Err(Error::config("finite-difference step must be positive"));
    }
    let analytic = {
        let mut g = Graph::new();
        let loss = build(&mut g, store)?;
        g.backward(loss)?.into_dense(store)
    };

    let mut probe = store.clone();
    let mut report = GradCheckReport {
        max_deviation: 0.0,
        worst: None,
        entries_checked: 0,
        tolerance,
    };
    for pid in 0..store.len() {
        for k in 0..store.get(pid).len() {
            let orig = store.get(pid).data()[k];
            probe.get_mut(pid).data_mut()[k] = orig + step;
            let plus = eval_loss(&probe, &build)?;
            probe.get_mut(pid).data_mut()[k] = orig - step;
            let minus = eval_loss(&probe, &build)?;
            probe.get_mut(pid).data_mut()[k] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[pid].data()[k];
            let dev = (a - numeric).abs() / (a.abs() + numeric.abs() + step);
            report.entries_checked += 1;
            if dev > report.max_deviation || report.worst.is_none() {
                report.max_deviation = report.max_deviation.max(dev);
                if dev >= report.max_deviation {
                    report.worst = Some((store.name(pid).to_string(), k));
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    #[test]
    fn quadratic_is_exact_to_rounding() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(vec![0.7, -1.3, 2.1, 0.05]));
        let report = grad_check(
            &store,
            |g, s| {
                let w = g.param(s, 0);
                let sq = g.mul(w, w)?;
                let l = g.sum(sq)?;
                g.scale(l, 0.5)
            },
            1e-5,
            1e-7,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.entries_checked, 4);
    }

    #[test]
    fn rejects_nonpositive_step() {
        let store = ParamStore::new();
        assert!(grad_check(&store, |g, _| g.constant(Tensor::scalar(0.0)), 0.0, 1.0).is_err());
    }
}
