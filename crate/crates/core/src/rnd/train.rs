use std::time::Instant;

use rand::seq::SliceRandom;

use super::RndDetector;
use crate::error::{Error, Result};
use crate::numerics::{Gradients, Graph, Tensor};
use crate::parallel;
use crate::rng;
use crate::training::{Adam, EpochRecord, Optimizer, TrainConfig, TrainLog};

// samples per parallel work item; fixed so the summation order never changes
const CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct StudentReport {
    pub layer: usize,
    pub log: TrainLog,
    /// Mean per-dimension distillation loss on validation states before training.
    pub initial_valid: f64,
    pub best_valid: f64,
}

fn mean_loss(det: &RndDetector, layer: usize, states: &[Vec<f64>], targets: &[Vec<f64>], cfg: &TrainConfig) -> f64 {
    let d = det.dim_of();
    let student = &det.layers[layer];
    let pairs: Vec<(&Vec<f64>, &Vec<f64>)> = states.iter().zip(targets).collect();
    let sums = parallel::map_chunks(cfg.exec, &pairs, 256, |chunk| {
        chunk
            .iter()
            .map(|(h, t)| {
                let s = student.student_output(h);
                s.iter().zip(t.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            })
            .sum::<f64>()
    });
    sums.iter().sum::<f64>() / (states.len() * d) as f64
}

/// Fits the student of `layer` to its frozen teacher on `train` states with
/// constant-rate Adam, keeping the parameters with the lowest validation loss.
/// The loss is the squared error averaged over output dimensions and samples.
pub fn train_student(
    det: &mut RndDetector,
    layer: usize,
    train: &[Vec<f64>],
    valid: &[Vec<f64>],
    cfg: &TrainConfig,
) -> Result<StudentReport> {
    cfg.validate()?;
    if train.is_empty() || valid.is_empty() {
        return Err(Error::data(
            "distillation needs non-empty training and validation states",
        ));
    }
    if layer >= det.layers.len() {
        return Err(Error::config(format!("no detector for layer {layer}")));
    }
    let d = det.dim_of();
    if let Some(bad) = train.iter().chain(valid).find(|h| h.len() != d) {
        return Err(Error::Shape {
            op: "train_student",
            lhs: vec![d],
            rhs: vec![bad.len()],
        });
    }
    let teach = |states: &[Vec<f64>]| {
        let t = &det.layers[layer];
        parallel::map(cfg.exec, states, |h| t.teacher_output(h))
    };
    let train_targets = teach(train);
    let valid_targets = teach(valid);

    let mut log = TrainLog::default();
    let initial_valid = mean_loss(det, layer, valid, &valid_targets, cfg);
    log.push(EpochRecord {
        epoch: 0,
        train_loss: mean_loss(det, layer, train, &train_targets, cfg),
        valid_loss: initial_valid,
        learning_rate: cfg.learning_rate,
        seconds: 0.0,
    });
    let mut best_student = det.layers[layer].student.clone();
    let mut adam = Adam::new(
        &best_student,
        cfg.learning_rate,
        cfg.adam_beta1,
        cfg.adam_beta2,
        cfg.adam_eps,
    );
    let mut shuffle_rng = rng::stream(cfg.seed, &format!("{}-rnd-layer{layer}", rng::DATA_SHUFFLE));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut bad_epochs = 0;

    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let ld = &det.layers[layer];
            let net = ld.student_net();
            let store = &ld.student;
            let parts = parallel::map_chunks(cfg.exec, batch, CHUNK, |idx| -> Result<(Gradients, f64)> {
                let mut grads = Gradients::new();
                let mut loss = 0.0;
                for &i in idx {
                    let mut g = Graph::new();
                    let h = g.constant(Tensor::vector(train[i].clone()))?;
                    let out = net.node(&mut g, store, h)?;
                    let target = g.constant(Tensor::vector(train_targets[i].clone()))?;
                    let se = g.squared_error(out, target)?;
                    loss += g.value(se).item();
                    grads.accumulate(&g.backward(se)?);
                }
                Ok((grads, loss))
            });
            let mut grads = Gradients::new();
            for part in parts {
                let (g, l) = part?;
                grads.accumulate(&g);
                epoch_loss += l;
            }
            grads.scale(1.0 / (batch.len() * d) as f64);
            if let Some(c) = cfg.clip_norm {
                grads.clip_norm(c);
            }
            adam.step(&mut det.layers[layer].student, &grads);
        }
        let valid_loss = mean_loss(det, layer, valid, &valid_targets, cfg);
        if !valid_loss.is_finite() {
            det.layers[layer].student = best_student;
            return Err(Error::Numerical(format!("distillation diverged at epoch {epoch}")));
        }
        let improved = log.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / (train.len() * d) as f64,
            valid_loss,
            learning_rate: adam.learning_rate(),
            seconds: start.elapsed().as_secs_f64(),
        });
        if improved {
            best_student = det.layers[layer].student.clone();
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs > cfg.patience {
                break;
            }
        }
    }
    det.layers[layer].student = best_student;
    let best_valid = log.best().map_or(initial_valid, |r| r.valid_loss);
    Ok(StudentReport {
        layer,
        log,
        initial_valid,
        best_valid,
    })
}

impl RndDetector {
    pub(crate) fn dim_of(&self) -> usize {
        use super::OodScorer;
        self.dim()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, ParamStore};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(n: usize, d: usize, centre: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..d).map(|_| centre + 0.3 * rng.gen_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn student_loss_gradients_match_finite_differences() {
        let det = RndDetector::init(11, 5, 1).unwrap();
        let ld = &det.layers[0];
        let h = vec![0.3, -0.8, 0.1, 0.55, -0.2];
        let target = ld.teacher_output(&h);
        let net = ld.student_net().clone();
        let report = grad_check(
            &ld.student,
            |g, s: &ParamStore| {
                let x = g.constant(Tensor::vector(h.clone()))?;
                let out = net.node(g, s, x)?;
                let t = g.constant(Tensor::vector(target.clone()))?;
                g.squared_error(out, t)
            },
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn graph_and_plain_student_agree() {
        let det = RndDetector::init(5, 6, 1).unwrap();
        let ld = &det.layers[0];
        let h = vec![0.1, 0.2, -0.3, 0.4, -0.5, 0.6];
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(h.clone())).unwrap();
        let out = ld.student_net().node(&mut g, &ld.student, x).unwrap();
        let plain = ld.student_output(&h);
        for (a, b) in g.value(out).data().iter().zip(&plain) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn training_reduces_loss_and_keeps_teacher() {
        let mut det = RndDetector::init(3, 8, 1).unwrap();
        let before = det.teacher_checksum();
        let train = cloud(256, 8, 0.5, 1);
        let valid = cloud(64, 8, 0.5, 2);
        let mut cfg = TrainConfig::rnd_default();
        cfg.max_epochs = 15;
        cfg.batch_size = 16;
        let report = train_student(&mut det, 0, &train, &valid, &cfg).unwrap();
        assert_eq!(det.teacher_checksum(), before);
        assert!(report.best_valid < report.initial_valid);
        // running best never increases and the rate never changes
        let mut best = f64::INFINITY;
        for r in &report.log.records {
            best = best.min(r.valid_loss);
            assert_eq!(r.learning_rate, cfg.learning_rate);
        }
        assert_eq!(best, report.best_valid);
    }

    #[test]
    fn empty_stream_rejected() {
        let mut det = RndDetector::init(3, 4, 1).unwrap();
        let cfg = TrainConfig::rnd_default();
        assert!(train_student(&mut det, 0, &[], &[vec![0.0; 4]], &cfg).is_err());
    }
}
