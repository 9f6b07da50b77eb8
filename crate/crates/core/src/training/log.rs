use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub learning_rate: f64,
    pub seconds: f64,
}

/// Per-epoch history. Epoch 0, when present, is the evaluation before any update.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

impl TrainLog {
    pub fn push(&mut self, record: EpochRecord) -> bool {
        let improved = self.best().is_none_or(|b| record.valid_loss < b.valid_loss);
        if improved {
            self.best_epoch = Some(record.epoch);
        }
        self.records.push(record);
        improved
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        let e = self.best_epoch?;
        self.records.iter().find(|r| r.epoch == e)
    }

    /// Tab-separated `epoch train_loss valid_loss lr seconds`, best epoch marked.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("epoch\ttrain_loss\tvalid_loss\tlr\tseconds\tbest\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{}\t{:.6}\t{:.6}\t{}\t{:.3}\t{}",
                r.epoch,
                r.train_loss,
                r.valid_loss,
                r.learning_rate,
                r.seconds,
                u8::from(Some(r.epoch) == self.best_epoch)
            );
        }
        out
    }
}

/// Decaying-rate early-stopping schedule: on a non-improving epoch the rate is
/// multiplied by `decay`; after `patience` consecutive non-improvements, stop.
#[derive(Debug, Clone)]
pub(crate) struct Plateau {
    pub best: f64,
    pub bad_epochs: usize,
    pub patience: usize,
    pub decay: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum PlateauAction {
    Improved,
    Continue { lr: f64 },
    Stop,
}

impl Plateau {
    pub fn new(patience: usize, decay: f64) -> Self {
        Plateau {
            best: f64::INFINITY,
            bad_epochs: 0,
            patience,
            decay,
        }
    }

    pub fn observe(&mut self, valid: f64, lr: f64) -> PlateauAction {
        if valid < self.best {
            self.best = valid;
            self.bad_epochs = 0;
            return PlateauAction::Improved;
        }
        self.bad_epochs += 1;
        if self.bad_epochs > self.patience {
            PlateauAction::Stop
        } else {
            PlateauAction::Continue { lr: lr * self.decay }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_from_validation_trace() {
        // losses 3.0, 2.9, 2.95, 2.96 with patience 1 and decay 0.5 from rate 1.0
        let mut p = Plateau::new(1, 0.5);
        let mut lr = 1.0;
        let mut rates = Vec::new();
        let mut stopped_at = None;
        for (epoch, v) in [3.0, 2.9, 2.95, 2.96].into_iter().enumerate() {
            rates.push(lr);
            match p.observe(v, lr) {
                PlateauAction::Improved => {}
                PlateauAction::Continue { lr: next } => lr = next,
                PlateauAction::Stop => {
                    stopped_at = Some(epoch + 1);
                    break;
                }
            }
        }
        assert_eq!(rates, vec![1.0, 1.0, 1.0, 0.5]);
        assert_eq!(stopped_at, Some(4));
        assert_eq!(p.best, 2.9);
    }

    #[test]
    fn log_tracks_minimum() {
        let mut log = TrainLog::default();
        for (e, v) in [(1, 3.0), (2, 2.0), (3, 2.5)] {
            log.push(EpochRecord {
                epoch: e,
                train_loss: 0.0,
                valid_loss: v,
                learning_rate: 1.0,
                seconds: 0.0,
            });
        }
        assert_eq!(log.best_epoch, Some(2));
        assert!(log.to_tsv().lines().nth(2).unwrap().ends_with("\t1"));
    }
}
