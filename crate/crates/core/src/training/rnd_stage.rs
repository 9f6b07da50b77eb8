use crate::error::{Error, Result};
use crate::lm::LmParameters;
use crate::parallel::{self, Execution};
use crate::rnd::{train_student, RndDetector, StudentReport};
use crate::tokenization::EOS_ID;

use super::TrainConfig;

/// Teacher-forced hidden states of the frozen model, one list per layer.
///
/// The token stream is cut into `streams` contiguous pieces that run in
/// parallel, each from the zero state with `<eos>` as its first input; every
/// post-recurrence state is recorded.
pub fn collect_states(
    params: &LmParameters,
    tokens: &[u32],
    streams: usize,
    exec: Execution,
) -> Result<Vec<Vec<Vec<f64>>>> {
    if tokens.is_empty() {
        return Err(Error::data("cannot collect states from an empty corpus"));
    }
    let per = tokens.len().div_ceil(streams.max(1));
    let pieces: Vec<&[u32]> = tokens.chunks(per).collect();
    let outs = parallel::map(exec, &pieces, |piece| -> Result<Vec<Vec<Vec<f64>>>> {
        let mut state = params.new_state();
        let mut per_layer = vec![Vec::with_capacity(piece.len()); params.layers()];
        for &tok in std::iter::once(&EOS_ID).chain(piece[..piece.len() - 1].iter()) {
            params.stacked_step(&mut state, tok)?;
            for (l, h) in state.hidden.iter().enumerate() {
                per_layer[l].push(h.clone());
            }
        }
        Ok(per_layer)
    });
    let mut layers = vec![Vec::with_capacity(tokens.len()); params.layers()];
    for out in outs {
        for (l, states) in out?.into_iter().enumerate() {
            layers[l].extend(states);
        }
    }
    Ok(layers)
}

/// Trains one student per LM layer on states of the frozen model. The
/// detector records the model's fingerprint; the model is only read.
pub fn train_rnd_stage(
    lm: &LmParameters,
    train: &[u32],
    valid: &[u32],
    mut detector: RndDetector,
    cfg: &TrainConfig,
) -> Result<(RndDetector, Vec<StudentReport>)> {
    if detector.layers.len() != lm.layers() {
        return Err(Error::Mismatch {
            what: "detector layer count",
            expected: lm.layers().to_string(),
            found: detector.layers.len().to_string(),
        });
    }
    detector.lm_hash = lm.fingerprint();
    let train_states = collect_states(lm, train, cfg.batch_size.max(1), cfg.exec)?;
    let valid_states = collect_states(lm, valid, cfg.batch_size.max(1), cfg.exec)?;
    let mut reports = Vec::with_capacity(lm.layers());
    for l in 0..lm.layers() {
        reports.push(train_student(
            &mut detector,
            l,
            &train_states[l],
            &valid_states[l],
            cfg,
        )?);
    }
    Ok((detector, reports))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::LmConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn states_match_continuous_stream_with_one_piece() {
        let p = LmParameters::init(LmConfig::new(9, 4), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let toks = [3u32, 4, 5, 1, 2, 8];
        let got = collect_states(&p, &toks, 1, Execution::Sequential).unwrap();
        let mut st = p.new_state();
        for (t, &tok) in [1u32, 3, 4, 5, 1, 2].iter().enumerate() {
            p.stacked_step(&mut st, tok).unwrap();
            assert_eq!(got[1][t], st.hidden[1]);
        }
        assert_eq!(got[0].len(), toks.len());
        let par = collect_states(&p, &toks, 3, Execution::Parallel).unwrap();
        assert_eq!(par[0].len(), toks.len());
    }

    #[test]
    fn stage_leaves_model_untouched() {
        let p = LmParameters::init(LmConfig::new(9, 4), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let before = p.clone();
        let toks: Vec<u32> = (0..200).map(|i| (i % 9) as u32).collect();
        let det = RndDetector::init(0, 4, 2).unwrap();
        let mut cfg = TrainConfig::rnd_default();
        cfg.max_epochs = 2;
        cfg.batch_size = 8;
        let (det, reports) = train_rnd_stage(&p, &toks, &toks[..50], det, &cfg).unwrap();
        assert_eq!(p, before);
        assert_eq!(det.lm_hash, p.fingerprint());
        assert_eq!(reports.len(), 2);
        for r in &reports {
            assert!(r.log.records.iter().all(|e| e.learning_rate == cfg.learning_rate));
        }
    }
}
