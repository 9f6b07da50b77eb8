use serde::{Deserialize, Serialize};

use super::{check_tokenizer, Dataset};
use crate::contraction::Contractor;
use crate::error::{Error, Result};
use crate::lm::LmParameters;
use crate::parallel::{self, Execution};
use crate::tokenization::EOS_ID;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub position: usize,
    pub mean_norm: f64,
    pub mean_entropy: f64,
    pub count: usize,
}

/// Per-position means of top-layer norm and readout entropy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionProfile {
    pub rows: Vec<ProfileRow>,
    /// `None` when either series is constant or fewer than two positions remain.
    pub correlation: Option<f64>,
}

impl PositionProfile {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("position\tmean_norm\tmean_entropy\tcount\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                r.position, r.mean_norm, r.mean_entropy, r.count
            ));
        }
        match self.correlation {
            Some(r) => out.push_str(&format!("# pearson={r}\n")),
            None => out.push_str("# pearson=undefined\n"),
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("profile serializes");
        s.push('\n');
        s
    }
}

/// Pearson correlation; `None` for fewer than two points or zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Sentences are scored independently from the zero state. Positions at or
/// beyond the 95th-percentile sentence length are dropped.
pub fn position_profile(params: &LmParameters, data: &Dataset, exec: Execution) -> Result<PositionProfile> {
    check_tokenizer(params, data)?;
    if data.sentences.iter().all(Vec::is_empty) {
        return Err(Error::data(format!("dataset {} has no tokens", data.name)));
    }
    let mut lengths: Vec<usize> = data.sentences.iter().map(Vec::len).collect();
    lengths.sort_unstable();
    let rank = ((0.95 * lengths.len() as f64).ceil() as usize).clamp(1, lengths.len());
    let limit = lengths[rank - 1];

    let c = Contractor::baseline(params);
    let traces = parallel::map(exec, &data.sentences, |s| {
        let mut ids = Vec::with_capacity(s.len() + 1);
        ids.push(EOS_ID);
        ids.extend_from_slice(&s[..s.len().min(limit)]);
        c.trace(&ids, &mut params.new_state())
    });
    let mut norm = vec![0.0; limit];
    let mut entropy = vec![0.0; limit];
    let mut count = vec![0usize; limit];
    for t in traces {
        for (pos, tr) in t?.iter().enumerate() {
            norm[pos] += tr.readout_norm;
            entropy[pos] += tr.entropy;
            count[pos] += 1;
        }
    }
    let rows: Vec<ProfileRow> = (0..limit)
        .filter(|&p| count[p] > 0)
        .map(|p| ProfileRow {
            position: p,
            mean_norm: norm[p] / count[p] as f64,
            mean_entropy: entropy[p] / count[p] as f64,
            count: count[p],
        })
        .collect();
    let xs: Vec<f64> = rows.iter().map(|r| r.mean_norm).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.mean_entropy).collect();
    Ok(PositionProfile {
        correlation: pearson(&xs, &ys),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::LmConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_point_anticorrelation() {
        assert_eq!(pearson(&[1.0, 2.0], &[2.0, 1.0]), Some(-1.0));
        assert_eq!(pearson(&[1.0, 1.0], &[2.0, 1.0]), None);
        assert_eq!(pearson(&[1.0], &[2.0]), None);
    }

    #[test]
    fn zero_model_is_flat_and_undefined() {
        let mut p = LmParameters::zeros(LmConfig::new(12, 4)).unwrap();
        p.tokenizer_hash = "t".into();
        let d = Dataset::from_sentences("z", vec![vec![3, 4, 5, 1], vec![2, 1], vec![6, 6, 1]], "t").unwrap();
        let prof = position_profile(&p, &d, Execution::Parallel).unwrap();
        for r in &prof.rows {
            assert!((r.mean_entropy - 12f64.ln()).abs() < 1e-12);
            assert_eq!(r.mean_norm, 0.0);
        }
        assert_eq!(prof.correlation, None);
        assert!(prof.to_tsv().ends_with("# pearson=undefined\n"));
    }

    #[test]
    fn tail_positions_truncated_and_deterministic() {
        let mut p = LmParameters::init(LmConfig::new(10, 4), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        p.tokenizer_hash = "t".into();
        let mut sents: Vec<Vec<u32>> = (0..19).map(|i| vec![2 + i % 5, 3, 1]).collect();
        sents.push(vec![4; 30]);
        let d = Dataset::from_sentences("x", sents, "t").unwrap();
        let a = position_profile(&p, &d, Execution::Parallel).unwrap();
        assert_eq!(a.rows.len(), 3);
        assert_eq!(a.rows[0].count, 20);
        assert_eq!(a, position_profile(&p, &d, Execution::Sequential).unwrap());
        let r = a.correlation.unwrap();
        assert!((-1.0..=1.0).contains(&r));
    }
}
