use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One dataset x variant measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub dataset: String,
    pub variant: String,
    /// Predicted tokens.
    pub tokens: usize,
    /// Total negative log-likelihood in nats.
    pub nll: f64,
    pub perplexity: f64,
    /// Per-dimension OOD score averaged over layers, then tokens.
    pub mean_ood: Option<f64>,
    /// `mean_ood` times the state width: the squared teacher/student distance.
    pub mean_ood_raw: Option<f64>,
    pub mean_ood_layers: Vec<f64>,
    pub oov_rate: f64,
    pub alpha: f64,
    pub beta: f64,
    pub mode: String,
    pub sharing: String,
    pub carry: bool,
    pub tokenizer_hash: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: Option<u64>,
    pub rows: Vec<EvalRow>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| v.to_string())
}

impl EvalReport {
    pub const TSV_HEADER: &'static str = "dataset\tvariant\ttokens\tperplexity\tmean_ood\tmean_ood_raw\tmean_ood_layers\toov_rate\talpha\tbeta\tmode\tsharing\tcarry";

    pub fn to_tsv(&self) -> String {
        let mut out = format!("{}\n", Self::TSV_HEADER);
        for r in &self.rows {
            let layers: Vec<String> = r.mean_ood_layers.iter().map(f64::to_string).collect();
            let layers = if layers.is_empty() {
                "-".to_string()
            } else {
                layers.join(",")
            };
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                r.dataset,
                r.variant,
                r.tokens,
                r.perplexity,
                opt(r.mean_ood),
                opt(r.mean_ood_raw),
                layers,
                r.oov_rate,
                r.alpha,
                r.beta,
                r.mode,
                r.sharing,
                r.carry
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::data(format!("malformed report JSON: {e}")))
    }
}

/// Per-token audit record.
#[derive(Debug, Clone, PartialEq)]
pub struct DumpRecord {
    pub position: usize,
    pub token: u32,
    pub log_prob: f64,
    pub scores: Vec<f64>,
}

impl DumpRecord {
    /// TSV with one row per predicted token; values print in shortest
    /// round-trip form, so parsing recovers them exactly.
    pub fn to_tsv(records: &[DumpRecord], layers: usize) -> String {
        let mut out = String::from("position\ttoken\tlog_prob");
        for l in 0..layers {
            out.push_str(&format!("\tood_layer{l}"));
        }
        out.push('\n');
        for r in records {
            out.push_str(&format!("{}\t{}\t{}", r.position, r.token, r.log_prob));
            for s in &r.scores {
                out.push_str(&format!("\t{s}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn parse_tsv(text: &str) -> Result<Vec<DumpRecord>> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::data("empty dump"))?;
        let layers = header.split('\t').count().saturating_sub(3);
        let bad = |n: usize| Error::data(format!("malformed dump line {n}"));
        lines
            .enumerate()
            .map(|(i, line)| {
                let f: Vec<&str> = line.split('\t').collect();
                if f.len() != 3 + layers {
                    return Err(bad(i + 2));
                }
                Ok(DumpRecord {
                    position: f[0].parse().map_err(|_| bad(i + 2))?,
                    token: f[1].parse().map_err(|_| bad(i + 2))?,
                    log_prob: f[2].parse().map_err(|_| bad(i + 2))?,
                    scores: f[3..]
                        .iter()
                        .map(|s| s.parse().map_err(|_| bad(i + 2)))
                        .collect::<Result<_>>()?,
                })
            })
            .collect()
    }
}

/// Mean over tokens of the layer-averaged score, and the per-layer means.
pub fn mean_scores(records: &[DumpRecord], layers: usize) -> (f64, Vec<f64>) {
    let n = records.len() as f64;
    let mut total = 0.0;
    let mut per = vec![0.0; layers];
    for r in records {
        total += r.scores.iter().sum::<f64>() / r.scores.len() as f64;
        for (p, s) in per.iter_mut().zip(&r.scores) {
            *p += s;
        }
    }
    (total / n, per.into_iter().map(|p| p / n).collect())
}

/// Mean OOD score of one dataset under the unmodified model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodRow {
    pub dataset: String,
    pub tokens: usize,
    pub mean_ood: f64,
    pub mean_ood_raw: f64,
    pub mean_ood_layers: Vec<f64>,
}

impl OodRow {
    pub fn to_tsv(rows: &[OodRow]) -> String {
        let mut out = String::from("dataset\ttokens\tmean_ood\tmean_ood_raw\tmean_ood_layers\n");
        for r in rows {
            let layers: Vec<String> = r.mean_ood_layers.iter().map(f64::to_string).collect();
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                r.dataset,
                r.tokens,
                r.mean_ood,
                r.mean_ood_raw,
                layers.join(",")
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_round_trips_exactly() {
        let recs = vec![
            DumpRecord {
                position: 0,
                token: 4,
                log_prob: -0.1f64.ln_1p() - 1e-17,
                scores: vec![0.1 + 0.2, 1e-300],
            },
            DumpRecord {
                position: 1,
                token: 9,
                log_prob: -3.0,
                scores: vec![2.0 / 3.0, 0.0],
            },
        ];
        let back = DumpRecord::parse_tsv(&DumpRecord::to_tsv(&recs, 2)).unwrap();
        assert_eq!(back, recs);
    }

    #[test]
    fn json_report_round_trips_every_bit() {
        // values spread over many magnitudes; a fast float parser misses some by one ulp
        let mut rows = Vec::new();
        let mut x = 0.000123456789f64;
        for i in 0..500 {
            x = (x * 1.7371 + 0.0131).fract() + i as f64 * 1e-3;
            rows.push(EvalRow {
                dataset: format!("d{i}"),
                variant: "rnd-full".into(),
                tokens: i,
                nll: x * 1e4,
                perplexity: x.exp(),
                mean_ood: Some(x / 97.0),
                mean_ood_raw: Some(x * 64.0 / 97.0),
                mean_ood_layers: vec![x / 3.0, x / 7.0],
                oov_rate: x / 11.0,
                alpha: 1.0,
                beta: 1.0,
                mode: "full".into(),
                sharing: "per-layer".into(),
                carry: true,
                tokenizer_hash: String::new(),
            });
        }
        let rep = EvalReport { seed: Some(3), rows };
        let back = EvalReport::from_json(&rep.to_json()).unwrap();
        for (a, b) in rep.rows.iter().zip(&back.rows) {
            assert_eq!(
                a.mean_ood.map(f64::to_bits),
                b.mean_ood.map(f64::to_bits),
                "{}",
                a.dataset
            );
            assert_eq!(a.nll.to_bits(), b.nll.to_bits(), "{}", a.dataset);
        }
    }

    #[test]
    fn report_json_round_trips() {
        let row = EvalRow {
            dataset: "a".into(),
            variant: "baseline".into(),
            tokens: 3,
            nll: 1.5,
            perplexity: 0.5f64.exp(),
            mean_ood: Some(0.25),
            mean_ood_raw: Some(16.0),
            mean_ood_layers: vec![0.2, 0.3],
            oov_rate: 0.0,
            alpha: 1.0,
            beta: 1.0,
            mode: "off".into(),
            sharing: "per-layer".into(),
            carry: true,
            tokenizer_hash: "h".into(),
        };
        let rep = EvalReport {
            seed: Some(3),
            rows: vec![row],
        };
        assert_eq!(EvalReport::from_json(&rep.to_json()).unwrap(), rep);
        assert_eq!(rep.to_tsv().lines().count(), 2);
    }
}
