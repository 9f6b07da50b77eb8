use super::{EvalRow, Variant};
use crate::error::{Error, Result};

/// Variants as rows, datasets as columns. Datasets keep their first-seen
/// order; known variants come first in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub datasets: Vec<String>,
    pub variants: Vec<String>,
    /// `perplexity[v][d]`.
    pub perplexity: Vec<Vec<Option<f64>>>,
    /// Perplexity minus the baseline's, when both exist.
    pub delta: Vec<Vec<Option<f64>>>,
    /// Index of the lowest-perplexity variant per dataset.
    pub best: Vec<Option<usize>>,
}

pub fn compare(rows: &[EvalRow]) -> Result<Comparison> {
    let mut datasets: Vec<String> = Vec::new();
    let mut tokenizers: Vec<String> = Vec::new();
    for r in rows {
        match datasets.iter().position(|d| *d == r.dataset) {
            Some(i) if tokenizers[i] != r.tokenizer_hash => {
                return Err(Error::Mismatch {
                    what: "tokenizer within a comparison column",
                    expected: format!("{} for {}", tokenizers[i], r.dataset),
                    found: r.tokenizer_hash.clone(),
                })
            }
            Some(_) => {}
            None => {
                datasets.push(r.dataset.clone());
                tokenizers.push(r.tokenizer_hash.clone());
            }
        }
    }
    let mut variants: Vec<String> = Variant::ALL
        .iter()
        .map(|v| v.name().to_string())
        .filter(|v| rows.iter().any(|r| r.variant == *v))
        .collect();
    for r in rows {
        if !variants.contains(&r.variant) {
            variants.push(r.variant.clone());
        }
    }
    let mut ppl = vec![vec![None; datasets.len()]; variants.len()];
    for r in rows {
        let v = variants.iter().position(|x| *x == r.variant).expect("variant indexed");
        let d = datasets.iter().position(|x| *x == r.dataset).expect("dataset indexed");
        if ppl[v][d].replace(r.perplexity).is_some() {
            return Err(Error::data(format!("duplicate row for {} / {}", r.dataset, r.variant)));
        }
    }
    let base = variants.iter().position(|v| v == Variant::Baseline.name());
    let delta = ppl
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(d, p)| match (p, base.and_then(|b| ppl[b][d])) {
                    (Some(p), Some(b)) => Some(p - b),
                    _ => None,
                })
                .collect()
        })
        .collect();
    let best = (0..datasets.len())
        .map(|d| {
            (0..variants.len())
                .filter_map(|v| ppl[v][d].map(|p| (v, p)))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(v, _)| v)
        })
        .collect();
    Ok(Comparison {
        datasets,
        variants,
        perplexity: ppl,
        delta,
        best,
    })
}

impl Comparison {
    /// TSV with a `<dataset>` and `<dataset>_delta` column per dataset; the
    /// best perplexity of each column carries a trailing `*`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("variant");
        for d in &self.datasets {
            out.push_str(&format!("\t{d}\t{d}_delta"));
        }
        out.push('\n');
        for (v, name) in self.variants.iter().enumerate() {
            out.push_str(name);
            for d in 0..self.datasets.len() {
                let cell = match self.perplexity[v][d] {
                    Some(p) if self.best[d] == Some(v) => format!("{p:.4}*"),
                    Some(p) => format!("{p:.4}"),
                    None => "-".to_string(),
                };
                let delta = self.delta[v][d].map_or_else(|| "-".to_string(), |x| format!("{x:+.4}"));
                out.push_str(&format!("\t{cell}\t{delta}"));
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(dataset: &str, variant: &str, ppl: f64, tok: &str) -> EvalRow {
        EvalRow {
            dataset: dataset.into(),
            variant: variant.into(),
            tokens: 10,
            nll: 0.0,
            perplexity: ppl,
            mean_ood: None,
            mean_ood_raw: None,
            mean_ood_layers: vec![],
            oov_rate: 0.0,
            alpha: 1.0,
            beta: 1.0,
            mode: "off".into(),
            sharing: "per-layer".into(),
            carry: true,
            tokenizer_hash: tok.into(),
        }
    }

    #[test]
    fn single_report_renders_as_is() {
        let c = compare(&[row("ptb", "baseline", 68.04, "t")]).unwrap();
        assert_eq!(c.to_tsv(), "variant\tptb\tptb_delta\nbaseline\t68.0400*\t+0.0000\n");
    }

    #[test]
    fn dominating_variant_takes_every_marker() {
        let rows = [
            row("a", "rnd-full", 10.0, "t"),
            row("a", "baseline", 12.0, "t"),
            row("b", "baseline", 30.0, "u"),
            row("b", "rnd-full", 29.5, "u"),
        ];
        let c = compare(&rows).unwrap();
        assert_eq!(c.variants, ["baseline", "rnd-full"]);
        assert_eq!(c.best, [Some(1), Some(1)]);
        assert_eq!(c.delta[1][0], Some(10.0 - 12.0));
        assert_eq!(c.delta[1][1], Some(29.5 - 30.0));
    }

    #[test]
    fn mixed_tokenizers_in_column_rejected() {
        let rows = [row("a", "baseline", 1.0, "t"), row("a", "rnd-full", 1.0, "u")];
        assert!(compare(&rows).is_err());
        let dup = [row("a", "baseline", 1.0, "t"), row("a", "baseline", 2.0, "t")];
        assert!(compare(&dup).is_err());
    }
}
