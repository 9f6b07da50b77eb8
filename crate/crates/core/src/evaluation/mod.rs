//! Perplexity, OOD-score and position-profile measurements.

mod compare;
mod profile;
mod report;

pub use compare::{compare, Comparison};
pub use profile::{pearson, position_profile, PositionProfile, ProfileRow};
pub use report::{mean_scores, DumpRecord, EvalReport, EvalRow, OodRow};

use std::fmt;
use std::str::FromStr;

use crate::contraction::{ContractionConfig, Contractor, Mode, TokenTrace};
use crate::error::{Error, Result};
use crate::lm::LmParameters;
use crate::parallel::{self, Execution};
use crate::rnd::OodScorer;
use crate::tokenization::{Tokenizer, EOS_ID, UNK_ID};

/// Model variants compared in every report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Variant {
    Baseline,
    RndFull,
    RndAblation,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Baseline, Variant::RndFull, Variant::RndAblation];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::RndFull => "rnd-full",
            Variant::RndAblation => "rnd-ablation",
        }
    }

    pub fn mode(self) -> Mode {
        match self {
            Variant::Baseline => Mode::Off,
            Variant::RndFull => Mode::Full,
            Variant::RndAblation => Mode::Ablation,
        }
    }

    pub fn from_mode(mode: Mode) -> Self {
        match mode {
            Mode::Off => Variant::Baseline,
            Mode::Full => Variant::RndFull,
            Mode::Ablation => Variant::RndAblation,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::config(format!("unknown variant {s:?}")))
    }
}

/// A tokenized evaluation corpus. Every sentence ends with `<eos>`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub sentences: Vec<Vec<u32>>,
    pub tokenizer_hash: String,
}

impl Dataset {
    pub fn from_lines<'a>(name: &str, lines: impl IntoIterator<Item = &'a str>, tokenizer: &Tokenizer) -> Result<Self> {
        let sentences: Vec<Vec<u32>> = lines.into_iter().map(|l| tokenizer.encode(l)).collect();
        Self::from_sentences(name, sentences, &tokenizer.hash())
    }

    pub fn from_sentences(name: &str, sentences: Vec<Vec<u32>>, tokenizer_hash: &str) -> Result<Self> {
        if sentences.is_empty() {
            return Err(Error::data(format!("dataset {name} is empty")));
        }
        Ok(Dataset {
            name: name.to_string(),
            sentences,
            tokenizer_hash: tokenizer_hash.to_string(),
        })
    }

    pub fn num_tokens(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }

    /// Fraction of tokens mapped to the unknown id.
    pub fn oov_rate(&self) -> f64 {
        let unk = self.sentences.iter().flatten().filter(|&&t| t == UNK_ID).count();
        unk as f64 / self.num_tokens().max(1) as f64
    }

    /// All sentences as one stream, preceded by the initial `<eos>` input.
    pub fn stream(&self) -> Vec<u32> {
        let mut ids = Vec::with_capacity(self.num_tokens() + 1);
        ids.push(EOS_ID);
        for s in &self.sentences {
            ids.extend_from_slice(s);
        }
        ids
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    /// Carry the state across sentence boundaries; otherwise every sentence
    /// starts from the zero state.
    pub carry: bool,
    pub exec: Execution,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            carry: true,
            exec: Execution::default(),
        }
    }
}

fn check_tokenizer(params: &LmParameters, data: &Dataset) -> Result<()> {
    if params.tokenizer_hash != data.tokenizer_hash {
        return Err(Error::Mismatch {
            what: "tokenizer hash",
            expected: params.tokenizer_hash.clone(),
            found: format!("{} (dataset {})", data.tokenizer_hash, data.name),
        });
    }
    Ok(())
}

/// Teacher-forced traces of every predicted token, in corpus order.
pub fn trace_dataset(contractor: &Contractor<'_>, data: &Dataset, opts: EvalOptions) -> Result<Vec<TokenTrace>> {
    let params = contractor.params();
    check_tokenizer(params, data)?;
    if opts.carry {
        return contractor.trace(&data.stream(), &mut params.new_state());
    }
    let per = parallel::map(opts.exec, &data.sentences, |s| {
        let mut ids = Vec::with_capacity(s.len() + 1);
        ids.push(EOS_ID);
        ids.extend_from_slice(s);
        contractor.trace(&ids, &mut params.new_state())
    });
    let mut out = Vec::with_capacity(data.num_tokens());
    for t in per {
        out.extend(t?);
    }
    Ok(out)
}

/// Evaluation row plus, optionally, the per-token dump it was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub row: EvalRow,
    pub dump: Vec<DumpRecord>,
}

/// Scores `data` under `contractor` and aggregates a report row.
/// Perplexity is `exp(total NLL / predicted tokens)`; the mean OOD score
/// averages over layers first, then over tokens.
pub fn perplexity(contractor: &Contractor<'_>, data: &Dataset, opts: EvalOptions) -> Result<Evaluation> {
    let traces = trace_dataset(contractor, data, opts)?;
    let dump: Vec<DumpRecord> = traces
        .into_iter()
        .enumerate()
        .map(|(position, t)| DumpRecord {
            position,
            token: t.target,
            log_prob: t.log_prob,
            scores: t.scores,
        })
        .collect();
    let row = aggregate(contractor, data, &dump, opts.carry);
    Ok(Evaluation { row, dump })
}

pub(crate) fn aggregate(contractor: &Contractor<'_>, data: &Dataset, dump: &[DumpRecord], carry: bool) -> EvalRow {
    let n = dump.len();
    let nll = -dump.iter().map(|r| r.log_prob).sum::<f64>();
    let cfg: &ContractionConfig = contractor.config();
    let params = contractor.params();
    let (mean_ood, mean_ood_layers) = if contractor.has_scorer() {
        let (m, per) = report::mean_scores(dump, params.layers());
        (Some(m), per)
    } else {
        (None, Vec::new())
    };
    EvalRow {
        dataset: data.name.clone(),
        variant: Variant::from_mode(cfg.mode).name().to_string(),
        tokens: n,
        nll,
        perplexity: (nll / n as f64).exp(),
        mean_ood,
        mean_ood_raw: mean_ood.map(|m| m * params.hidden() as f64),
        mean_ood_layers,
        oov_rate: data.oov_rate(),
        alpha: cfg.alpha,
        beta: cfg.beta,
        mode: cfg.mode.name().to_string(),
        sharing: cfg.sharing.name().to_string(),
        carry,
        tokenizer_hash: data.tokenizer_hash.clone(),
    }
}

/// Evaluates every dataset under every variant; rows are dataset-major.
pub fn evaluate_variants(
    params: &LmParameters,
    scorer: &dyn OodScorer,
    base: ContractionConfig,
    datasets: &[Dataset],
    opts: EvalOptions,
) -> Result<Vec<Evaluation>> {
    let mut out = Vec::with_capacity(datasets.len() * Variant::ALL.len());
    for data in datasets {
        for v in Variant::ALL {
            let cfg = ContractionConfig { mode: v.mode(), ..base };
            let c = Contractor::new(params, Some(scorer), cfg)?;
            out.push(perplexity(&c, data, opts)?);
        }
    }
    Ok(out)
}

/// Mean OOD score per dataset on the unmodified model's states.
pub fn ood_table(
    params: &LmParameters,
    scorer: &dyn OodScorer,
    datasets: &[Dataset],
    opts: EvalOptions,
) -> Result<Vec<OodRow>> {
    let c = Contractor::new(params, Some(scorer), ContractionConfig::default())?;
    let rows = parallel::map(opts.exec, datasets, |data| -> Result<OodRow> {
        let opts = EvalOptions {
            exec: Execution::Sequential,
            ..opts
        };
        let e = perplexity(&c, data, opts)?;
        Ok(OodRow {
            dataset: data.name.clone(),
            tokens: e.row.tokens,
            mean_ood: e.row.mean_ood.unwrap_or(0.0),
            mean_ood_raw: e.row.mean_ood_raw.unwrap_or(0.0),
            mean_ood_layers: e.row.mean_ood_layers,
        })
    });
    rows.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::LmConfig;
    use crate::rnd::ConstantScorer;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(v: usize) -> LmParameters {
        let mut p = LmParameters::init(LmConfig::new(v, 5), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        p.tokenizer_hash = "tok".into();
        p
    }

    fn data(v: u32) -> Dataset {
        let s = (0..12).map(|i| vec![(i * 3) % v + 2, (i * 5) % v, EOS_ID]).collect();
        Dataset::from_sentences("toy", s, "tok").unwrap()
    }

    #[test]
    fn uniform_model_has_perplexity_v() {
        let mut p = LmParameters::zeros(LmConfig::new(20, 4)).unwrap();
        p.tokenizer_hash = "tok".into();
        let e = perplexity(&Contractor::baseline(&p), &data(18), EvalOptions::default()).unwrap();
        assert!((e.row.perplexity - 20.0).abs() < 1e-9);
        assert_eq!(e.row.tokens, 36);
    }

    #[test]
    fn closed_form_perplexity() {
        // log-probs ln 0.5 and ln 0.125
        let dump = vec![
            DumpRecord {
                position: 0,
                token: 0,
                log_prob: 0.5f64.ln(),
                scores: vec![],
            },
            DumpRecord {
                position: 1,
                token: 0,
                log_prob: 0.125f64.ln(),
                scores: vec![],
            },
        ];
        let p = model(6);
        let row = aggregate(&Contractor::baseline(&p), &data(4), &dump, true);
        // geometric mean of 1/0.5 and 1/0.125
        assert!((row.perplexity - 4.0).abs() < 1e-12);
    }

    #[test]
    fn constant_scorer_gives_constant_mean() {
        let p = model(9);
        let s = ConstantScorer {
            value: 0.37,
            layers: 2,
            d: 5,
            lm_hash: p.fingerprint(),
        };
        let d2 = Dataset::from_sentences("other", vec![vec![3, 4, 1]], "tok").unwrap();
        let rows = ood_table(&p, &s, &[data(7), d2], EvalOptions::default()).unwrap();
        for r in rows {
            assert!((r.mean_ood - 0.37).abs() < 1e-15);
        }
    }

    #[test]
    fn mode_off_equals_baseline() {
        let p = model(9);
        let s = ConstantScorer {
            value: 0.5,
            layers: 2,
            d: 5,
            lm_hash: p.fingerprint(),
        };
        for carry in [true, false] {
            let opts = EvalOptions {
                carry,
                ..Default::default()
            };
            let a = perplexity(&Contractor::baseline(&p), &data(7), opts).unwrap();
            let c = Contractor::new(&p, Some(&s), ContractionConfig::default()).unwrap();
            let b = perplexity(&c, &data(7), opts).unwrap();
            assert_eq!(a.row.perplexity, b.row.perplexity);
        }
    }

    #[test]
    fn sentence_mode_resets_state() {
        let p = model(9);
        let d = data(7);
        let opts = EvalOptions {
            carry: false,
            ..Default::default()
        };
        let e = perplexity(&Contractor::baseline(&p), &d, opts).unwrap();
        let manual: f64 = d.sentences.iter().map(|s| p.sentence_nll(s, EOS_ID).unwrap().nll).sum();
        assert!((e.row.nll - manual).abs() < 1e-12);
        let seq = EvalOptions {
            exec: Execution::Sequential,
            ..opts
        };
        assert_eq!(perplexity(&Contractor::baseline(&p), &d, seq).unwrap(), e);
    }

    #[test]
    fn tokenizer_mismatch_rejected() {
        let p = model(9);
        let mut d = data(7);
        d.tokenizer_hash = "other".into();
        let err = perplexity(&Contractor::baseline(&p), &d, EvalOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Mismatch { .. }));
    }

    #[test]
    fn oov_rate_counts_unknown_ids() {
        let d = Dataset::from_sentences("x", vec![vec![0, 3, 1], vec![0, 1]], "t").unwrap();
        assert!((d.oov_rate() - 0.4).abs() < 1e-15);
    }
}
