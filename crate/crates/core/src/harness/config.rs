//! Flat `key=value` experiment configuration.
//!
//! One setting per line; `#` starts a comment. List keys (`test`, `ood_test`)
//! may repeat. Flags given on top of a file replace the file's value, and for
//! list keys the whole list.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::contraction::{ContractionConfig, Mode, Sharing};
use crate::error::{Error, Result};
use crate::lm::LmConfig;
use crate::parallel::Execution;
use crate::training::{OptimizerKind, TrainConfig};

/// Environment variable that relocates relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "RNDLM_OUTPUT_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenizerKind {
    Word,
    Bpe,
}

impl TokenizerKind {
    pub fn name(self) -> &'static str {
        match self {
            TokenizerKind::Word => "word",
            TokenizerKind::Bpe => "bpe",
        }
    }
}

impl FromStr for TokenizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "word" => Ok(TokenizerKind::Word),
            "bpe" => Ok(TokenizerKind::Bpe),
            _ => Err(Error::config(format!("tokenizer must be word or bpe, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub train: PathBuf,
    pub valid: PathBuf,
    pub test: Vec<PathBuf>,
    pub ood_test: Vec<PathBuf>,
    pub output: PathBuf,
    pub seed: u64,
    pub tokenizer: TokenizerKind,
    pub merges: Option<usize>,
    pub min_count: u64,
    pub model: LmConfig,
    pub lm: TrainConfig,
    pub rnd: TrainConfig,
    pub contraction: ContractionConfig,
    pub carry: bool,
    pub dump: bool,
    pub exec: Execution,
}

const LIST_KEYS: &[&str] = &["test", "ood_test"];

const KEYS: &[&str] = &[
    "train",
    "valid",
    "test",
    "ood_test",
    "output",
    "seed",
    "tokenizer",
    "merges",
    "min_count",
    "hidden",
    "layers",
    "mixtures",
    "dropout_input",
    "dropout_hidden",
    "tied",
    "lm.optimizer",
    "lm.lr",
    "lm.decay",
    "lm.patience",
    "lm.max_epochs",
    "lm.clip",
    "lm.batch",
    "lm.bptt",
    "rnd.lr",
    "rnd.beta1",
    "rnd.beta2",
    "rnd.eps",
    "rnd.patience",
    "rnd.max_epochs",
    "rnd.batch",
    "alpha",
    "beta",
    "mode",
    "sharing",
    "carry",
    "dump",
    "execution",
];

/// Raw settings: key to one or more values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, Vec<String>>,
}

fn split_setting(line: &str) -> Result<(&str, &str)> {
    let (k, v) = line
        .split_once('=')
        .ok_or_else(|| Error::config(format!("expected key=value, got {line:?}")))?;
    let k = k.trim();
    if !KEYS.contains(&k) {
        return Err(Error::config(format!("unknown key {k:?}")));
    }
    Ok((k, v.trim()))
}

impl Settings {
    pub fn parse_file_text(text: &str) -> Result<Self> {
        let mut s = Settings::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = split_setting(line).map_err(|e| Error::config(format!("line {}: {e}", n + 1)))?;
            let entry = s.values.entry(k.to_string()).or_default();
            if !entry.is_empty() && !LIST_KEYS.contains(&k) {
                return Err(Error::config(format!("line {}: key {k:?} given twice", n + 1)));
            }
            entry.push(v.to_string());
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_file_text(&text)
    }

    /// Applies `key=value` flags; they take precedence over file values.
    pub fn apply_flags<S: AsRef<str>>(&mut self, flags: &[S]) -> Result<()> {
        let mut given: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for f in flags {
            let (k, v) = split_setting(f.as_ref())?;
            given.entry(k.to_string()).or_default().push(v.to_string());
        }
        for (k, vs) in given {
            let vs = if LIST_KEYS.contains(&k.as_str()) {
                vs
            } else {
                vec![vs.last().expect("non-empty").clone()]
            };
            self.values.insert(k, vs);
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> Result<()> {
        self.apply_flags(&[format!("{key}={}", value.to_string())])
    }

    fn one(&self, key: &str) -> Option<&str> {
        self.values.get(key).and_then(|v| v.last()).map(String::as_str)
    }

    fn list(&self, key: &str) -> Vec<PathBuf> {
        self.values
            .get(key)
            .map(|v| v.iter().map(PathBuf::from).collect())
            .unwrap_or_default()
    }

    fn typed<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.one(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse()
                .map_err(|_| Error::config(format!("{key}={raw}: expected a {}", std::any::type_name::<T>()))),
        }
    }

    fn required(&self, key: &str) -> Result<PathBuf> {
        self.one(key)
            .map(PathBuf::from)
            .ok_or_else(|| Error::config(format!("missing required key {key:?}")))
    }

    /// Resolves into a validated configuration, filling defaults.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let tokenizer: TokenizerKind = self.one("tokenizer").unwrap_or("word").parse()?;
        let merges = match self.one("merges") {
            Some(_) => Some(self.typed("merges", 0usize)?),
            None => None,
        };
        if tokenizer == TokenizerKind::Bpe && merges.is_none() {
            return Err(Error::config("tokenizer=bpe needs merges=<count>"));
        }
        let mut model = LmConfig::new(1, self.typed("hidden", 256usize)?);
        model.layers = self.typed("layers", model.layers)?;
        model.mixtures = self.typed("mixtures", model.mixtures)?;
        model.dropout_input = self.typed("dropout_input", model.dropout_input)?;
        model.dropout_hidden = self.typed("dropout_hidden", model.dropout_hidden)?;
        model.tied = self.typed("tied", model.tied)?;
        model.validate()?;

        let seed = self.typed("seed", 1u64)?;
        let exec = match self.one("execution").unwrap_or("parallel") {
            "parallel" => Execution::Parallel,
            "sequential" => Execution::Sequential,
            other => {
                return Err(Error::config(format!(
                    "execution must be parallel or sequential, got {other:?}"
                )))
            }
        };

        let d = TrainConfig::lm_default();
        let clip = match self.one("lm.clip") {
            Some("none") => None,
            Some(_) => Some(self.typed("lm.clip", 0.0)?),
            None => d.clip_norm,
        };
        let lm = TrainConfig {
            optimizer: OptimizerKind::parse(self.one("lm.optimizer").unwrap_or(d.optimizer.name()))?,
            learning_rate: self.typed("lm.lr", d.learning_rate)?,
            decay: self.typed("lm.decay", d.decay)?,
            patience: self.typed("lm.patience", d.patience)?,
            max_epochs: self.typed("lm.max_epochs", d.max_epochs)?,
            clip_norm: clip,
            batch_size: self.typed("lm.batch", d.batch_size)?,
            bptt: self.typed("lm.bptt", d.bptt)?,
            seed,
            exec,
            ..d
        };
        lm.validate()?;
        let r = TrainConfig::rnd_default();
        let rnd = TrainConfig {
            learning_rate: self.typed("rnd.lr", r.learning_rate)?,
            adam_beta1: self.typed("rnd.beta1", r.adam_beta1)?,
            adam_beta2: self.typed("rnd.beta2", r.adam_beta2)?,
            adam_eps: self.typed("rnd.eps", r.adam_eps)?,
            patience: self.typed("rnd.patience", r.patience)?,
            max_epochs: self.typed("rnd.max_epochs", r.max_epochs)?,
            batch_size: self.typed("rnd.batch", r.batch_size)?,
            seed,
            exec,
            ..r
        };
        rnd.validate()?;
        let contraction = ContractionConfig {
            alpha: self.typed("alpha", 1.0)?,
            beta: self.typed("beta", 1.0)?,
            mode: self.typed("mode", Mode::Full)?,
            sharing: self.typed("sharing", Sharing::PerLayer)?,
        };
        contraction.validate()?;

        let test = self.list("test");
        Ok(ExperimentConfig {
            train: self.required("train")?,
            valid: self.required("valid")?,
            test,
            ood_test: self.list("ood_test"),
            output: PathBuf::from(self.one("output").unwrap_or("run")),
            seed,
            tokenizer,
            merges,
            min_count: self.typed("min_count", 1u64)?,
            model,
            lm,
            rnd,
            contraction,
            carry: self.typed("carry", true)?,
            dump: self.typed("dump", false)?,
            exec,
        })
    }
}

/// Reads an optional config file and applies flags over it.
pub fn parse_config<S: AsRef<str>>(file: Option<&Path>, flags: &[S]) -> Result<ExperimentConfig> {
    let mut s = match file {
        Some(p) => Settings::load(p)?,
        None => Settings::default(),
    };
    s.apply_flags(flags)?;
    s.resolve()
}

impl ExperimentConfig {
    /// Every setting in canonical order; parses back to an equal config.
    pub fn to_file_string(&self) -> String {
        let mut lines: Vec<String> = Vec::new();
        let mut put = |k: &str, v: String| lines.push(format!("{k}={v}"));
        put("train", self.train.display().to_string());
        put("valid", self.valid.display().to_string());
        for t in &self.test {
            put("test", t.display().to_string());
        }
        for t in &self.ood_test {
            put("ood_test", t.display().to_string());
        }
        put("output", self.output.display().to_string());
        put("seed", self.seed.to_string());
        put("tokenizer", self.tokenizer.name().to_string());
        if let Some(m) = self.merges {
            put("merges", m.to_string());
        }
        put("min_count", self.min_count.to_string());
        let m = &self.model;
        put("hidden", m.hidden.to_string());
        put("layers", m.layers.to_string());
        put("mixtures", m.mixtures.to_string());
        put("dropout_input", m.dropout_input.to_string());
        put("dropout_hidden", m.dropout_hidden.to_string());
        put("tied", m.tied.to_string());
        let l = &self.lm;
        put("lm.optimizer", l.optimizer.name().to_string());
        put("lm.lr", l.learning_rate.to_string());
        put("lm.decay", l.decay.to_string());
        put("lm.patience", l.patience.to_string());
        put("lm.max_epochs", l.max_epochs.to_string());
        put(
            "lm.clip",
            l.clip_norm.map_or_else(|| "none".to_string(), |c| c.to_string()),
        );
        put("lm.batch", l.batch_size.to_string());
        put("lm.bptt", l.bptt.to_string());
        let r = &self.rnd;
        put("rnd.lr", r.learning_rate.to_string());
        put("rnd.beta1", r.adam_beta1.to_string());
        put("rnd.beta2", r.adam_beta2.to_string());
        put("rnd.eps", r.adam_eps.to_string());
        put("rnd.patience", r.patience.to_string());
        put("rnd.max_epochs", r.max_epochs.to_string());
        put("rnd.batch", r.batch_size.to_string());
        let c = &self.contraction;
        put("alpha", c.alpha.to_string());
        put("beta", c.beta.to_string());
        put("mode", c.mode.name().to_string());
        put("sharing", c.sharing.name().to_string());
        put("carry", self.carry.to_string());
        put("dump", self.dump.to_string());
        put(
            "execution",
            if self.exec == Execution::Sequential {
                "sequential"
            } else {
                "parallel"
            }
            .to_string(),
        );
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }

    /// The output directory, relocated under `$RNDLM_OUTPUT_ROOT` when relative.
    pub fn output_dir(&self) -> PathBuf {
        resolve_output(&self.output)
    }

    /// Rejects configs without a test corpus or whose input files are missing.
    pub fn check_inputs(&self) -> Result<()> {
        if self.test.is_empty() {
            return Err(Error::config("at least one test=<path> is required"));
        }
        let all = [&self.train, &self.valid]
            .into_iter()
            .chain(&self.test)
            .chain(&self.ood_test);
        for p in all {
            if !p.is_file() {
                return Err(Error::data(format!("input corpus {} does not exist", p.display())));
            }
        }
        Ok(())
    }
}

pub fn resolve_output(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if !root.is_empty() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const REQUIRED: [&str; 3] = ["train=a.txt", "valid=b.txt", "test=c.txt"];

    #[test]
    fn defaults_applied_to_empty_file() {
        let c = parse_config::<&str>(None, &REQUIRED).unwrap();
        assert_eq!(
            c.lm,
            TrainConfig {
                seed: 1,
                ..TrainConfig::lm_default()
            }
        );
        assert_eq!(c.contraction.alpha, 1.0);
        assert_eq!(c.contraction.beta, 1.0);
        assert_eq!(c.model.layers, 2);
        assert_eq!(c.model.mixtures, 3);
        assert_eq!(c.output, PathBuf::from("run"));
    }

    #[test]
    fn flag_beats_file() {
        let mut s = Settings::parse_file_text("train=a\nvalid=b\ntest=c\ntest=d\nseed=4\n").unwrap();
        s.apply_flags(&["seed=9", "test=e"]).unwrap();
        let c = s.resolve().unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.test, [PathBuf::from("e")]);
    }

    #[test]
    fn bad_inputs_rejected() {
        let err = Settings::parse_file_text("bogus=1").unwrap_err();
        assert!(err.to_string().contains("bogus"));
        assert!(parse_config(None, &["train=a", "valid=b", "test=c", "alpha=-1"]).is_err());
        assert!(parse_config(None, &["train=a", "valid=b", "test=c", "hidden=big"]).is_err());
        assert_eq!(
            parse_config(None, &["train=a", "valid=b"])
                .unwrap()
                .check_inputs()
                .unwrap_err()
                .exit_code(),
            1
        );
        assert!(parse_config(None, &["train=a", "test=b"]).is_err());
        assert!(parse_config(None, &["train=a", "valid=b", "test=c", "tokenizer=bpe"]).is_err());
        assert!(Settings::parse_file_text("seed=1\nseed=2").is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let flags = [
            "train=a",
            "valid=b",
            "test=c",
            "ood_test=x",
            "ood_test=y",
            "tokenizer=bpe",
            "merges=50",
            "lm.clip=none",
        ];
        let c = parse_config(None, &flags).unwrap();
        let back = Settings::parse_file_text(&c.to_file_string())
            .unwrap()
            .resolve()
            .unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn missing_corpus_rejected_before_compute() {
        let c = parse_config(None, &["train=/nonexistent/a", "valid=b", "test=c"]).unwrap();
        assert_eq!(c.check_inputs().unwrap_err().exit_code(), 2);
    }
}
