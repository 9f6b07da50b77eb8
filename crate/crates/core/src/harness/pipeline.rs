use std::fs;
use std::path::{Path, PathBuf};

use super::artifacts::{ArtifactWriter, Manifest, OutputLock};
use super::config::{ExperimentConfig, TokenizerKind};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::evaluation::{self, compare, Dataset, DumpRecord, EvalOptions, EvalReport, OodRow};
use crate::lm::{LmConfig, LmParameters};
use crate::rnd::{RndDetector, StudentReport};
use crate::rng;
use crate::tokenization::{BpeModel, Tokenizer, Vocabulary};
use crate::training::{self, TrainConfig, TrainLog};

pub const TOKENIZER_FILE: &str = "tokenizer.txt";
pub const LM_FILE: &str = "lm.ckpt";
pub const RND_FILE: &str = "rnd.ckpt";

/// Non-empty lines of a UTF-8 corpus, one sentence each.
pub fn read_corpus(path: &Path) -> Result<Vec<String>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8(bytes).map_err(|_| Error::data(format!("{} is not UTF-8", path.display())))?;
    let lines: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    if lines.is_empty() {
        return Err(Error::data(format!("{} has no sentences", path.display())));
    }
    Ok(lines)
}

pub fn build_tokenizer(
    kind: TokenizerKind,
    lines: &[String],
    min_count: u64,
    merges: Option<usize>,
) -> Result<Tokenizer> {
    let it = lines.iter().map(String::as_str);
    Ok(match kind {
        TokenizerKind::Word => Tokenizer::Word(Vocabulary::build(it, min_count)?),
        TokenizerKind::Bpe => {
            let m = merges.ok_or_else(|| Error::config("BPE needs a merge count"))?;
            Tokenizer::Bpe(BpeModel::learn(it, m))
        }
    })
}

fn encode(tok: &Tokenizer, lines: &[String]) -> Vec<u32> {
    tok.encode_corpus(lines.iter().map(String::as_str))
}

/// Outcome of LM training; `params` are rounded to checkpoint precision.
#[derive(Debug, Clone)]
pub struct LmStage {
    pub params: LmParameters,
    pub log: TrainLog,
    pub diverged: Option<String>,
}

pub fn train_lm_stage(
    model: &LmConfig,
    train_cfg: &TrainConfig,
    seed: u64,
    tok: &Tokenizer,
    train: &[String],
    valid: &[String],
) -> Result<LmStage> {
    let config = LmConfig {
        vocab_size: tok.vocab_size(),
        ..model.clone()
    };
    let mut params = LmParameters::init(config, &mut rng::stream(seed, rng::LM_INIT))?;
    params.tokenizer_hash = tok.hash();
    let cfg = TrainConfig {
        seed: rng::sub_seed(seed, rng::DATA_SHUFFLE),
        ..train_cfg.clone()
    };
    let res = training::train_lm(&encode(tok, train), &encode(tok, valid), params, &cfg)?;
    let mut params = res.params;
    params.round_to_checkpoint_precision();
    Ok(LmStage {
        params,
        log: res.log,
        diverged: res.diverged,
    })
}

pub fn train_rnd_stage(
    lm: &LmParameters,
    train_cfg: &TrainConfig,
    seed: u64,
    tok: &Tokenizer,
    train: &[String],
    valid: &[String],
) -> Result<(RndDetector, Vec<StudentReport>)> {
    if lm.tokenizer_hash != tok.hash() {
        return Err(Error::Mismatch {
            what: "tokenizer hash",
            expected: lm.tokenizer_hash.clone(),
            found: tok.hash(),
        });
    }
    let det = RndDetector::init(rng::sub_seed(seed, rng::RND_INIT), lm.hidden(), lm.layers())?;
    let cfg = TrainConfig {
        seed: rng::sub_seed(seed, rng::DATA_SHUFFLE),
        ..train_cfg.clone()
    };
    let (mut det, reports) = training::train_rnd_stage(lm, &encode(tok, train), &encode(tok, valid), det, &cfg)?;
    det.round_to_checkpoint_precision();
    Ok((det, reports))
}

/// Names datasets after their file stems, de-duplicated in order.
pub fn load_datasets(paths: &[PathBuf], tok: &Tokenizer) -> Result<Vec<Dataset>> {
    let mut out: Vec<Dataset> = Vec::new();
    for p in paths {
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("corpus").to_string();
        let mut name = stem.clone();
        let mut k = 2;
        while out.iter().any(|d| d.name == name) {
            name = format!("{stem}-{k}");
            k += 1;
        }
        let lines = read_corpus(p)?;
        out.push(Dataset::from_lines(&name, lines.iter().map(String::as_str), tok)?);
    }
    Ok(out)
}

/// Writes reports for every dataset x variant, the OOD table, the comparison
/// table, the position profile of the first dataset and optional dumps.
pub fn evaluate_stage(
    cfg: &ExperimentConfig,
    tok: &Tokenizer,
    lm: &LmParameters,
    det: &RndDetector,
    writer: &mut ArtifactWriter,
) -> Result<EvalReport> {
    let paths: Vec<PathBuf> = cfg.test.iter().chain(&cfg.ood_test).cloned().collect();
    let datasets = load_datasets(&paths, tok)?;
    let opts = EvalOptions {
        carry: cfg.carry,
        exec: cfg.exec,
    };
    let evals = evaluation::evaluate_variants(lm, det, cfg.contraction, &datasets, opts)?;
    if cfg.dump {
        for e in &evals {
            let name = format!("dump/{}.{}.tsv", e.row.dataset, e.row.variant);
            writer.write(&name, DumpRecord::to_tsv(&e.dump, lm.layers()).as_bytes(), true)?;
        }
    }
    let report = EvalReport {
        seed: Some(cfg.seed),
        rows: evals.into_iter().map(|e| e.row).collect(),
    };
    writer.write("report.tsv", report.to_tsv().as_bytes(), true)?;
    writer.write("report.json", report.to_json().as_bytes(), true)?;
    writer.write("compare.tsv", compare(&report.rows)?.to_tsv().as_bytes(), true)?;
    let ood = evaluation::ood_table(lm, det, &datasets, opts)?;
    writer.write("ood.tsv", OodRow::to_tsv(&ood).as_bytes(), true)?;
    let profile = evaluation::position_profile(lm, &datasets[0], cfg.exec)?;
    writer.write("profile.tsv", profile.to_tsv().as_bytes(), true)?;
    writer.write("profile.json", profile.to_json().as_bytes(), true)?;
    Ok(report)
}

/// Loads the tokenizer and both checkpoints of a finished run.
pub fn load_run(dir: &Path) -> Result<(Tokenizer, LmParameters, RndDetector)> {
    let tok = Tokenizer::load(&dir.join(TOKENIZER_FILE))?;
    let lm = LmParameters::from_checkpoint(&Checkpoint::load(&dir.join(LM_FILE))?)?;
    let det = RndDetector::from_checkpoint(&Checkpoint::load(&dir.join(RND_FILE))?)?;
    Ok((tok, lm, det))
}

#[derive(Debug)]
pub struct PipelineOutput {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub report: EvalReport,
}

fn log_tsv(log: &TrainLog) -> Vec<u8> {
    log.to_tsv().into_bytes()
}

/// tokenize -> train LM -> train RND -> evaluate, writing every artifact and
/// a manifest into the configured output directory. A failing stage is
/// reported by name; files written before it remain in place and are listed
/// in the manifest.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<PipelineOutput> {
    cfg.check_inputs()?;
    let dir = cfg.output_dir();
    let _lock = OutputLock::acquire(&dir)?;
    let mut w = ArtifactWriter::new(&dir);
    let config_text = cfg.to_file_string();
    w.write("config.txt", config_text.as_bytes(), true)?;
    let result = stages(cfg, &mut w);
    let manifest = w.finish(cfg.seed, &config_text)?;
    let report = result?;
    Ok(PipelineOutput { dir, manifest, report })
}

fn stages(cfg: &ExperimentConfig, w: &mut ArtifactWriter) -> Result<EvalReport> {
    let train = read_corpus(&cfg.train).map_err(|e| e.in_stage("tokenize"))?;
    let valid = read_corpus(&cfg.valid).map_err(|e| e.in_stage("tokenize"))?;
    let tok = build_tokenizer(cfg.tokenizer, &train, cfg.min_count, cfg.merges).map_err(|e| e.in_stage("tokenize"))?;
    w.write(TOKENIZER_FILE, tok.to_file_string().as_bytes(), true)?;

    let lm = train_lm_stage(&cfg.model, &cfg.lm, cfg.seed, &tok, &train, &valid).map_err(|e| e.in_stage("train-lm"))?;
    w.write(LM_FILE, &lm.params.to_checkpoint().to_bytes(), true)?;
    w.write("lm_train.tsv", &log_tsv(&lm.log), false)?;
    if let Some(why) = lm.diverged {
        return Err(
            Error::Numerical(format!("training diverged ({why}); kept the last good checkpoint")).in_stage("train-lm"),
        );
    }

    let (det, reports) =
        train_rnd_stage(&lm.params, &cfg.rnd, cfg.seed, &tok, &train, &valid).map_err(|e| e.in_stage("train-rnd"))?;
    w.write(RND_FILE, &det.to_checkpoint().to_bytes(), true)?;
    for r in &reports {
        w.write(&format!("rnd_train_layer{}.tsv", r.layer), &log_tsv(&r.log), false)?;
    }

    // evaluate from what is on disk, exactly as a standalone evaluation would
    let (tok, lm, det) = load_run(w.dir()).map_err(|e| e.in_stage("evaluate"))?;
    evaluate_stage(cfg, &tok, &lm, &det, w).map_err(|e| e.in_stage("evaluate"))
}
