use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rndlm::checkpoint::Checkpoint;
use rndlm::contraction::{ContractionConfig, Contractor, Mode, Sharing};
use rndlm::evaluation::{self, compare, Dataset, DumpRecord, EvalOptions, EvalReport, OodRow};
use rndlm::harness::{self, resolve_output, TokenizerKind};
use rndlm::lm::LmParameters;
use rndlm::parallel::Execution;
use rndlm::rnd::{OodScorer, RndDetector};
use rndlm::tokenization::Tokenizer;
use rndlm::{Error, Result};

#[derive(Parser)]
#[command(name = "rndlm", version, about = "GRU language models with RND state contraction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build, learn or apply tokenizers.
    #[command(subcommand)]
    Tokenize(TokenizeCmd),
    /// Train the language model or its OOD detector.
    #[command(subcommand)]
    Train(TrainCmd),
    /// Measure perplexity, OOD scores and position profiles.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Run every stage end to end.
    #[command(subcommand)]
    Pipeline(PipelineCmd),
}

#[derive(Subcommand)]
enum TokenizeCmd {
    /// Word vocabulary from a training corpus.
    BuildVocab {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Words seen fewer times map to <unk>.
        #[arg(long, default_value_t = 1)]
        min_count: u64,
    },
    /// BPE merge table from a training corpus.
    LearnBpe {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        merges: usize,
    },
    /// Encode a corpus as space-separated ids, one sentence per line.
    Apply {
        #[arg(long)]
        tokenizer: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one setting; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<harness::ExperimentConfig> {
        harness::parse_config(self.config.as_deref(), &self.set)
    }
}

#[derive(Subcommand)]
enum TrainCmd {
    /// Train the language model on the configured train/valid corpora.
    Lm {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        tokenizer: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Training log TSV.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Train one RND detector per layer of a frozen language model.
    Rnd {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        tokenizer: PathBuf,
        #[arg(long)]
        lm: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Directory for per-layer training logs.
        #[arg(long)]
        log_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    tokenizer: PathBuf,
    #[arg(long)]
    lm: PathBuf,
    /// Detector checkpoint; needed for modes full and ablation and for OOD scores.
    #[arg(long)]
    rnd: Option<PathBuf>,
    /// Evaluation corpora; repeatable.
    #[arg(long = "data", required = true)]
    data: Vec<PathBuf>,
    #[arg(long, default_value = "parallel", value_parser = ["parallel", "sequential"])]
    execution: String,
}

struct Loaded {
    lm: LmParameters,
    det: Option<RndDetector>,
    datasets: Vec<Dataset>,
    exec: Execution,
}

impl ModelArgs {
    fn load(&self) -> Result<Loaded> {
        let tok = Tokenizer::load(&self.tokenizer)?;
        let lm = LmParameters::from_checkpoint(&Checkpoint::load(&self.lm)?)?;
        let det = match &self.rnd {
            Some(p) => Some(RndDetector::from_checkpoint(&Checkpoint::load(p)?)?),
            None => None,
        };
        let datasets = harness::load_datasets(&self.data, &tok)?;
        let exec = if self.execution == "sequential" {
            Execution::Sequential
        } else {
            Execution::Parallel
        };
        Ok(Loaded {
            lm,
            det,
            datasets,
            exec,
        })
    }
}

#[derive(Subcommand)]
enum EvalCmd {
    /// Perplexity of each corpus under one contraction mode.
    Perplexity {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value = "off")]
        mode: Mode,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        #[arg(long, default_value = "per-layer")]
        sharing: Sharing,
        /// Start every sentence from the zero state instead of carrying it.
        #[arg(long)]
        no_carry: bool,
        /// Report prefix; writes <prefix>.tsv and <prefix>.json.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Directory for per-token dumps, one TSV per corpus.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Mean OOD score per corpus on the unmodified model's states.
    Ood {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-position state norm and readout entropy, sentences from the zero state.
    Profile {
        #[command(flatten)]
        model: ModelArgs,
        /// Output prefix; writes <prefix>.tsv and <prefix>.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Variants-by-datasets perplexity table from report JSON files.
    Compare {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum PipelineCmd {
    /// tokenize, train LM, train RND, evaluate; writes a manifest.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory; same as --set output=DIR.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

fn write(path: &Path, text: &str) -> Result<()> {
    let path = resolve_output(path);
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn with_ext(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(format!(".{ext}"));
    PathBuf::from(s)
}

fn tokenize(cmd: TokenizeCmd) -> Result<()> {
    match cmd {
        TokenizeCmd::BuildVocab { input, out, min_count } => {
            let lines = harness::read_corpus(&input)?;
            let tok = harness::build_tokenizer(TokenizerKind::Word, &lines, min_count, None)?;
            write(&out, &tok.to_file_string())?;
            eprintln!("vocabulary of {} entries", tok.vocab_size());
        }
        TokenizeCmd::LearnBpe { input, out, merges } => {
            let lines = harness::read_corpus(&input)?;
            let tok = harness::build_tokenizer(TokenizerKind::Bpe, &lines, 1, Some(merges))?;
            write(&out, &tok.to_file_string())?;
            eprintln!("BPE vocabulary of {} entries", tok.vocab_size());
        }
        TokenizeCmd::Apply { tokenizer, input, out } => {
            let tok = Tokenizer::load(&tokenizer)?;
            let mut text = String::new();
            for line in harness::read_corpus(&input)? {
                let ids: Vec<String> = tok.encode(&line).iter().map(u32::to_string).collect();
                text.push_str(&ids.join(" "));
                text.push('\n');
            }
            match out {
                Some(p) => write(&p, &text)?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

fn train(cmd: TrainCmd) -> Result<()> {
    match cmd {
        TrainCmd::Lm {
            cfg,
            tokenizer,
            out,
            log,
        } => {
            let cfg = cfg.resolve()?;
            let tok = Tokenizer::load(&tokenizer)?;
            let (train, valid) = (harness::read_corpus(&cfg.train)?, harness::read_corpus(&cfg.valid)?);
            let stage = harness::train_lm_stage(&cfg.model, &cfg.lm, cfg.seed, &tok, &train, &valid)?;
            stage.params.to_checkpoint().save(&resolve_output(&out))?;
            if let Some(l) = log {
                write(&l, &stage.log.to_tsv())?;
            }
            if let Some(why) = stage.diverged {
                return Err(Error::Numerical(format!(
                    "training diverged ({why}); saved the last good checkpoint"
                )));
            }
            if let Some(best) = stage.log.best() {
                eprintln!("best epoch {} valid loss {:.6}", best.epoch, best.valid_loss);
            }
        }
        TrainCmd::Rnd {
            cfg,
            tokenizer,
            lm,
            out,
            log_dir,
        } => {
            let cfg = cfg.resolve()?;
            let tok = Tokenizer::load(&tokenizer)?;
            let lm = LmParameters::from_checkpoint(&Checkpoint::load(&lm)?)?;
            let (train, valid) = (harness::read_corpus(&cfg.train)?, harness::read_corpus(&cfg.valid)?);
            let (det, reports) = harness::train_rnd_stage(&lm, &cfg.rnd, cfg.seed, &tok, &train, &valid)?;
            det.to_checkpoint().save(&resolve_output(&out))?;
            for r in &reports {
                if let Some(dir) = &log_dir {
                    write(&dir.join(format!("rnd_train_layer{}.tsv", r.layer)), &r.log.to_tsv())?;
                }
                eprintln!(
                    "layer {}: valid loss {:.6} -> {:.6}",
                    r.layer, r.initial_valid, r.best_valid
                );
            }
        }
    }
    Ok(())
}

fn eval(cmd: EvalCmd) -> Result<()> {
    match cmd {
        EvalCmd::Perplexity {
            model,
            mode,
            alpha,
            beta,
            sharing,
            no_carry,
            report,
            dump,
        } => {
            let m = model.load()?;
            let cfg = ContractionConfig {
                alpha,
                beta,
                mode,
                sharing,
            };
            let scorer = m.det.as_ref().map(|d| d as &dyn OodScorer);
            let c = Contractor::new(&m.lm, scorer, cfg)?;
            let opts = EvalOptions {
                carry: !no_carry,
                exec: m.exec,
            };
            let mut rows = Vec::new();
            for data in &m.datasets {
                let e = evaluation::perplexity(&c, data, opts)?;
                if let Some(dir) = &dump {
                    let name = format!("{}.{}.tsv", e.row.dataset, e.row.variant);
                    write(&dir.join(name), &DumpRecord::to_tsv(&e.dump, m.lm.layers()))?;
                }
                rows.push(e.row);
            }
            let rep = EvalReport { seed: None, rows };
            print!("{}", rep.to_tsv());
            if let Some(p) = report {
                write(&with_ext(&p, "tsv"), &rep.to_tsv())?;
                write(&with_ext(&p, "json"), &rep.to_json())?;
            }
        }
        EvalCmd::Ood { model, out } => {
            let m = model.load()?;
            let det = m.det.as_ref().ok_or_else(|| Error::config("eval ood needs --rnd"))?;
            let rows = evaluation::ood_table(
                &m.lm,
                det,
                &m.datasets,
                EvalOptions {
                    carry: true,
                    exec: m.exec,
                },
            )?;
            let text = OodRow::to_tsv(&rows);
            print!("{text}");
            if let Some(p) = out {
                write(&p, &text)?;
            }
        }
        EvalCmd::Profile { model, out } => {
            let m = model.load()?;
            for data in &m.datasets {
                let prof = evaluation::position_profile(&m.lm, data, m.exec)?;
                print!("# dataset={}\n{}", data.name, prof.to_tsv());
                if let Some(p) = &out {
                    let prefix = if m.datasets.len() == 1 {
                        p.clone()
                    } else {
                        with_ext(p, &data.name)
                    };
                    write(&with_ext(&prefix, "tsv"), &prof.to_tsv())?;
                    write(&with_ext(&prefix, "json"), &prof.to_json())?;
                }
            }
        }
        EvalCmd::Compare { reports, out } => {
            let mut rows = Vec::new();
            for p in &reports {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                rows.extend(EvalReport::from_json(&text)?.rows);
            }
            let table = compare(&rows)?.to_tsv();
            print!("{table}");
            if let Some(p) = out {
                write(&p, &table)?;
            }
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Tokenize(c) => tokenize(c),
        Command::Train(c) => train(c),
        Command::Eval(c) => eval(c),
        Command::Pipeline(PipelineCmd::Run { mut cfg, output }) => {
            if let Some(o) = output {
                cfg.set.push(format!("output={}", o.display()));
            }
            let cfg = cfg.resolve()?;
            let out = harness::run_pipeline(&cfg)?;
            print!("{}", compare(&out.report.rows)?.to_tsv());
            eprintln!("artifacts in {}", out.dir.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
