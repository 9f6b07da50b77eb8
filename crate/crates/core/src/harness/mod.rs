//! Configuration, dataset plumbing and the end-to-end pipeline.

mod artifacts;
mod config;
mod pipeline;

pub use artifacts::{ArtifactWriter, Manifest, ManifestEntry, OutputLock, LOCK_FILE, MANIFEST_FILE};
pub use config::{parse_config, resolve_output, ExperimentConfig, Settings, TokenizerKind, OUTPUT_ROOT_ENV};
pub use pipeline::{
    build_tokenizer, evaluate_stage, load_datasets, load_run, read_corpus, run_pipeline, train_lm_stage,
    train_rnd_stage, LmStage, PipelineOutput, LM_FILE, RND_FILE, TOKENIZER_FILE,
};
