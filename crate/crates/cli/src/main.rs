//! `nbr`: command-line front end for the next-basket recommendation toolkit.
//!
//! Exit codes: 0 on success, 2 on usage or validation errors, 1 on runtime
//! failures.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;

/// A usage or validation problem detected by the CLI itself.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

#[derive(Debug, Parser)]
#[command(name = "nbr", version, about = "Next-basket recommendation: models, evaluation, fairness and tuning")]
pub struct Cli {
    /// Seed for every stochastic step (synthetic data, tuning).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the machine's parallelism.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Directory receiving output files.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic transaction log (transactions.csv).
    Synth(SynthArgs),
    /// Filter and split a transaction log into corpus.ndjson, vocab.json and stats.json.
    Ingest(IngestArgs),
    /// Write ranked predictions for every corpus user (predictions.ndjson).
    Recommend(RecommendArgs),
    /// Score predictions (metrics.json, metrics.txt, per_user.csv).
    Evaluate(EvaluateArgs),
    /// Recall@10 by user trait bins (fairness_<axis>.csv, fairness.json).
    Fairness(FairnessArgs),
    /// Search TIFU-KNN hyperparameters on a validation split (trials.csv, best_hp.json).
    Tune(TuneArgs),
    /// Write decayed user vectors (vectors.ndjson).
    ExportVectors(ExportArgs),
}

#[derive(Debug, Clone, Args, Default)]
pub struct SynthOpts {
    #[arg(long)]
    pub users: Option<usize>,
    #[arg(long)]
    pub items: Option<usize>,
    #[arg(long)]
    pub min_baskets_per_user: Option<usize>,
    #[arg(long)]
    pub max_baskets_per_user: Option<usize>,
    #[arg(long)]
    pub min_size: Option<usize>,
    #[arg(long)]
    pub max_size: Option<usize>,
    /// Zipf exponent of item popularity.
    #[arg(long)]
    pub skew: Option<f64>,
    /// Probability of drawing from the user's own item pool.
    #[arg(long)]
    pub repeat_ratio: Option<f64>,
    #[arg(long)]
    pub pool_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub synth: SynthOpts,
    /// Output file; defaults to <out-dir>/transactions.csv.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Transaction CSV with a header row.
    #[arg(long, conflicts_with = "synthetic")]
    pub input: Option<PathBuf>,
    /// Generate the transaction log instead of reading one.
    #[arg(long)]
    pub synthetic: bool,
    #[command(flatten)]
    pub synth: SynthOpts,
    /// Dataset name selecting filter thresholds (instacart, dunnhumby, tafeng, ...).
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub user_col: Option<String>,
    #[arg(long)]
    pub basket_col: Option<String>,
    #[arg(long)]
    pub item_col: Option<String>,
    /// ISO-8601 timestamp column ordering baskets.
    #[arg(long, conflicts_with = "order_col")]
    pub timestamp_col: Option<String>,
    /// Integer column ordering baskets.
    #[arg(long)]
    pub order_col: Option<String>,
    #[arg(long)]
    pub min_baskets: Option<usize>,
    #[arg(long)]
    pub min_item_users: Option<usize>,
    #[arg(long)]
    pub min_basket_size: Option<usize>,
    /// Repeat the filters until nothing changes.
    #[arg(long)]
    pub until_stable: bool,
    /// Skip all filters.
    #[arg(long)]
    pub no_filter: bool,
}

#[derive(Debug, Clone, Args, Default)]
pub struct CorpusOpts {
    /// corpus.ndjson written by `ingest`.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Vocabulary; defaults to vocab.json next to the corpus.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Default)]
pub struct HpOpts {
    /// Named hyperparameter preset.
    #[arg(long)]
    pub preset: Option<String>,
    /// JSON hyperparameters, e.g. best_hp.json from `tune`.
    #[arg(long)]
    pub hp_file: Option<PathBuf>,
    /// Number of neighbors.
    #[arg(long)]
    pub k: Option<usize>,
    /// Within-group decay.
    #[arg(long)]
    pub r_b: Option<f64>,
    /// Group decay.
    #[arg(long)]
    pub r_g: Option<f64>,
    /// Number of basket groups.
    #[arg(long)]
    pub m: Option<usize>,
    /// Weight of the user's own vector.
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RecommendArgs {
    #[command(flatten)]
    pub corpus: CorpusOpts,
    /// top-personal or tifuknn.
    #[arg(long)]
    pub model: Option<String>,
    #[command(flatten)]
    pub hp: HpOpts,
    /// Length of each recommended list.
    #[arg(long)]
    pub k_items: Option<usize>,
    /// Do not pad short lists with globally popular items.
    #[arg(long)]
    pub no_padding: bool,
    /// Defaults to <out-dir>/predictions.ndjson.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[command(flatten)]
    pub corpus: CorpusOpts,
    /// Metric cutoffs.
    #[arg(long, value_delimiter = ',')]
    pub ks: Option<Vec<usize>>,
    /// Cutoff for MRR.
    #[arg(long)]
    pub mrr_k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FairnessArgs {
    #[command(flatten)]
    pub corpus: CorpusOpts,
    /// per_user.csv written by `evaluate`.
    #[arg(long)]
    pub per_user: PathBuf,
    /// Axes to report (basket_size, popularity, novelty); all by default.
    #[arg(long, value_delimiter = ',')]
    pub axis: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub corpus: CorpusOpts,
    /// Number of random trials.
    #[arg(long, conflicts_with = "grid")]
    pub trials: Option<usize>,
    /// Evaluate every point of the search space instead of sampling.
    #[arg(long)]
    pub grid: bool,
    /// Length of the lists scored during tuning.
    #[arg(long)]
    pub k_items: Option<usize>,
    /// Leave the seconds column empty so logs are byte-reproducible.
    #[arg(long)]
    pub no_timing: bool,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub corpus: CorpusOpts,
    #[command(flatten)]
    pub hp: HpOpts,
    /// Defaults to <out-dir>/vectors.ndjson.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<nbr::Error>() {
            return if e.is_validation() { 2 } else { 1 };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = cli
        .config
        .as_deref()
        .map(RunConfig::load)
        .transpose()
        .and_then(|config| commands::run(cli, config.unwrap_or_default()));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
