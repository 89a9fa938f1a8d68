//! Command-line interface: train, eval, synth, split, analyze.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric divergence.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hippd_core::pipeline::{
    analyze_corpus, evaluate, generate_synthetic, load_jsonl_dataset, parse_config_file,
    save_jsonl_dataset, stratified_split, train, Checkpoint, DatasetSplit, GeneratorConfig,
    TrainConfig,
};
use hippd_core::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;

#[derive(Parser)]
#[command(
    name = "hippd",
    about = "Hierarchical personality detection: gated working memory + winner-take-all specialist routing",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Flat key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training seed (overrides the config file).
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset JSONL path.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Precomputed embedding file (HIPPD-EMB v1).
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Checkpoint path (input for eval, output for train).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Output path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Bypass the working memory (route the pooled vector directly).
    #[arg(long)]
    no_memory: bool,
    /// Replace the gated memory cell with a perceptron cell.
    #[arg(long)]
    mlp_memory: bool,
    /// Pin the prediction-error signal to zero.
    #[arg(long)]
    no_pe: bool,
    /// Softmax-weighted specialist mixtures at all times.
    #[arg(long)]
    soft_routing: bool,
    /// Uniform-random specialist selection.
    #[arg(long)]
    random_routing: bool,
    /// Force mean pooling in the encoder.
    #[arg(long)]
    mean_pooling: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write the best-validation checkpoint.
    Train(CommonOpts),
    /// Evaluate a checkpoint and print a metrics report.
    Eval {
        #[command(flatten)]
        common: CommonOpts,
        /// Split file produced by `hippd split`.
        #[arg(long)]
        split: Option<PathBuf>,
        /// Which side of the split to evaluate.
        #[arg(long, default_value = "test", value_parser = ["train", "validation", "test"])]
        subset: String,
    },
    /// Generate a synthetic labeled corpus.
    Synth {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long, default_value_t = 600)]
        users: usize,
        #[arg(long, default_value_t = 8)]
        posts: usize,
        #[arg(long, default_value_t = 12)]
        tokens_per_post: usize,
        #[arg(long, default_value_t = 200)]
        vocab: usize,
        #[arg(long, default_value_t = 3)]
        styles: usize,
        /// Token-level noise probability.
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        /// Positive-class rate for I/E.
        #[arg(long, default_value_t = 0.23)]
        rate_ie: f64,
        #[arg(long, default_value_t = 0.5)]
        rate_sn: f64,
        #[arg(long, default_value_t = 0.5)]
        rate_tf: f64,
        #[arg(long, default_value_t = 0.5)]
        rate_pj: f64,
    },
    /// Stratified 60/20/20 split of a dataset, written as JSON.
    Split(CommonOpts),
    /// Frequent-word, co-occurrence, and mutual-information report.
    Analyze {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long, default_value_t = 10)]
        top_k: usize,
    },
}

enum CliError {
    Usage(String),
    Data(String),
    Divergence(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Divergence(_) => EXIT_DIVERGENCE,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Divergence(m) => m,
        }
    }
}

/// Errors from dataset/checkpoint handling are data errors; failed
/// preconditions are usage errors; divergence keeps its own code.
fn classify(err: Error) -> CliError {
    match err {
        Error::Divergence { .. } => CliError::Divergence(err.to_string()),
        Error::InvalidArgument(_) => CliError::Usage(err.to_string()),
        _ => CliError::Data(err.to_string()),
    }
}

fn build_config(common: &CommonOpts) -> Result<TrainConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => parse_config_file(path).map_err(|e| CliError::Usage(e.to_string()))?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(data) = &common.data {
        cfg.data = Some(data.clone());
    }
    if let Some(emb) = &common.embeddings {
        cfg.embeddings = Some(emb.clone());
    }
    if let Some(ckpt) = &common.checkpoint {
        cfg.checkpoint = Some(ckpt.clone());
    }
    if let Some(out) = &common.out {
        cfg.out = Some(out.clone());
    }
    cfg.no_memory |= common.no_memory;
    cfg.mlp_memory |= common.mlp_memory;
    cfg.no_pe |= common.no_pe;
    cfg.soft_routing |= common.soft_routing;
    cfg.random_routing |= common.random_routing;
    cfg.mean_pooling |= common.mean_pooling;
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn load_data(
    cfg_path: Option<&PathBuf>,
) -> Result<Vec<hippd_core::encoder::UserDocument>, CliError> {
    let path = cfg_path.ok_or_else(|| CliError::Usage("--data <path> is required".into()))?;
    load_jsonl_dataset(path).map_err(classify)
}

fn write_or_print(out: Option<&PathBuf>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::Data(e.to_string())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(common) => {
            let cfg = build_config(&common)?;
            let docs = load_data(cfg.data.as_ref())?;
            let outcome = train(&cfg, &docs).map_err(classify)?;
            let ckpt_path = cfg
                .out
                .clone()
                .or_else(|| cfg.checkpoint.clone())
                .ok_or_else(|| {
                    CliError::Usage("--out <path> is required to store the checkpoint".into())
                })?;
            outcome.checkpoint.save(&ckpt_path).map_err(classify)?;
            let report = serde_json::to_string_pretty(&outcome.report).expect("report serializes");
            println!("{report}");
            eprintln!(
                "checkpoint written to {} (best epoch {}, validation Macro-F1 {:.4})",
                ckpt_path.display(),
                outcome.best_epoch,
                outcome.best_validation_macro_f1
            );
            Ok(())
        }
        Command::Eval {
            common,
            split,
            subset,
        } => {
            let ckpt_path = common
                .checkpoint
                .as_ref()
                .ok_or_else(|| CliError::Usage("--checkpoint <path> is required".into()))?;
            let ckpt = Checkpoint::load(ckpt_path).map_err(classify)?;
            let docs = load_data(common.data.as_ref())?;
            let ids: Option<Vec<String>> = match &split {
                None => None,
                Some(path) => {
                    let text =
                        std::fs::read_to_string(path).map_err(|e| CliError::Data(e.to_string()))?;
                    let parsed: DatasetSplit = serde_json::from_str(&text)
                        .map_err(|e| CliError::Data(format!("split file: {e}")))?;
                    Some(match subset.as_str() {
                        "train" => parsed.train,
                        "validation" => parsed.validation,
                        _ => parsed.test,
                    })
                }
            };
            let report = evaluate(&ckpt, ids.as_deref(), &docs).map_err(classify)?;
            let text = serde_json::to_string_pretty(&report).expect("report serializes");
            write_or_print(common.out.as_ref(), &text)
        }
        Command::Synth {
            common,
            users,
            posts,
            tokens_per_post,
            vocab,
            styles,
            noise,
            rate_ie,
            rate_sn,
            rate_tf,
            rate_pj,
        } => {
            let gen = GeneratorConfig {
                users,
                posts_per_user: posts,
                tokens_per_post,
                vocab,
                styles,
                rates: [rate_ie, rate_sn, rate_tf, rate_pj],
                token_noise: noise,
            };
            let seed = common.seed.unwrap_or(42);
            let docs = generate_synthetic(&gen, seed).map_err(classify)?;
            let out = common
                .out
                .as_ref()
                .ok_or_else(|| CliError::Usage("--out <path> is required".into()))?;
            save_jsonl_dataset(out, &docs).map_err(classify)?;
            eprintln!("wrote {} users to {}", docs.len(), out.display());
            Ok(())
        }
        Command::Split(common) => {
            let docs = load_data(common.data.as_ref())?;
            let seed = common.seed.unwrap_or(1234);
            let split = stratified_split(&docs, seed).map_err(classify)?;
            let text = serde_json::to_string_pretty(&split).expect("split serializes");
            write_or_print(common.out.as_ref(), &text)
        }
        Command::Analyze { common, top_k } => {
            let docs = load_data(common.data.as_ref())?;
            let report = analyze_corpus(&docs, top_k).map_err(classify)?;
            let text = serde_json::to_string_pretty(&report).expect("report serializes");
            write_or_print(common.out.as_ref(), &text)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests are successes; anything else is usage.
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
