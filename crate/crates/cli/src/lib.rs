//! `imtrans` command-line front end.

pub mod commands;
pub mod config;
pub mod error;
pub mod logging;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::AppConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "imtrans",
    version,
    about = "Synthetic corpus, diffusion backfill and in-image translation"
)]
pub struct Cli {
    /// TOML configuration file. Flags override its values, which override the defaults.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads. Outputs are identical for any value.
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,
    /// Global seed for corpus generation, sampling and translation. On `train` it also sets the training seed.
    #[arg(long, global = true, value_name = "SEED")]
    pub seed: Option<u64>,
    /// Log level: error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "info", value_name = "LEVEL")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic parallel image corpus and its manifest.
    GenCorpus(GenCorpusArgs),
    /// Train the backfill diffusion model on a corpus.
    Train(TrainArgs),
    /// Generate target images for corpus pairs from a checkpoint.
    Sample(SampleArgs),
    /// Translate the text of one image end to end.
    Translate(TranslateArgs),
    /// Score generated images (and optional translations) against a corpus.
    Eval(EvalArgs),
    /// Print a summary of a checkpoint, corpus, image or report.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    /// Number of pairs.
    #[arg(long)]
    pub count: Option<u64>,
    /// Language direction, e.g. en-zh.
    #[arg(long)]
    pub langs: Option<String>,
    /// Canvas size as WxH.
    #[arg(long, value_parser = config::parse_canvas)]
    pub canvas: Option<(usize, usize)>,
    /// Font directory (.ttf/.otf).
    #[arg(long)]
    pub fonts: Option<PathBuf>,
    /// Background image directory.
    #[arg(long)]
    pub backgrounds: Option<PathBuf>,
    /// Tab-separated parallel text file.
    #[arg(long)]
    pub texts: Option<PathBuf>,
    /// Output corpus directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Corpus directory containing manifest.jsonl.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Checkpoint output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Stop after this many optimizer steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Number of epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Batch size.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Base learning rate.
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Autoencoder pretraining steps.
    #[arg(long)]
    pub vae_steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Pair to generate; repeatable. Every pair in the manifest when omitted.
    #[arg(long = "pair-id")]
    pub pair_ids: Vec<u64>,
    /// Checkpoint file.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Corpus directory containing manifest.jsonl.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// DDIM sampling steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TranslateArgs {
    /// Input PNG.
    #[arg(long)]
    pub image: PathBuf,
    /// JSON list of known regions ({text_box, recognized_text, confidence}); the edge detector when omitted.
    #[arg(long)]
    pub regions: Option<PathBuf>,
    /// Image id passed to the translator; the file stem when omitted.
    #[arg(long)]
    pub image_id: Option<String>,
    /// Language direction, e.g. en-zh.
    #[arg(long)]
    pub langs: Option<String>,
    /// Disable chain-of-thought prompting.
    #[arg(long)]
    pub no_cot: bool,
    /// Checkpoint file.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// DDIM sampling steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of generated images named {pair_id:06}.png.
    #[arg(long)]
    pub outputs: Option<PathBuf>,
    /// Reference corpus directory containing manifest.jsonl.
    #[arg(long)]
    pub refs: Option<PathBuf>,
    /// Rubric rows as JSON lines (image_id, rater_id and three 1-3 scores).
    #[arg(long)]
    pub rubric: Option<PathBuf>,
    /// File holding an externally computed COMET score.
    #[arg(long)]
    pub comet: Option<PathBuf>,
    /// Column name for this run in the comparison table.
    #[arg(long, default_value = "imtrans")]
    pub system: String,
    /// Directory for the report files; the outputs directory when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// A .ckpt file, corpus directory, manifest, PNG or eval report.
    pub path: PathBuf,
}

/// What a command produced; `path` is printed on standard output.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub path: PathBuf,
    pub summary: Option<String>,
}

/// Resolves the configuration and runs the command on a pool of
/// `workers` threads.
pub fn run(cli: Cli) -> Result<Outcome, CliError> {
    let mut cfg = AppConfig::load(cli.config.as_deref())?;
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
        if matches!(cli.command, Command::Train(_)) {
            cfg.train.seed = s;
        }
    }
    if cfg.workers == 0 {
        return Err(error::config("workers must be >= 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(error::runtime)?;
    pool.install(|| match cli.command {
        Command::GenCorpus(a) => commands::gen_corpus(cfg, a),
        Command::Train(a) => commands::train(cfg, a),
        Command::Sample(a) => commands::sample(cfg, a),
        Command::Translate(a) => commands::translate(cfg, a),
        Command::Eval(a) => commands::eval(cfg, a),
        Command::Inspect(a) => commands::inspect(cfg, a),
    })
}

/// Parses `args` (program name first) and runs them.
pub fn run_args<I, T>(args: I) -> Result<Outcome, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| error::config(e.to_string()))?;
    run(cli)
}
