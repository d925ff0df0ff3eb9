/// Prints a line to stdout. A closed pipe, as with `| head`, is not an
/// error.
macro_rules! emit {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

mod commands;
mod error;
mod inspect;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use sbvqa::corruption::{NoiseLevel, Normalization};
use sbvqa::dataset::AnswerSource;
use sbvqa::harness::RunConfig;
use sbvqa::models::ModelKind;

use error::{CliError, Result};

/// Speech-based visual question answering lab.
#[derive(Debug, Parser)]
#[command(name = "sbvqa", version)]
struct Cli {
    /// Cap on worker threads for corruption and evaluation.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Log verbosity on stderr: error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic corpus: manifest, audio, image features and a
    /// noise bank.
    GenData(GenDataArgs),
    /// Mix every question's audio with a noise clip at the given levels.
    Corrupt(CorruptArgs),
    /// Train a model and write checkpoints into the output directory.
    Train(RunArgs),
    /// Evaluate a trained model at one noise level.
    Evaluate(EvaluateArgs),
    /// Evaluate a trained model at every configured noise level.
    Sweep(RunArgs),
    /// Corpus word error rate of hypotheses against references.
    Wer(WerArgs),
    /// Validation questions whose text never appears in training.
    ZsSplit(ZsSplitArgs),
    /// Summarize a checkpoint, WAV file, feature store or manifest.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
struct GenDataArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Training questions.
    #[arg(long, default_value_t = 32)]
    train: usize,
    /// Validation questions.
    #[arg(long, default_value_t = 0)]
    val: usize,
    /// Test-dev questions.
    #[arg(long, default_value_t = 0)]
    test_dev: usize,
    /// Image feature dimension.
    #[arg(long, default_value_t = 4096)]
    image_dim: usize,
    /// Where the answer lives: `image` (planted feature block) or `text`
    /// (last spoken word).
    #[arg(long, default_value = "image")]
    answer_source: AnswerSource,
    /// Noise clips per category.
    #[arg(long, default_value_t = 2)]
    noise_clips: usize,
    /// Length of each noise clip in seconds.
    #[arg(long, default_value_t = 1.0)]
    noise_secs: f64,
    /// Generator seed; falls back to SBVQA_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct CorruptArgs {
    /// Question manifest (JSON lines).
    #[arg(long)]
    manifest: PathBuf,
    /// Directory of noise WAVs, one subdirectory per category.
    #[arg(long)]
    noise_bank: PathBuf,
    /// Output directory for `<question_id>_<pct>.wav` and `plan.jsonl`.
    #[arg(long)]
    out: PathBuf,
    /// Noise level as a fraction (0.3) or percent (30%); repeat or
    /// separate with commas. Defaults to 10% through 50%.
    #[arg(long = "level", value_delimiter = ',')]
    levels: Vec<NoiseLevel>,
    /// Base directory for relative audio paths; defaults to the
    /// manifest's directory.
    #[arg(long)]
    audio_dir: Option<PathBuf>,
    /// Loudness normalization before mixing: peak or rms.
    #[arg(long, default_value = "peak")]
    normalization: Normalization,
    /// Noise assignment seed; falls back to SBVQA_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// `key = value` config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model family: speech or text.
    #[arg(long)]
    model: Option<ModelKind>,
    /// Train the image-free variant.
    #[arg(long)]
    blind: bool,
    /// Question manifest (JSON lines).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Image feature store.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Base directory for relative audio paths.
    #[arg(long)]
    audio_dir: Option<PathBuf>,
    /// Noise bank used to create missing corrupted audio in a sweep.
    #[arg(long)]
    noise_bank: Option<PathBuf>,
    /// Transcripts (JSON lines) for the text model at noisy levels.
    #[arg(long)]
    transcripts: Option<PathBuf>,
    /// Directory of corrupted audio; defaults to `<out>/corrupted`.
    #[arg(long)]
    corrupted_dir: Option<PathBuf>,
    /// Output directory for checkpoints and reports.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Mini-batch size.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Noise levels for a sweep, comma separated (0.1 or 10%).
    #[arg(long)]
    levels: Option<String>,
    /// Training and corruption seed; falls back to the config, then
    /// SBVQA_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    /// Any config key, as KEY=VALUE; repeatable. Applied after the other
    /// flags.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Noise level as a fraction (0.3) or percent (30%).
    #[arg(long, default_value = "0")]
    level: NoiseLevel,
}

#[derive(Debug, Args)]
struct WerArgs {
    /// Reference transcripts: JSON lines with `question_id` and `text`.
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Hypothesis transcripts in the same format, joined on
    /// `question_id`.
    #[arg(long)]
    hyp: PathBuf,
    /// Only score hypotheses recorded at this noise level.
    #[arg(long)]
    level: Option<NoiseLevel>,
}

#[derive(Debug, Args)]
struct ZsSplitArgs {
    /// Question manifest (JSON lines).
    #[arg(long)]
    manifest: PathBuf,
    /// Output JSON file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct InspectArgs {
    /// Checkpoint, WAV, feature store or manifest.
    file: PathBuf,
}

/// Explicit seed, else SBVQA_SEED, else 0.
fn resolve_seed(flag: Option<u64>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("SBVQA_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Invalid(format!("SBVQA_SEED must be a non-negative integer, got `{v}`"))),
        Err(_) => Ok(0),
    }
}

fn init_pool(workers: Option<usize>) -> Result<()> {
    let Some(n) = workers else { return Ok(()) };
    if n == 0 {
        return Err(CliError::Invalid("--workers must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Runtime(e.to_string()))
}

fn run(cli: Cli) -> Result<()> {
    let workers = cli.workers;
    let configured = |a: &RunArgs| -> Result<RunConfig> {
        let cfg = commands::run_config(a)?;
        init_pool(workers.or(cfg.workers))?;
        Ok(cfg)
    };
    match cli.command {
        Command::Train(a) => commands::train(&configured(&a)?),
        Command::Evaluate(a) => commands::evaluate(&configured(&a.run)?, a.level),
        Command::Sweep(a) => commands::sweep(&configured(&a)?),
        Command::GenData(a) => init_pool(workers).and_then(|_| commands::gen_data(a)),
        Command::Corrupt(a) => init_pool(workers).and_then(|_| commands::corrupt(a)),
        Command::Wer(a) => commands::wer(a),
        Command::ZsSplit(a) => commands::zs_split(a),
        Command::Inspect(a) => inspect::inspect(&a.file),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    env_logger::Builder::new()
        .parse_filters(&cli.log)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
