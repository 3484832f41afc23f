//! Command-line interface for the syncwatch anomaly detector.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error.

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use syncwatch::features::FeatureKind;
use syncwatch::pipeline::{
    run_baseline_nb, run_eval, run_gen, run_score, run_train, GenArgs, TrainArgs,
};
use syncwatch::synth::{FakeMode, GenConfig};
use syncwatch::training::LossKind;

#[derive(Parser)]
#[command(
    name = "syncwatch",
    about = "Detects manipulated audio-visual sequences by scoring synchronization features \
             under an autoregressive model trained on real data only",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset of affinity feature files plus a manifest
    Gen(GenCmd),
    /// Train a model on the real records of a manifest
    Train(TrainCmd),
    /// Score one feature file with a trained model
    Score(ScoreCmd),
    /// Score a manifest and write AP/AUC metrics
    Eval(EvalCmd),
    /// Naive Bayes baseline over argmax delays
    BaselineNb(BaselineCmd),
}

#[derive(Args)]
struct GenCmd {
    /// Output directory for feature files and manifest.json
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, value_name = "R")]
    num_real: usize,
    #[arg(long, value_name = "F")]
    num_fake: usize,
    /// Fake mode: drift, flat, or interval
    #[arg(long, value_name = "MODE", default_value = "drift")]
    mode: String,
    #[arg(long, value_name = "S")]
    seed: u64,
    /// Frames per sequence
    #[arg(long, value_name = "T")]
    frames: Option<usize>,
    /// Maximum delay offset
    #[arg(long, value_name = "TAU")]
    tau: Option<usize>,
    /// Also write synthetic encoder activations next to each feature file
    #[arg(long)]
    activations: bool,
}

#[derive(Args)]
struct TrainCmd {
    #[arg(long, value_name = "M")]
    manifest: PathBuf,
    /// Feature set: discrete-delay, distribution, activation-pca, concat-av, raster
    #[arg(long, value_name = "FS")]
    feature_set: String,
    /// Loss: ce_discrete, soft_ce, bce, mse, raster_ce
    #[arg(long, value_name = "L")]
    loss: String,
    #[arg(long, value_name = "K")]
    steps: usize,
    #[arg(long, value_name = "S")]
    seed: u64,
    /// Checkpoint output path
    #[arg(long, value_name = "CKPT")]
    out: PathBuf,
    /// Silence the warning about skipped fake records
    #[arg(long)]
    ignore_fakes: bool,
    /// Warmup steps of the learning-rate schedule
    #[arg(long, default_value_t = 500)]
    warmup: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Training/scoring window in frames (default 50; 8 for raster)
    #[arg(long, value_name = "N")]
    window: Option<usize>,
    /// Loss-trace CSV path (default: checkpoint path with .trace.csv)
    #[arg(long, value_name = "CSV")]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreCmd {
    #[arg(long, value_name = "CKPT")]
    model: PathBuf,
    #[arg(long, value_name = "FILE")]
    input: PathBuf,
    /// Write per-frame scores and cumulative sums as CSV
    #[arg(long, value_name = "OUT.csv")]
    per_frame: Option<PathBuf>,
}

#[derive(Args)]
struct EvalCmd {
    #[arg(long, value_name = "CKPT")]
    model: PathBuf,
    #[arg(long, value_name = "M")]
    manifest: PathBuf,
    #[arg(long, value_name = "metrics.json")]
    out: PathBuf,
    /// Also report top-K localization accuracy on interval-annotated fakes
    #[arg(long, value_name = "K")]
    localize: Option<usize>,
}

#[derive(Args)]
struct BaselineCmd {
    #[arg(long, value_name = "M")]
    manifest: PathBuf,
    #[arg(long, value_name = "metrics.json")]
    out: PathBuf,
}

fn run(cli: Cli) -> syncwatch::Result<()> {
    match cli.command {
        Command::Gen(cmd) => {
            let defaults = GenConfig::default();
            let mut args = GenArgs::new(
                cmd.out,
                cmd.num_real,
                cmd.num_fake,
                cmd.mode.parse::<FakeMode>()?,
                cmd.seed,
            );
            args.frames = cmd.frames.unwrap_or(defaults.frames);
            args.tau = cmd.tau.unwrap_or(defaults.tau);
            args.activations = cmd.activations;
            run_gen(&args)
        }
        Command::Train(cmd) => {
            let mut args = TrainArgs::new(
                cmd.manifest,
                cmd.feature_set.parse::<FeatureKind>()?,
                cmd.loss.parse::<LossKind>()?,
                cmd.steps,
                cmd.seed,
                cmd.out,
            );
            args.ignore_fakes = cmd.ignore_fakes;
            args.warmup = cmd.warmup;
            args.batch_size = cmd.batch_size;
            args.lr = cmd.lr;
            args.window_frames = cmd.window;
            args.trace_out = cmd.trace;
            run_train(&args)
        }
        Command::Score(cmd) => {
            let record = run_score(&cmd.model, &cmd.input, cmd.per_frame.as_deref())?;
            println!("{record}");
            Ok(())
        }
        Command::Eval(cmd) => {
            run_eval(&cmd.model, &cmd.manifest, &cmd.out, cmd.localize).map(|_| ())
        }
        Command::BaselineNb(cmd) => run_baseline_nb(&cmd.manifest, &cmd.out).map(|_| ()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
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
