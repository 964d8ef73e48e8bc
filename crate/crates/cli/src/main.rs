//! `forgeloc`: synthetic data, training, evaluation and inference for the
//! two-stream forgery localization network.

mod commands;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use failure::Failure;

#[derive(Debug, Parser)]
#[command(name = "forgeloc", version, about = "Pixel-wise image forgery localization")]
struct Cli {
    /// Worker threads for data generation, augmentation and evaluation.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    /// Overwrite existing outputs and accept checkpoints whose config digest differs.
    #[arg(long, global = true)]
    force: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic splice-forgery dataset.
    GenData(GenDataArgs),
    /// Train a model on a dataset directory.
    Train(TrainArgs),
    /// Score a checkpoint against the ground truth of a dataset.
    Eval(EvalArgs),
    /// Predict the probability map and mask of one image.
    Infer(InferArgs),
    /// Colour-code agreement between a ground-truth and a predicted mask.
    Overlay(OverlayArgs),
    /// Finite-difference check of every layer and loss in double precision.
    Gradcheck(GradcheckArgs),
    /// Print the resolved run configuration.
    Config(ConfigArgs),
}

#[derive(Debug, Args)]
struct GenDataArgs {
    /// Run configuration; the `[generator]` section is used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory written by `gen-data`.
    #[arg(long)]
    data: PathBuf,
    /// Receives `checkpoint.fgln`, `loss.jsonl` and `config.toml`.
    #[arg(long)]
    out: PathBuf,
    /// Continue from `<out>/checkpoint.fgln`.
    #[arg(long)]
    resume: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum SplitPart {
    All,
    Train,
    Val,
    Test,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Defaults to `config.toml` next to the checkpoint.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    /// Overrides `eval.threshold`.
    #[arg(long)]
    threshold: Option<f64>,
    /// Part of the dataset to score, split as during training.
    #[arg(long, value_enum, default_value_t = SplitPart::All)]
    split: SplitPart,
    /// Report path; the summary is printed either way.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Defaults to `config.toml` next to the checkpoint.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    image: PathBuf,
    /// Directory receiving `<stem>_prob.png` and `<stem>_mask.png`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Debug, Args)]
struct OverlayArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Run configuration; `train.seed` seeds the probe tensors.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Corrupt the backward pass of one component.
    #[arg(long, hide = true)]
    inject_fault: Option<String>,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), Failure> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.max(1))
        .build_global()
        .map_err(|e| Failure::usage(format!("cannot start {} worker threads: {e}", cli.threads)))?;
    let force = cli.force;
    match cli.command {
        Command::GenData(a) => commands::gen_data(a.config.as_deref(), &a.out, a.count, a.seed, force),
        Command::Train(a) => commands::train(a.config.as_deref(), &a.data, &a.out, a.resume, force),
        Command::Eval(a) => commands::eval(&a, force),
        Command::Infer(a) => commands::infer(&a, force),
        Command::Overlay(a) => commands::overlay(&a.gt, &a.pred, &a.out),
        Command::Gradcheck(a) => commands::gradcheck(a.config.as_deref(), a.inject_fault.as_deref()),
        Command::Config(a) => commands::print_config(a.config.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(failure::USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
