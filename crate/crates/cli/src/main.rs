//! `leafdet`: batch tooling for the improved YOLOv4 leaf-disease detector.

mod checks;
mod data;
mod evaluate;
mod failure;
mod model;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use leafdet::ExperimentConfig;

use failure::CmdResult;

#[derive(Parser, Debug)]
#[command(name = "leafdet", version, about = "Improved YOLOv4 leaf-disease detector toolkit")]
struct Cli {
    /// Experiment config (TOML); built-in defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed for every random choice a command makes.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads: a positive count or `auto`.
    #[arg(long, global = true, default_value = "auto", value_parser = parse_threads)]
    threads: Threads,
    /// Report format on stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy)]
enum Threads {
    Auto,
    Fixed(usize),
}

fn parse_threads(s: &str) -> Result<Threads, String> {
    if s == "auto" {
        return Ok(Threads::Auto);
    }
    match s.parse::<usize>() {
        Ok(n) if n > 0 => Ok(Threads::Fixed(n)),
        _ => Err(format!("expected a positive integer or `auto`, got `{s}`")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Arch {
    Improved,
    Reference,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Per-node output shapes and parameter counts.
    Summary(model::SummaryArgs),
    /// Score detections against ground truth.
    Eval(evaluate::EvalArgs),
    /// One IoU-family box loss.
    Loss(checks::LossArgs),
    /// Confidence filtering and per-class NMS on a detection file.
    Nms(evaluate::NmsArgs),
    /// Finite-difference checks of activation and box-loss gradients.
    Gradcheck(checks::GradcheckArgs),
    /// Expand a dataset with the augmentation ops.
    Augment(data::AugmentArgs),
    /// Run the network on one image and post-process its heads.
    Decode(model::DecodeArgs),
    /// Write a zero or seeded weight file for the configured network.
    WeightsInit(model::WeightsInitArgs),
}

/// Settings shared by every command.
pub struct Ctx {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub format: Format,
}

fn run(cli: Cli) -> CmdResult {
    if let Threads::Fixed(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let config = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let ctx = Ctx {
        config,
        seed: cli.seed,
        format: cli.format,
    };
    match cli.command {
        Command::Summary(a) => model::summary(&ctx, a),
        Command::Eval(a) => evaluate::eval(&ctx, a),
        Command::Loss(a) => checks::loss(&ctx, a),
        Command::Nms(a) => evaluate::nms(&ctx, a),
        Command::Gradcheck(a) => checks::gradcheck(&ctx, a),
        Command::Augment(a) => data::augment(&ctx, a),
        Command::Decode(a) => model::decode(&ctx, a),
        Command::WeightsInit(a) => model::weights_init(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}
