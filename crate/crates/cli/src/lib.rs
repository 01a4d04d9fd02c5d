//! Command-line front end: training, post-training quantization, footprint
//! reports and kernel-level inference over the binary model format.
//!
//! Exit codes: 0 success, 1 other failure, 2 configuration error,
//! 3 corrupt artifact, 4 contract violation.

pub mod commands;
pub mod config;
pub mod error;
pub mod model;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use commands::{InferArgs, Kernel, QuantizeArgs, ReportArgs, TrainArgs};
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "lutq", version, about = "Look-up table weight quantization toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network from a TOML config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output model file.
        #[arg(long)]
        model: PathBuf,
        /// Output CSV trace (epoch,loss,accuracy).
        #[arg(long)]
        trace: PathBuf,
    },
    /// Post-training quantization of every weight layer.
    Quantize {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// free:K, pow2:K, pruned:K:ratio, pruned-pow2:K:ratio, binary,
        /// ternary or uniform:bits.
        #[arg(long)]
        scheme: String,
        /// Keep full-precision accumulators in the output file.
        #[arg(long)]
        keep_accumulators: bool,
    },
    /// Memory and operation footprint of an architecture.
    Report {
        /// TOML architecture file or built-in name (resnet20, resnet18,
        /// resnet34, resnet50).
        #[arg(long)]
        arch: String,
        /// Weight plan applied to every conv/affine layer: float, lutq:K or
        /// fp:bits. Repeatable.
        #[arg(long = "plan")]
        plans: Vec<String>,
        /// Batch normalization arithmetic: none, traditional, multiplierless.
        #[arg(long, default_value = "none")]
        bn: String,
        /// Print a text table instead of JSON.
        #[arg(long)]
        table: bool,
    },
    /// Run a model on a CSV of samples (features then label).
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "naive")]
        kernel: Kernel,
    },
}

/// Executes a parsed command and returns its standard output.
pub fn run(cli: Cli) -> CliResult<String> {
    match cli.command {
        Command::Train { config, model, trace } => commands::cmd_train(&TrainArgs {
            config,
            model,
            trace,
            seed_override: std::env::var(config::SEED_ENV).ok(),
        }),
        Command::Quantize {
            model,
            out,
            scheme,
            keep_accumulators,
        } => commands::cmd_quantize(&QuantizeArgs {
            model,
            out,
            scheme,
            keep_accumulators,
        }),
        Command::Report { arch, plans, bn, table } => commands::cmd_report(&ReportArgs { arch, plans, bn, table }),
        Command::Infer { model, input, kernel } => commands::cmd_infer(&InferArgs { model, input, kernel }),
    }
}
