//! The `microvoc` command-line tool: training from a run config, evaluation,
//! top-5 prediction, gradient checking and architecture inspection.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric-check failure.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::CliError;

#[derive(Debug, Parser)]
#[command(name = "microvoc", version, about = "Train and inspect small image-classification CNNs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Ingest a manifest and train per a key=value run config.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Top-1 accuracy of a checkpoint on every record of a manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Image root; defaults to the manifest's directory.
        #[arg(long)]
        root: Option<PathBuf>,
    },
    /// Print the five most probable classes for one image.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        /// One of conv, relu, maxpool, lrn, dropout, fc, softmax, network.
        #[arg(long)]
        layer: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print per-layer output shapes and parameter counts.
    Inspect {
        #[arg(long)]
        arch: String,
        /// Input shape as CxHxW.
        #[arg(long, default_value = "3x128x128")]
        input: String,
    },
}

fn dispatch(command: Command, out: &mut impl Write) -> Result<(), CliError> {
    match command {
        Command::Train { config } => commands::train(&config, out),
        Command::Eval { checkpoint, manifest, root } => commands::eval(&checkpoint, &manifest, root.as_deref(), out),
        Command::Predict { checkpoint, image } => commands::predict(&checkpoint, &image, out),
        Command::Gradcheck { layer, seed } => commands::gradcheck(layer.as_deref(), seed, out),
        Command::Inspect { arch, input } => commands::inspect(&arch, commands::parse_input_shape(&input)?, out),
    }
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let stdout = std::io::stdout();
    match dispatch(cli.command, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
