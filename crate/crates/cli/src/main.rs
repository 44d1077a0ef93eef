//! `msseg`: phantom generation, preprocessing, training, evaluation,
//! prediction, ablation and parameter counting.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "msseg", version, about = "Lesion segmentation with an attention FC-DenseNet and ConvLSTM bottleneck")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic phantom volume/mask pairs and a manifest.
    Phantom(commands::PhantomArgs),
    /// Remove black slices, crop and normalize every volume in a manifest.
    Preprocess(commands::PreprocessArgs),
    /// Train one fold and write the best checkpoint plus an epoch CSV.
    Train(commands::TrainArgs),
    /// Score a checkpoint on every volume of a manifest.
    Eval(commands::EvalArgs),
    /// Segment one volume and write per-slice overlays.
    Predict(commands::PredictArgs),
    /// Train the four ablation variants on selected folds.
    Ablate(commands::AblateArgs),
    /// Print the trainable parameter count and its breakdown.
    ParamCount {
        /// Config file with `model.*` / `train.*` keys.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Search width hyperparameters for a target parameter count.
    Calibrate(commands::CalibrateArgs),
}

/// Exit status: 0 ok, 1 failure, 2 usage or configuration error.
pub enum Outcome {
    Ok,
    ItemFailures(usize),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = commands::init_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::Phantom(a) => commands::phantom(a),
        Command::Preprocess(a) => commands::preprocess(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Predict(a) => commands::predict(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::ParamCount { config } => commands::param_count(config),
        Command::Calibrate(a) => commands::calibrate(a),
    };
    match result {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::ItemFailures(n)) => {
            eprintln!("{n} item(s) failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e.chain().any(|c| {
                c.is::<commands::Usage>()
                    || matches!(
                        c.downcast_ref::<msseg_core::Error>(),
                        Some(msseg_core::Error::Config(_) | msseg_core::Error::ConfigKey { .. })
                    )
            });
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}
