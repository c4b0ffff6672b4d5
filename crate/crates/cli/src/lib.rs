//! Command-line harness: generate data, train, calibrate, evaluate under shift and
//! score shift detection. Exit codes: 0 success, 2 configuration error, 3 numerical
//! failure, 1 anything else.

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use avuc_core::posthoc::Objective;
use avuc_core::trainer::Method;
use clap::{Args, Parser, Subcommand};

use crate::commands::evaluate::ShiftSelection;
use crate::commands::{load_optional_config, resolve_seed, sibling};
use crate::config::ExperimentConfig;
pub use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "avuc", version, about = "Accuracy-versus-uncertainty calibration experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write train/val/test CSVs, shifted test sets, an OOD set and descriptor.json.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write its checkpoint and per-epoch history.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// History CSV; defaults to `<out stem>.history.csv`.
        #[arg(long)]
        history: Option<PathBuf>,
        /// Override `train.method`.
        #[arg(long)]
        method: Option<Method>,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit a temperature on the validation split (or a logit dump).
    Calibrate {
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Logit dump CSV to fit from instead of running the model.
        #[arg(long, conflicts_with = "data")]
        logits: Option<PathBuf>,
        /// Also write the validation logits used for the fit.
        #[arg(long)]
        dump_logits: Option<PathBuf>,
        #[arg(long)]
        objective: Option<Objective>,
        #[arg(long)]
        out: PathBuf,
        /// Store the fitted temperature in the checkpoint.
        #[arg(long)]
        apply: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate on the test split and on shifted copies of it.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// `all`, `none`, or a comma-separated list of shift kinds.
        #[arg(long, default_value = "all")]
        shifts: ShiftSelection,
        /// Method label for the CSV rows.
        #[arg(long, default_value = "model")]
        method: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Score separation of in-distribution and shifted (or OOD) inputs by predictive entropy.
    Detect {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        in_data: PathBuf,
        #[arg(long, required_unless_present = "ood_data", conflicts_with = "ood_data")]
        shift_data: Option<PathBuf>,
        #[arg(long)]
        ood_data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Histogram CSV; defaults to `<out stem>.hist.csv`.
        #[arg(long)]
        hist: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

/// Flags shared by the inference subcommands.
#[derive(Debug, Args)]
pub struct Common {
    /// Experiment config supplying the seed and section defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Monte Carlo samples per prediction.
    #[arg(long)]
    pub mc: Option<usize>,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            commands::gen_data::run(&cfg, &out)?;
        }
        Command::Train {
            config,
            data,
            out,
            history,
            method,
            seed,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let history = history.unwrap_or_else(|| sibling(&out, "history.csv"));
            commands::train::run(
                &cfg,
                &commands::train::TrainArgs {
                    data: &data,
                    out: &out,
                    history: &history,
                    method,
                    seed,
                },
            )?;
        }
        Command::Calibrate {
            ckpt,
            data,
            logits,
            dump_logits,
            objective,
            out,
            apply,
            common,
        } => {
            let cfg = load_optional_config(common.config.as_deref())?;
            let section = cfg.as_ref().map(|c| c.calibrate).unwrap_or_default();
            commands::calibrate::run(&commands::calibrate::CalibrateArgs {
                ckpt: ckpt.as_deref(),
                data: data.as_deref(),
                logits: logits.as_deref(),
                dump_logits: dump_logits.as_deref(),
                objective: objective.unwrap_or(section.objective),
                mc: common.mc.unwrap_or(section.mc_samples),
                seed: resolve_seed(common.seed, cfg.as_ref()),
                out: &out,
                apply,
            })?;
        }
        Command::Evaluate {
            ckpt,
            data,
            shifts,
            method,
            out,
            common,
        } => {
            let cfg = load_optional_config(common.config.as_deref())?;
            let section = cfg.as_ref().map(|c| c.evaluate).unwrap_or_default();
            commands::evaluate::run(&commands::evaluate::EvaluateArgs {
                ckpt: &ckpt,
                data: &data,
                shifts,
                mc: common.mc.unwrap_or(section.mc_samples),
                seed: resolve_seed(common.seed, cfg.as_ref()),
                method: &method,
                options: section.options(),
                out: &out,
            })?;
        }
        Command::Detect {
            ckpt,
            in_data,
            shift_data,
            ood_data,
            out,
            hist,
            common,
        } => {
            let cfg = load_optional_config(common.config.as_deref())?;
            let section = cfg.as_ref().map(|c| c.evaluate).unwrap_or_default();
            let shift = shift_data
                .or(ood_data)
                .ok_or_else(|| CliError::Config("detect needs --shift-data or --ood-data".into()))?;
            let hist = hist.unwrap_or_else(|| sibling(&out, "hist.csv"));
            commands::detect::run(&commands::detect::DetectArgs {
                ckpt: &ckpt,
                in_data: &in_data,
                shift_data: &shift,
                mc: common.mc.unwrap_or(section.mc_samples),
                seed: resolve_seed(common.seed, cfg.as_ref()),
                bins: section.hist_bins,
                out: &out,
                hist: &hist,
            })?;
        }
    }
    Ok(())
}
