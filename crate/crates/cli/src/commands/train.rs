use std::path::Path;

use avuc_core::bayes::Checkpoint;
use avuc_core::trainer::{self, Method, TrainOutcome};

use super::{ensure_parent, load_data_dir};
use crate::config::ExperimentConfig;
use crate::error::CliError;

pub struct TrainArgs<'a> {
    pub data: &'a Path,
    pub out: &'a Path,
    pub history: &'a Path,
    pub method: Option<Method>,
    pub seed: Option<u64>,
}

pub fn run(config: &ExperimentConfig, args: &TrainArgs<'_>) -> Result<TrainOutcome, CliError> {
    let mut cfg = config.train.clone();
    if let Some(m) = args.method {
        cfg.method = m;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(|e| CliError::Config(format!("train: {e}")))?;
    let (_, ds) = load_data_dir(args.data)?;
    let outcome = trainer::fit(&ds, &cfg)?;
    ensure_parent(args.out)?;
    ensure_parent(args.history)?;
    Checkpoint::from_model(&outcome.model, outcome.u_th, 1.0).save(args.out)?;
    trainer::write_history_csv(&outcome.history, args.history)?;
    if let Some(last) = outcome.history.last() {
        log::info!(
            "{} seed {}: final acc {:.4}, avu {:.4}, u_th {:?}",
            cfg.method,
            cfg.seed,
            last.acc,
            last.avu,
            outcome.u_th
        );
    }
    Ok(outcome)
}
