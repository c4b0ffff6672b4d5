use std::path::Path;

use avuc_core::par::Exec;
use avuc_core::posthoc::{self, LogitDump, Objective, TemperatureFit};
use avuc_core::seed::{self, stream};
use avuc_core::shiftlab::Split;
use avuc_core::uncertainty;

use super::{ensure_parent, load_checkpoint, load_data_dir, write_json};
use crate::error::CliError;

pub struct CalibrateArgs<'a> {
    pub ckpt: Option<&'a Path>,
    pub data: Option<&'a Path>,
    /// Fit from an existing logit dump instead of running the model.
    pub logits: Option<&'a Path>,
    pub dump_logits: Option<&'a Path>,
    pub objective: Objective,
    pub mc: usize,
    pub seed: u64,
    pub out: &'a Path,
    pub apply: bool,
}

/// Validation-split logits of a checkpoint; every Monte Carlo sample uses a fixed seed.
pub fn validation_dump(ckpt: &Path, data: &Path, mc: usize, seed_value: u64) -> Result<LogitDump, CliError> {
    let model = load_checkpoint(ckpt)?.to_model()?;
    let (_, ds) = load_data_dir(data)?;
    let val = ds.subset(Split::Val);
    if val.is_empty() {
        return Err(CliError::Config("validation split is empty".into()));
    }
    let samples = uncertainty::mc_logits(
        &model,
        &val.features,
        mc,
        seed::derive(seed_value, stream::CALIBRATE),
        Exec::Auto,
    )?;
    Ok(LogitDump::new(samples, val.class_labels()?)?)
}

pub fn run(args: &CalibrateArgs<'_>) -> Result<TemperatureFit, CliError> {
    if args.mc == 0 {
        return Err(CliError::Config("--mc must be at least 1".into()));
    }
    let dump = match (args.logits, args.ckpt, args.data) {
        (Some(path), _, _) => LogitDump::read_csv(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?,
        (None, Some(ckpt), Some(data)) => validation_dump(ckpt, data, args.mc, args.seed)?,
        _ => return Err(CliError::Config("calibrate needs --logits or both --ckpt and --data".into())),
    };
    if let Some(path) = args.dump_logits {
        ensure_parent(path)?;
        dump.write_csv(path)?;
    }
    let fit = posthoc::fit_temperature(&dump, args.objective, None)?;
    ensure_parent(args.out)?;
    write_json(args.out, &fit)?;
    log::info!(
        "{}: T = {:.4} ({} -> {} in {} iterations{})",
        args.objective.as_str(),
        fit.temperature,
        fit.initial_value,
        fit.objective_value,
        fit.iterations,
        if fit.fallback { ", fell back to T = 1" } else { "" }
    );
    if args.apply {
        let path = args
            .ckpt
            .ok_or_else(|| CliError::Config("--apply needs --ckpt".into()))?;
        let mut ck = load_checkpoint(path)?;
        ck.temperature = fit.temperature;
        ck.save(path)?;
    }
    Ok(fit)
}
