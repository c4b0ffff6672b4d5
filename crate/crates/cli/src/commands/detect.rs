use std::path::Path;

use avuc_core::metrics::{DetectionReport, HistogramRow};
use serde::{Deserialize, Serialize};

use super::evaluate::predict;
use super::{ensure_parent, load_checkpoint, read_dataset, write_json};
use crate::error::CliError;

pub struct DetectArgs<'a> {
    pub ckpt: &'a Path,
    pub in_data: &'a Path,
    pub shift_data: &'a Path,
    pub mc: usize,
    pub seed: u64,
    pub bins: usize,
    pub out: &'a Path,
    pub hist: &'a Path,
}

/// Contents of `det.json`. The histogram goes to its own CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSummary {
    pub n_in: usize,
    pub n_shift: usize,
    pub mc_samples: usize,
    pub auroc: f64,
    pub aupr_in: f64,
    pub aupr_out: f64,
    pub detection_accuracy: f64,
    pub wasserstein: f64,
    pub mean_entropy_in: f64,
    pub mean_entropy_shift: f64,
}

fn write_histogram(path: &Path, rows: &[HistogramRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(avuc_core::Error::from)?;
    for r in rows {
        w.serialize(r).map_err(avuc_core::Error::from)?;
    }
    w.flush().map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn run(args: &DetectArgs<'_>) -> Result<DetectionSummary, CliError> {
    if args.mc == 0 || args.bins == 0 {
        return Err(CliError::Config("--mc and --bins must be at least 1".into()));
    }
    let ck = load_checkpoint(args.ckpt)?;
    let model = ck.to_model()?;
    let in_data = read_dataset(args.in_data, Some(model.class_count))?;
    let shift_data = read_dataset(args.shift_data, Some(model.class_count))?;
    for d in [&in_data, &shift_data] {
        if d.is_empty() || d.dim() != model.input_dim() {
            return Err(CliError::Config("detection inputs must be non-empty and match the model width".into()));
        }
    }
    let p_in = predict(&model, &in_data, args.mc, args.seed, ck.temperature)?;
    let p_shift = predict(&model, &shift_data, args.mc, args.seed, ck.temperature)?;
    let det = DetectionReport::compute(&p_in.entropy, &p_shift.entropy, args.bins)?;
    let summary = DetectionSummary {
        n_in: in_data.len(),
        n_shift: shift_data.len(),
        mc_samples: args.mc,
        auroc: det.auroc,
        aupr_in: det.aupr_in,
        aupr_out: det.aupr_out,
        detection_accuracy: det.detection_accuracy,
        wasserstein: det.wasserstein,
        mean_entropy_in: mean(&p_in.entropy),
        mean_entropy_shift: mean(&p_shift.entropy),
    };
    ensure_parent(args.out)?;
    ensure_parent(args.hist)?;
    write_json(args.out, &summary)?;
    write_histogram(args.hist, &det.histogram)?;
    log::info!(
        "auroc {:.4}, aupr_in {:.4}, aupr_out {:.4}, wasserstein {:.4}",
        summary.auroc,
        summary.aupr_in,
        summary.aupr_out,
        summary.wasserstein
    );
    Ok(summary)
}
