use serde::{Deserialize, Serialize};

use super::{
    aupr_in, aupr_out, auroc, avu_at, avu_auc, bin_stats, brier, density_histogram, detection_accuracy, ece,
    nll, normalize_uncertainty, threshold_curve, uce, wasserstein1, BinStat, HistogramRow, ThresholdRow,
    DEFAULT_BINS,
};
use crate::avuc::{default_t_grid, DEFAULT_GRID_POINTS};
use crate::uncertainty::{learn_threshold, McPrediction};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    /// Equal-width bins for ECE and UCE.
    pub bins: usize,
    /// Points in the normalised threshold grid.
    pub t_grid_points: usize,
    /// Bins of the entropy histograms written for shift detection.
    pub hist_bins: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            bins: DEFAULT_BINS,
            t_grid_points: DEFAULT_GRID_POINTS,
            hist_bins: 30,
        }
    }
}

/// In-distribution versus shifted separation, scored by predictive entropy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub auroc: f64,
    pub aupr_in: f64,
    pub aupr_out: f64,
    pub detection_accuracy: f64,
    pub wasserstein: f64,
    pub histogram: Vec<HistogramRow>,
}

impl DetectionReport {
    pub fn compute(in_uncertainty: &[f64], shift_uncertainty: &[f64], hist_bins: usize) -> Result<Self> {
        Ok(Self {
            auroc: auroc(shift_uncertainty, in_uncertainty)?,
            aupr_in: aupr_in(in_uncertainty, shift_uncertainty)?,
            aupr_out: aupr_out(in_uncertainty, shift_uncertainty)?,
            detection_accuracy: detection_accuracy(shift_uncertainty, in_uncertainty)?,
            wasserstein: wasserstein1(in_uncertainty, shift_uncertainty)?,
            histogram: density_histogram(in_uncertainty, shift_uncertainty, hist_bins)?,
        })
    }
}

/// Every metric for one (model, dataset) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub examples: usize,
    pub class_count: usize,
    pub mc_samples: usize,
    pub accuracy: f64,
    pub ece: f64,
    pub uce: f64,
    pub nll: f64,
    pub brier: f64,
    /// Threshold used for `avu`; the model's stored one when available.
    pub u_th: f64,
    /// True when `u_th` was learned from the evaluated data itself.
    pub u_th_from_data: bool,
    pub avu: f64,
    pub avu_auc: f64,
    pub mean_entropy: f64,
    pub mean_mutual_info: f64,
    pub thresholds: Vec<ThresholdRow>,
    pub reliability: Vec<BinStat>,
    pub uncertainty_bins: Vec<BinStat>,
    pub detection: Option<DetectionReport>,
}

/// Compute the report for a Monte Carlo prediction against `labels`.
pub fn evaluate(pred: &McPrediction, labels: &[usize], u_th: Option<f64>, options: &EvalOptions) -> Result<EvalReport> {
    let n = labels.len();
    if n == 0 || pred.pred_label.len() != n {
        return Err(Error::shape("evaluate", format!("{} predictions, {n} labels", pred.pred_label.len())));
    }
    let class_count = pred.mean_probs.cols();
    let correct: Vec<bool> = pred.pred_label.iter().zip(labels).map(|(a, b)| a == b).collect();
    let errors: Vec<bool> = correct.iter().map(|c| !c).collect();
    let u_norm = normalize_uncertainty(&pred.entropy, class_count);
    let (u_th, from_data) = match u_th {
        Some(t) => (t, false),
        None => (learn_threshold(&pred.entropy, &correct)?.u_th, true),
    };
    let grid = default_t_grid(options.t_grid_points);
    Ok(EvalReport {
        examples: n,
        class_count,
        mc_samples: pred.samples(),
        accuracy: correct.iter().filter(|&&c| c).count() as f64 / n as f64,
        ece: ece(&pred.confidence, &correct, options.bins)?,
        uce: uce(&u_norm, &errors, options.bins)?,
        nll: nll(&pred.mean_probs, labels)?,
        brier: brier(&pred.mean_probs, labels)?,
        u_th,
        u_th_from_data: from_data,
        avu: avu_at(&correct, &pred.entropy, u_th)?,
        avu_auc: avu_auc(&correct, &pred.entropy, &grid)?,
        mean_entropy: pred.entropy.iter().sum::<f64>() / n as f64,
        mean_mutual_info: pred.mutual_info.iter().sum::<f64>() / n as f64,
        thresholds: threshold_curve(&correct, &pred.entropy, &grid)?,
        reliability: bin_stats(&pred.confidence, &correct, options.bins)?,
        uncertainty_bins: bin_stats(&u_norm, &errors, options.bins)?,
        detection: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tensor;

    #[test]
    fn report_schema_is_populated() {
        let logits = Tensor::from_rows(&[[2.0, 0.0], [0.0, 1.0], [0.5, 0.4], [3.0, -1.0]]).unwrap();
        let pred = McPrediction::from_logits(&[logits], 1.0).unwrap();
        let r = evaluate(&pred, &[0, 1, 1, 0], None, &EvalOptions::default()).unwrap();
        assert_eq!(r.examples, 4);
        assert_eq!(r.thresholds.len(), DEFAULT_GRID_POINTS);
        assert!(r.u_th_from_data);
        assert!((0.0..=1.0).contains(&r.ece) && (0.0..=1.0).contains(&r.uce));
        assert!(r.brier >= 0.0 && r.brier <= 2.0 && r.nll >= 0.0);
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"avu_auc\""));
        assert!(evaluate(&pred, &[0, 1], None, &EvalOptions::default()).is_err());
    }

    #[test]
    fn self_detection_is_chance() {
        let u = [0.1, 0.5, 0.3, 0.7];
        let d = DetectionReport::compute(&u, &u, 4).unwrap();
        assert_eq!(d.auroc, 0.5);
        assert_eq!(d.wasserstein, 0.0);
    }
}
