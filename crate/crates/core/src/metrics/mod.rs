//! Evaluation metrics: calibration errors, proper scoring rules, AvU curves,
//! shift-detection scores and distribution distances.

mod calibration;
mod detection;
mod distance;
mod report;

pub use calibration::{
    avu_at, avu_auc, bin_stats, brier, conditional_probs, ece, nll, normalize_uncertainty, threshold_curve,
    uce, BinStat, ConditionalProbs, ThresholdRow, DEFAULT_BINS, NLL_EPS,
};
pub use detection::{
    aupr_in, aupr_out, auroc, average_precision, detection_accuracy, density_histogram, HistogramRow,
};
pub use distance::{spearman_rho, wasserstein1};
pub use report::{evaluate, DetectionReport, EvalOptions, EvalReport};

use crate::{Error, Result};

/// Ranks starting at 1, with tied values sharing the average of their ranks.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j hold ranks i+1..=j+1
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub(crate) fn non_empty(op: &str, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid(format!("{op}: empty input")));
    }
    Ok(())
}

pub(crate) fn same_len(op: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, format!("lengths {a} and {b} differ")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_with_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
        assert_eq!(average_ranks(&[1.0, 1.0, 1.0]), vec![2.0, 2.0, 2.0]);
    }
}
