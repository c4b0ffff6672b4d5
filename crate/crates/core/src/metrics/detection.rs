use serde::{Deserialize, Serialize};

use super::{average_ranks, non_empty, same_len};
use crate::{Error, Result};

/// Area under the ROC curve for `positive` scoring above `negative`, via the
/// Mann-Whitney rank statistic with average ranks on ties.
pub fn auroc(positive: &[f64], negative: &[f64]) -> Result<f64> {
    non_empty("auroc positives", positive.len())?;
    non_empty("auroc negatives", negative.len())?;
    let all: Vec<f64> = positive.iter().chain(negative).copied().collect();
    let ranks = average_ranks(&all);
    let (np, nn) = (positive.len() as f64, negative.len() as f64);
    let rank_sum: f64 = ranks[..positive.len()].iter().sum();
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Average precision with `is_positive` marking the positive class; higher scores
/// rank first and tied scores enter together.
pub fn average_precision(scores: &[f64], is_positive: &[bool]) -> Result<f64> {
    same_len("average_precision", scores.len(), is_positive.len())?;
    let total_pos = is_positive.iter().filter(|&&p| p).count();
    if total_pos == 0 {
        return Err(Error::invalid("average precision needs at least one positive"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if is_positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / total_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

/// AUPR with the shifted / out-of-distribution set as the positive class, scored
/// by uncertainty.
pub fn aupr_out(in_scores: &[f64], shift_scores: &[f64]) -> Result<f64> {
    let scores: Vec<f64> = in_scores.iter().chain(shift_scores).copied().collect();
    let labels: Vec<bool> = std::iter::repeat_n(false, in_scores.len())
        .chain(std::iter::repeat_n(true, shift_scores.len()))
        .collect();
    average_precision(&scores, &labels)
}

/// AUPR with in-distribution data as the positive class, scored by negated uncertainty.
pub fn aupr_in(in_scores: &[f64], shift_scores: &[f64]) -> Result<f64> {
    let scores: Vec<f64> = in_scores.iter().chain(shift_scores).map(|x| -x).collect();
    let labels: Vec<bool> = std::iter::repeat_n(true, in_scores.len())
        .chain(std::iter::repeat_n(false, shift_scores.len()))
        .collect();
    average_precision(&scores, &labels)
}

/// `max_thr 0.5 (TPR + TNR)` where a score `>= thr` is called positive.
pub fn detection_accuracy(positive: &[f64], negative: &[f64]) -> Result<f64> {
    non_empty("detection_accuracy positives", positive.len())?;
    non_empty("detection_accuracy negatives", negative.len())?;
    let mut all: Vec<(f64, bool)> = positive
        .iter()
        .map(|&s| (s, true))
        .chain(negative.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (np, nn) = (positive.len() as f64, negative.len() as f64);
    let (mut tp, mut fp) = (0.0, 0.0);
    // threshold above every score: TPR 0, TNR 1
    let mut best: f64 = 0.5;
    let mut i = 0;
    while i < all.len() {
        let s = all[i].0;
        while i < all.len() && all[i].0 == s {
            if all[i].1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        best = best.max(0.5 * (tp / np + 1.0 - fp / nn));
    }
    Ok(best)
}

/// One bin of a pair of density histograms over a shared range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub bin_left: f64,
    pub bin_right: f64,
    pub density_in: f64,
    pub density_shift: f64,
}

/// Density-normalised histograms of two samples on their joint range.
pub fn density_histogram(in_values: &[f64], shift_values: &[f64], bins: usize) -> Result<Vec<HistogramRow>> {
    non_empty("histogram in", in_values.len())?;
    non_empty("histogram shift", shift_values.len())?;
    if bins == 0 {
        return Err(Error::invalid("bin count must be at least 1"));
    }
    let all = in_values.iter().chain(shift_values);
    let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
    let mut hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        hi = lo + 1.0;
    }
    let width = (hi - lo) / bins as f64;
    let count = |vals: &[f64]| -> Vec<f64> {
        let mut c = vec![0.0; bins];
        for &v in vals {
            let b = (((v - lo) / width).floor() as usize).min(bins - 1);
            c[b] += 1.0;
        }
        let scale = 1.0 / (vals.len() as f64 * width);
        c.iter().map(|x| x * scale).collect()
    };
    let (din, dsh) = (count(in_values), count(shift_values));
    Ok((0..bins)
        .map(|b| HistogramRow {
            bin_left: lo + b as f64 * width,
            bin_right: lo + (b + 1) as f64 * width,
            density_in: din[b],
            density_shift: dsh[b],
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_scores() {
        let pos = [0.9, 0.8, 0.95];
        let neg = [0.1, 0.2, 0.3, 0.05];
        assert_eq!(auroc(&pos, &neg).unwrap(), 1.0);
        assert_eq!(auroc(&neg, &pos).unwrap(), 0.0);
        assert_eq!(detection_accuracy(&pos, &neg).unwrap(), 1.0);
        assert_eq!(aupr_out(&neg, &pos).unwrap(), 1.0);
        assert_eq!(aupr_in(&neg, &pos).unwrap(), 1.0);
    }

    #[test]
    fn hand_ranked_with_one_tie() {
        // pos {1, 3, 5, 7}, neg {2, 3, 4, 6}: pairs won = 0 + 1.5 + 3 + 4 = 8.5 of 16
        let pos = [1.0, 3.0, 5.0, 7.0];
        let neg = [2.0, 3.0, 4.0, 6.0];
        assert!((auroc(&pos, &neg).unwrap() - 8.5 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn average_precision_by_hand() {
        // ranked: P N P N -> precision at recall steps 1, 2/3
        let scores = [4.0, 3.0, 2.0, 1.0];
        let labels = [true, false, true, false];
        let ap = average_precision(&scores, &labels).unwrap();
        assert!((ap - (0.5 * 1.0 + 0.5 * 2.0 / 3.0)).abs() < 1e-15);
        assert!(average_precision(&scores, &[false; 4]).is_err());
    }

    #[test]
    fn detection_accuracy_overlap() {
        // threshold 2: TPR 1, TNR 0.5 -> 0.75
        let acc = detection_accuracy(&[2.0, 3.0], &[1.0, 2.5]).unwrap();
        assert!((acc - 0.75).abs() < 1e-15);
        // identical sets never beat chance
        assert_eq!(detection_accuracy(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.5);
    }

    #[test]
    fn histogram_integrates_to_one() {
        let rows = density_histogram(&[0.0, 0.1, 0.5, 1.0], &[0.7, 0.9], 5).unwrap();
        let w = rows[0].bin_right - rows[0].bin_left;
        let a: f64 = rows.iter().map(|r| r.density_in * w).sum();
        let b: f64 = rows.iter().map(|r| r.density_shift * w).sum();
        assert!((a - 1.0).abs() < 1e-12 && (b - 1.0).abs() < 1e-12);
    }
}
