use serde::{Deserialize, Serialize};

use super::{non_empty, same_len};
use crate::avuc::{avu, check_t_grid, hard_counts_from};
use crate::{Error, Result};

/// Default number of equal-width bins for ECE and UCE.
pub const DEFAULT_BINS: usize = 15;
/// Clamp applied to the true-class probability before taking its log.
pub const NLL_EPS: f64 = 1e-12;

/// One equal-width bin `((l-1)/L, l/L]`. For reliability bins `score` is the mean
/// confidence and `rate` the accuracy; for uncertainty bins `score` is the mean
/// normalised uncertainty and `rate` the error rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinStat {
    pub index: usize,
    pub count: usize,
    pub score: f64,
    pub rate: f64,
}

fn bin_index(v: f64, bins: usize) -> usize {
    // ((l-1)/L, l/L]; zero lands in the first bin
    ((v * bins as f64).ceil() as usize).clamp(1, bins) - 1
}

/// Bin `scores` in `[0, 1]` and average the matching `hits` in each bin.
pub fn bin_stats(scores: &[f64], hits: &[bool], bins: usize) -> Result<Vec<BinStat>> {
    same_len("bin_stats", scores.len(), hits.len())?;
    non_empty("bin_stats", scores.len())?;
    if bins == 0 {
        return Err(Error::invalid("bin count must be at least 1"));
    }
    if scores.iter().any(|&s| !(-1e-9..=1.0 + 1e-9).contains(&s)) {
        return Err(Error::invalid("binned scores must lie in [0, 1]"));
    }
    let mut sum_score = vec![0.0; bins];
    let mut sum_hit = vec![0.0; bins];
    let mut count = vec![0usize; bins];
    for (&s, &h) in scores.iter().zip(hits) {
        let b = bin_index(s.clamp(0.0, 1.0), bins);
        sum_score[b] += s;
        sum_hit[b] += if h { 1.0 } else { 0.0 };
        count[b] += 1;
    }
    Ok((0..bins)
        .map(|b| {
            let n = count[b].max(1) as f64;
            BinStat {
                index: b,
                count: count[b],
                score: sum_score[b] / n,
                rate: sum_hit[b] / n,
            }
        })
        .collect())
}

fn weighted_gap(stats: &[BinStat]) -> f64 {
    let n: usize = stats.iter().map(|b| b.count).sum();
    stats
        .iter()
        .filter(|b| b.count > 0)
        .map(|b| b.count as f64 / n as f64 * (b.rate - b.score).abs())
        .sum()
}

/// Expected calibration error of confidence against accuracy.
pub fn ece(confidences: &[f64], correct: &[bool], bins: usize) -> Result<f64> {
    Ok(weighted_gap(&bin_stats(confidences, correct, bins)?))
}

/// Expected uncertainty calibration error of normalised uncertainty against error.
pub fn uce(normalized_uncertainty: &[f64], errors: &[bool], bins: usize) -> Result<f64> {
    Ok(weighted_gap(&bin_stats(normalized_uncertainty, errors, bins)?))
}

/// `u / ln K`, mapping entropy into `[0, 1]`.
pub fn normalize_uncertainty(u: &[f64], class_count: usize) -> Vec<f64> {
    let ln_k = (class_count as f64).ln();
    u.iter().map(|x| (x / ln_k).clamp(0.0, 1.0)).collect()
}

fn check_probs_labels(op: &'static str, probs: &crate::diffcore::Tensor, labels: &[usize]) -> Result<()> {
    non_empty(op, labels.len())?;
    if probs.ndim() != 2 {
        return Err(Error::shape(op, "probs must be [batch, K]"));
    }
    same_len(op, probs.rows(), labels.len())?;
    if let Some(&bad) = labels.iter().find(|&&y| y >= probs.cols()) {
        return Err(Error::invalid(format!("{op}: label {bad} out of range")));
    }
    Ok(())
}

/// Mean negative log-probability of the true class.
pub fn nll(probs: &crate::diffcore::Tensor, labels: &[usize]) -> Result<f64> {
    check_probs_labels("nll", probs, labels)?;
    let s: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -probs.get2(i, y).max(NLL_EPS).ln())
        .sum();
    Ok(s / labels.len() as f64)
}

/// Mean over examples of the squared distance between the probability vector and the
/// one-hot label, summed over classes.
pub fn brier(probs: &crate::diffcore::Tensor, labels: &[usize]) -> Result<f64> {
    check_probs_labels("brier", probs, labels)?;
    let s: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            probs
                .row(i)
                .iter()
                .enumerate()
                .map(|(k, &p)| {
                    let t = if k == y { 1.0 } else { 0.0 };
                    (p - t) * (p - t)
                })
                .sum::<f64>()
        })
        .sum();
    Ok(s / labels.len() as f64)
}

/// `p(accurate | certain)` and `p(uncertain | inaccurate)`; `None` when the
/// conditioning group is empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionalProbs {
    pub p_acc_given_certain: Option<f64>,
    pub p_unc_given_inaccurate: Option<f64>,
}

pub fn conditional_probs(correct: &[bool], uncertainty: &[f64], u_th: f64) -> ConditionalProbs {
    let c = hard_counts_from(correct, uncertainty, u_th);
    let ratio = |num: f64, den: f64| (den > 0.0).then(|| num / den);
    ConditionalProbs {
        p_acc_given_certain: ratio(c.n_ac, c.n_ac + c.n_ic),
        p_unc_given_inaccurate: ratio(c.n_iu, c.n_ic + c.n_iu),
    }
}

/// Hard AvU at a threshold.
pub fn avu_at(correct: &[bool], uncertainty: &[f64], u_th: f64) -> Result<f64> {
    same_len("avu", correct.len(), uncertainty.len())?;
    avu(&hard_counts_from(correct, uncertainty, u_th))
}

/// One row of the threshold sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    /// Normalised threshold position in `[0, 1]`.
    pub t: f64,
    pub u_th: f64,
    pub avu: f64,
    pub p_acc_given_certain: Option<f64>,
    pub p_unc_given_inaccurate: Option<f64>,
}

/// Sweep `u_th = u_min + t (u_max - u_min)` over `t_grid`.
pub fn threshold_curve(correct: &[bool], uncertainty: &[f64], t_grid: &[f64]) -> Result<Vec<ThresholdRow>> {
    same_len("threshold_curve", correct.len(), uncertainty.len())?;
    non_empty("threshold_curve", correct.len())?;
    let u_min = uncertainty.iter().copied().fold(f64::INFINITY, f64::min);
    let u_max = uncertainty.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    t_grid
        .iter()
        .map(|&t| {
            let u_th = u_min + t * (u_max - u_min);
            let cp = conditional_probs(correct, uncertainty, u_th);
            Ok(ThresholdRow {
                t,
                u_th,
                avu: avu_at(correct, uncertainty, u_th)?,
                p_acc_given_certain: cp.p_acc_given_certain,
                p_unc_given_inaccurate: cp.p_unc_given_inaccurate,
            })
        })
        .collect()
}

/// Trapezoidal area under hard AvU over the normalised threshold grid.
pub fn avu_auc(correct: &[bool], uncertainty: &[f64], t_grid: &[f64]) -> Result<f64> {
    check_t_grid(t_grid)?;
    let rows = threshold_curve(correct, uncertainty, t_grid)?;
    Ok(rows
        .windows(2)
        .map(|w| 0.5 * (w[1].t - w[0].t) * (w[0].avu + w[1].avu))
        .sum())
}
