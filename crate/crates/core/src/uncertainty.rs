//! Monte Carlo predictive distributions and uncertainty estimates.

use crate::bayes::BnnModel;
use crate::diffcore::{argmax, softmax_rows, Tensor};
use crate::par::{self, Exec};
use crate::seed;
use crate::{Error, Result};

/// Guard inside `log` when computing entropies.
pub const ENTROPY_EPS: f64 = 1e-12;

/// Entropy of one probability row, nats.
pub fn entropy_row(p: &[f64]) -> f64 {
    -p.iter().map(|&x| x * (x + ENTROPY_EPS).ln()).sum::<f64>()
}

fn check_probs(probs: &Tensor, tol: f64) -> Result<()> {
    if probs.ndim() != 2 {
        return Err(Error::shape("probs", format!("expected [batch, K], got {:?}", probs.shape())));
    }
    for r in 0..probs.rows() {
        let row = probs.row(r);
        if row.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::invalid(format!("negative probability in row {r}")));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > tol {
            return Err(Error::invalid(format!("row {r} sums to {s}")));
        }
    }
    Ok(())
}

/// `-sum_k p_k ln(p_k + 1e-12)` per row.
pub fn predictive_entropy(probs: &Tensor) -> Result<Vec<f64>> {
    check_probs(probs, 1e-6)?;
    Ok((0..probs.rows()).map(|r| entropy_row(probs.row(r))).collect())
}

fn mean_of(samples: &[Tensor]) -> Result<Tensor> {
    let first = samples
        .first()
        .ok_or_else(|| Error::invalid("need at least one Monte Carlo sample"))?;
    let mut acc = first.clone();
    for s in &samples[1..] {
        if s.shape() != first.shape() {
            return Err(Error::shape("mc_mean", "samples differ in shape"));
        }
        acc.add_assign(s);
    }
    let t = samples.len() as f64;
    Ok(acc.map(|x| x / t))
}

/// Entropy of the mean minus the mean entropy, clamped at zero.
pub fn mutual_information(per_sample_probs: &[Tensor]) -> Result<Vec<f64>> {
    let mean = mean_of(per_sample_probs)?;
    let total = predictive_entropy(&mean)?;
    let t = per_sample_probs.len() as f64;
    let mut expected = vec![0.0; mean.rows()];
    for s in per_sample_probs {
        for (r, e) in expected.iter_mut().enumerate() {
            *e += entropy_row(s.row(r)) / t;
        }
    }
    Ok(total
        .iter()
        .zip(&expected)
        .map(|(h, e)| (h - e).max(0.0))
        .collect())
}

/// Predictive distribution from `T` stochastic forward passes.
#[derive(Debug, Clone, PartialEq)]
pub struct McPrediction {
    /// `T` tensors of shape `[batch, K]`.
    pub per_sample_probs: Vec<Tensor>,
    pub mean_probs: Tensor,
    pub entropy: Vec<f64>,
    pub mutual_info: Vec<f64>,
    pub confidence: Vec<f64>,
    pub pred_label: Vec<usize>,
}

impl McPrediction {
    /// Softmax each logit sample at `temperature`, then average.
    pub fn from_logits(logit_samples: &[Tensor], temperature: f64) -> Result<Self> {
        if !(temperature > 0.0) {
            return Err(Error::invalid("temperature must be positive"));
        }
        let per_sample_probs = logit_samples
            .iter()
            .map(|l| {
                let k = l.cols();
                let scaled: Vec<f64> = l.data().iter().map(|x| x / temperature).collect();
                Tensor::new(l.shape().to_vec(), softmax_rows(&scaled, k))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_probs(per_sample_probs)
    }

    pub fn from_probs(per_sample_probs: Vec<Tensor>) -> Result<Self> {
        let mean_probs = mean_of(&per_sample_probs)?;
        let entropy = predictive_entropy(&mean_probs)?;
        let mutual_info = mutual_information(&per_sample_probs)?;
        let (pred_label, confidence) = (0..mean_probs.rows())
            .map(|r| {
                let row = mean_probs.row(r);
                let a = argmax(row);
                (a, row[a])
            })
            .unzip();
        Ok(Self {
            per_sample_probs,
            mean_probs,
            entropy,
            mutual_info,
            confidence,
            pred_label,
        })
    }

    pub fn samples(&self) -> usize {
        self.per_sample_probs.len()
    }
}

/// Seed for Monte Carlo pass `t` under `seed_value`.
pub fn sample_seed(seed_value: u64, t: usize) -> u64 {
    seed::derive(seed_value, t as u64)
}

/// Raw logits of `samples` stochastic passes. Point models give identical samples.
pub fn mc_logits(model: &BnnModel, x: &Tensor, samples: usize, seed_value: u64, exec: Exec) -> Result<Vec<Tensor>> {
    if samples == 0 {
        return Err(Error::invalid("Monte Carlo sample count must be at least 1"));
    }
    if !model.is_stochastic() {
        let l = model.logits(x, 0)?;
        return Ok(vec![l; samples]);
    }
    par::try_map_range(exec, samples, |t| model.logits(x, sample_seed(seed_value, t)))
}

/// Monte Carlo predictive distribution with the default execution mode.
pub fn mc_predict(model: &BnnModel, x: &Tensor, samples: usize, seed_value: u64) -> Result<McPrediction> {
    mc_predict_with(model, x, samples, seed_value, 1.0, Exec::Auto)
}

pub fn mc_predict_with(
    model: &BnnModel,
    x: &Tensor,
    samples: usize,
    seed_value: u64,
    temperature: f64,
    exec: Exec,
) -> Result<McPrediction> {
    let logits = mc_logits(model, x, samples, seed_value, exec)?;
    McPrediction::from_logits(&logits, temperature)
}

/// Learned certain/uncertain split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdEstimate {
    pub u_th: f64,
    /// Set when a group was empty and the median of all uncertainties was used.
    pub fallback: bool,
}

/// Midpoint of the mean uncertainty of accurate and of inaccurate predictions.
pub fn learn_threshold(uncertainties: &[f64], correct: &[bool]) -> Result<ThresholdEstimate> {
    let mut acc = ThresholdAccumulator::default();
    if uncertainties.len() != correct.len() {
        return Err(Error::shape("learn_threshold", "uncertainty and correctness lengths differ"));
    }
    for (&u, &c) in uncertainties.iter().zip(correct) {
        acc.push(u, c);
    }
    acc.estimate()
}

/// Running group means for [`learn_threshold`] across many batches.
#[derive(Debug, Clone, Default)]
pub struct ThresholdAccumulator {
    sum_acc: f64,
    n_acc: usize,
    sum_inacc: f64,
    n_inacc: usize,
    all: Vec<f64>,
}

impl ThresholdAccumulator {
    pub fn push(&mut self, u: f64, correct: bool) {
        if correct {
            self.sum_acc += u;
            self.n_acc += 1;
        } else {
            self.sum_inacc += u;
            self.n_inacc += 1;
        }
        self.all.push(u);
    }

    pub fn extend(&mut self, u: &[f64], correct: &[bool]) {
        for (&ui, &ci) in u.iter().zip(correct) {
            self.push(ui, ci);
        }
    }

    pub fn len(&self) -> usize {
        self.all.len()
    }

    pub fn is_empty(&self) -> bool {
        self.all.is_empty()
    }

    pub fn estimate(&self) -> Result<ThresholdEstimate> {
        if self.all.is_empty() {
            return Err(Error::invalid("no uncertainties to learn a threshold from"));
        }
        if self.n_acc > 0 && self.n_inacc > 0 {
            let u_th = 0.5 * (self.sum_acc / self.n_acc as f64 + self.sum_inacc / self.n_inacc as f64);
            return Ok(ThresholdEstimate { u_th, fallback: false });
        }
        log::warn!(
            "threshold: {} accurate / {} inaccurate predictions; using the median uncertainty",
            self.n_acc,
            self.n_inacc
        );
        let mut sorted = self.all.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        Ok(ThresholdEstimate {
            u_th: median,
            fallback: true,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_values() {
        let p = Tensor::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.7, 0.2, 0.1],
        ])
        .unwrap();
        let h = predictive_entropy(&p).unwrap();
        assert!(h[0].abs() < 1e-10);
        let direct = -(0.7f64 * 0.7f64.ln() + 0.2 * 0.2f64.ln() + 0.1 * 0.1f64.ln());
        assert!((h[1] - direct).abs() < 1e-10);
        assert!((h[1] - 0.8018).abs() < 5e-5);
        let u = Tensor::full(&[1, 10], 0.1);
        assert!((predictive_entropy(&u).unwrap()[0] - 10f64.ln()).abs() < 1e-10);
        let neg = Tensor::from_rows(&[[1.2, -0.2]]).unwrap();
        assert!(predictive_entropy(&neg).is_err());
        let unnormalised = Tensor::from_rows(&[[0.5, 0.6]]).unwrap();
        assert!(predictive_entropy(&unnormalised).is_err());
    }

    #[test]
    fn mutual_information_cases() {
        let a = Tensor::from_rows(&[[0.3, 0.7]]).unwrap();
        assert_eq!(mutual_information(&[a.clone(), a.clone()]).unwrap(), vec![0.0]);
        let x = Tensor::from_rows(&[[1.0, 0.0]]).unwrap();
        let y = Tensor::from_rows(&[[0.0, 1.0]]).unwrap();
        let mi = mutual_information(&[x, y]).unwrap();
        assert!((mi[0] - std::f64::consts::LN_2).abs() < 1e-10);
    }

    #[test]
    fn threshold_cases() {
        let t = learn_threshold(&[0.2, 0.8], &[true, false]).unwrap();
        assert!((t.u_th - 0.5).abs() < 1e-15 && !t.fallback);
        let t = learn_threshold(&[0.4; 5], &[true, false, true, true, false]).unwrap();
        assert!((t.u_th - 0.4).abs() < 1e-15);
        let t = learn_threshold(
            &[0.1, 0.2, 0.9, 0.7, 0.8, 0.6],
            &[true, true, false, false, false, false],
        )
        .unwrap();
        assert!((t.u_th - 0.45).abs() < 1e-12);
        let t = learn_threshold(&[0.1, 0.5, 0.3], &[true, true, true]).unwrap();
        assert!(t.fallback);
        assert_eq!(t.u_th, 0.3);
        assert!(learn_threshold(&[], &[]).is_err());
    }

    #[test]
    fn zero_samples_is_an_error() {
        let model = BnnModel::new(2, &[3], 2, crate::bayes::Posterior::MeanField, 0).unwrap();
        assert!(mc_predict(&model, &Tensor::zeros(&[1, 2]), 0, 0).is_err());
        assert!(McPrediction::from_logits(&[Tensor::zeros(&[1, 2])], 0.0).is_err());
    }
}
