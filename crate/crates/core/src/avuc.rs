//! Accuracy versus uncertainty.
//!
//! Predictions fall into four groups: accurate-certain (AC), accurate-uncertain
//! (AU), inaccurate-certain (IC) and inaccurate-uncertain (IU), split by an
//! uncertainty threshold `u_th` (certain means `u <= u_th`). AvU is the fraction in
//! AC or IU. The AvUC loss replaces the hard counts with soft masses
//!
//! ```text
//! n_AC = sum p (1 - tanh u)     n_AU = sum p tanh u
//! n_IC = sum (1 - p)(1 - tanh u) n_IU = sum (1 - p) tanh u
//! ```
//!
//! where `p` is the predicted-class probability, and takes
//! `log(1 + (n_AU + n_IC) / (n_AC + n_IU))`. Group membership is decided on plain
//! values; gradients flow only through the soft weights.

use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, Tensor, Var};
use crate::uncertainty::{entropy_row, ENTROPY_EPS};
use crate::{Error, Result};

/// Guard added to the AvUC denominator.
pub const AVUC_EPS: f64 = 1e-10;
/// Relative weight of the AvUC term in the loss-calibrated ELBO.
pub const DEFAULT_BETA: f64 = 3.0;
/// Points in the default AU-AvUC threshold grid.
pub const DEFAULT_GRID_POINTS: usize = 21;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AvuCounts {
    pub n_ac: f64,
    pub n_au: f64,
    pub n_ic: f64,
    pub n_iu: f64,
    pub u_th: f64,
}

impl AvuCounts {
    pub fn total(&self) -> f64 {
        self.n_ac + self.n_au + self.n_ic + self.n_iu
    }
}

/// `(n_AC + n_IU) / total`.
pub fn avu(counts: &AvuCounts) -> Result<f64> {
    let total = counts.total();
    if !(total > 0.0) {
        return Err(Error::invalid("AvU of an empty batch"));
    }
    Ok((counts.n_ac + counts.n_iu) / total)
}

/// Averaged predictive distribution with its derived per-example quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveBatch {
    /// `[batch, K]`, rows sum to one.
    pub probs: Tensor,
    pub pred_label: Vec<usize>,
    pub true_label: Vec<usize>,
    /// Predicted-class probability.
    pub confidence: Vec<f64>,
    /// Predictive entropy in nats.
    pub uncertainty: Vec<f64>,
}

impl PredictiveBatch {
    pub fn from_probs(probs: Tensor, labels: &[usize]) -> Result<Self> {
        if probs.ndim() != 2 || probs.rows() != labels.len() {
            return Err(Error::shape(
                "predictive_batch",
                format!("probs {:?} with {} labels", probs.shape(), labels.len()),
            ));
        }
        let k = probs.cols();
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::invalid(format!("label {bad} out of range for {k} classes")));
        }
        let mut pred_label = Vec::with_capacity(labels.len());
        let mut confidence = Vec::with_capacity(labels.len());
        let mut uncertainty = Vec::with_capacity(labels.len());
        for r in 0..probs.rows() {
            let row = probs.row(r);
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 || row.iter().any(|&p| !(p >= 0.0)) {
                return Err(Error::invalid(format!("row {r} is not a probability vector")));
            }
            let arg = crate::diffcore::argmax(row);
            pred_label.push(arg);
            confidence.push(row[arg]);
            uncertainty.push(entropy_row(row));
        }
        Ok(Self {
            probs,
            pred_label,
            true_label: labels.to_vec(),
            confidence,
            uncertainty,
        })
    }

    pub fn len(&self) -> usize {
        self.true_label.len()
    }

    pub fn is_empty(&self) -> bool {
        self.true_label.is_empty()
    }

    pub fn correct(&self) -> Vec<bool> {
        self.pred_label
            .iter()
            .zip(&self.true_label)
            .map(|(a, b)| a == b)
            .collect()
    }

    pub fn accuracy(&self) -> f64 {
        let c = self.correct();
        c.iter().filter(|&&x| x).count() as f64 / c.len().max(1) as f64
    }
}

/// Hard indicator counts at `u_th`.
pub fn hard_counts(batch: &PredictiveBatch, u_th: f64) -> AvuCounts {
    hard_counts_from(&batch.correct(), &batch.uncertainty, u_th)
}

pub fn hard_counts_from(correct: &[bool], uncertainty: &[f64], u_th: f64) -> AvuCounts {
    let mut c = AvuCounts {
        n_ac: 0.0,
        n_au: 0.0,
        n_ic: 0.0,
        n_iu: 0.0,
        u_th,
    };
    for (&ok, &u) in correct.iter().zip(uncertainty) {
        let certain = u <= u_th;
        match (ok, certain) {
            (true, true) => c.n_ac += 1.0,
            (true, false) => c.n_au += 1.0,
            (false, true) => c.n_ic += 1.0,
            (false, false) => c.n_iu += 1.0,
        }
    }
    c
}

/// Soft masses from plain values. `squashed` is the uncertainty mapped into `[0, 1]`
/// (normally `tanh u`); group membership uses the raw `uncertainty`.
pub fn soft_counts_values(
    correct: &[bool],
    confidence: &[f64],
    squashed: &[f64],
    uncertainty: &[f64],
    u_th: f64,
) -> AvuCounts {
    let mut c = AvuCounts {
        n_ac: 0.0,
        n_au: 0.0,
        n_ic: 0.0,
        n_iu: 0.0,
        u_th,
    };
    for i in 0..correct.len() {
        let (p, t) = (confidence[i], squashed[i]);
        match (correct[i], uncertainty[i] <= u_th) {
            (true, true) => c.n_ac += p * (1.0 - t),
            (true, false) => c.n_au += p * t,
            (false, true) => c.n_ic += (1.0 - p) * (1.0 - t),
            (false, false) => c.n_iu += (1.0 - p) * t,
        }
    }
    c
}

/// Differentiable view of a predictive distribution.
#[derive(Debug, Clone, Copy)]
pub struct PredictiveNodes {
    /// `[batch, K]`
    pub probs: Var,
    /// `[batch]` predicted-class probability.
    pub confidence: Var,
    /// `[batch]` predictive entropy, nats.
    pub uncertainty: Var,
}

/// Confidence and entropy nodes for a `[batch, K]` probability node.
pub fn predictive_nodes(g: &mut Graph, probs: Var) -> Result<PredictiveNodes> {
    let confidence = g.max_rows(probs)?;
    let logp = g.log_eps(probs, ENTROPY_EPS)?;
    let plogp = g.mul(probs, logp)?;
    let s = g.sum_rows(plogp)?;
    let uncertainty = g.neg(s)?;
    Ok(PredictiveNodes {
        probs,
        confidence,
        uncertainty,
    })
}

/// Average of per-sample softmax outputs, `[batch, K]`.
pub fn mean_probs(g: &mut Graph, logits_samples: &[Var]) -> Result<Var> {
    if logits_samples.is_empty() {
        return Err(Error::invalid("need at least one Monte Carlo sample"));
    }
    let probs = logits_samples
        .iter()
        .map(|&l| g.softmax(l))
        .collect::<Result<Vec<_>>>()?;
    let s = g.add_all(&probs)?;
    if probs.len() == 1 {
        Ok(s)
    } else {
        g.scale(s, 1.0 / probs.len() as f64)
    }
}

/// The four soft masses as graph scalars.
#[derive(Debug, Clone, Copy)]
pub struct SoftCounts {
    pub n_ac: Var,
    pub n_au: Var,
    pub n_ic: Var,
    pub n_iu: Var,
    pub u_th: f64,
}

impl SoftCounts {
    pub fn values(&self, g: &Graph) -> AvuCounts {
        AvuCounts {
            n_ac: g.value(self.n_ac).item(),
            n_au: g.value(self.n_au).item(),
            n_ic: g.value(self.n_ic).item(),
            n_iu: g.value(self.n_iu).item(),
            u_th: self.u_th,
        }
    }
}

fn correctness(g: &Graph, probs: Var, labels: &[usize]) -> Result<Vec<bool>> {
    let t = g.value(probs);
    if t.ndim() != 2 || t.rows() != labels.len() {
        return Err(Error::shape("soft_counts", format!("probs {:?} with {} labels", t.shape(), labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= t.cols()) {
        return Err(Error::invalid(format!("label {bad} out of range for {} classes", t.cols())));
    }
    Ok((0..t.rows())
        .map(|r| crate::diffcore::argmax(t.row(r)) == labels[r])
        .collect())
}

/// Differentiable soft counts at `u_th`.
pub fn soft_counts(g: &mut Graph, nodes: &PredictiveNodes, labels: &[usize], u_th: f64) -> Result<SoftCounts> {
    let correct = correctness(g, nodes.probs, labels)?;
    let u = g.value(nodes.uncertainty).data().to_vec();
    let mask = |pick: &dyn Fn(bool, bool) -> bool| -> Tensor {
        Tensor::vector(
            correct
                .iter()
                .zip(&u)
                .map(|(&ok, &ui)| if pick(ok, ui <= u_th) { 1.0 } else { 0.0 })
                .collect(),
        )
    };
    let m_ac = mask(&|ok, cert| ok && cert);
    let m_au = mask(&|ok, cert| ok && !cert);
    let m_ic = mask(&|ok, cert| !ok && cert);
    let m_iu = mask(&|ok, cert| !ok && !cert);

    let p = nodes.confidence;
    let t = g.tanh(nodes.uncertainty)?;
    let one_minus_p = g.rsub_scalar(1.0, p)?;
    let one_minus_t = g.rsub_scalar(1.0, t)?;

    let mut masked_sum = |a: Var, b: Var, m: Tensor| -> Result<Var> {
        let w = g.mul(a, b)?;
        let mv = g.constant(m);
        let wm = g.mul(w, mv)?;
        g.sum(wm)
    };
    Ok(SoftCounts {
        n_ac: masked_sum(p, one_minus_t, m_ac)?,
        n_au: masked_sum(p, t, m_au)?,
        n_ic: masked_sum(one_minus_p, one_minus_t, m_ic)?,
        n_iu: masked_sum(one_minus_p, t, m_iu)?,
        u_th,
    })
}

/// `log(1 + (n_AU + n_IC) / (n_AC + n_IU + eps))`.
pub fn avuc_loss(g: &mut Graph, counts: &SoftCounts) -> Result<Var> {
    let bad = g.add(counts.n_au, counts.n_ic)?;
    let good = g.add(counts.n_ac, counts.n_iu)?;
    let den = g.add_scalar(good, AVUC_EPS)?;
    let ratio = g.div(bad, den)?;
    let arg = g.add_scalar(ratio, 1.0)?;
    g.log(arg)
}

/// Plain-value AvUC loss for given counts.
pub fn avuc_loss_value(counts: &AvuCounts) -> f64 {
    (1.0 + (counts.n_au + counts.n_ic) / (counts.n_ac + counts.n_iu + AVUC_EPS)).ln()
}

/// Soft AvU `(n_AC + n_IU) / (total + eps)` as a node.
pub fn soft_avu(g: &mut Graph, counts: &SoftCounts) -> Result<Var> {
    let good = g.add(counts.n_ac, counts.n_iu)?;
    let bad = g.add(counts.n_au, counts.n_ic)?;
    let total = g.add(good, bad)?;
    let den = g.add_scalar(total, AVUC_EPS)?;
    g.div(good, den)
}

/// Evenly spaced grid of `n` points on `[0, 1]`.
pub fn default_t_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

pub(crate) fn check_t_grid(t_grid: &[f64]) -> Result<()> {
    if t_grid.len() < 2 {
        return Err(Error::invalid("threshold grid needs at least two points"));
    }
    if t_grid.windows(2).any(|w| !(w[0] < w[1])) || t_grid[0] < 0.0 || t_grid[t_grid.len() - 1] > 1.0 {
        return Err(Error::invalid("threshold grid must be strictly increasing within [0, 1]"));
    }
    Ok(())
}

/// Threshold-free variant: `-log(trapezoidal AUC of soft AvU over t + eps)` with
/// `u_th = u_min + t (u_max - u_min)`. Falls back to [`avuc_loss`] at `u_min` when
/// every uncertainty is equal.
pub fn au_avuc_loss(g: &mut Graph, nodes: &PredictiveNodes, labels: &[usize], t_grid: &[f64]) -> Result<Var> {
    check_t_grid(t_grid)?;
    let u = g.value(nodes.uncertainty).data();
    let u_min = u.iter().copied().fold(f64::INFINITY, f64::min);
    let u_max = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(u_min < u_max) {
        let counts = soft_counts(g, nodes, labels, u_min)?;
        return avuc_loss(g, &counts);
    }
    let mut avus = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let counts = soft_counts(g, nodes, labels, u_min + t * (u_max - u_min))?;
        avus.push(soft_avu(g, &counts)?);
    }
    let mut pieces = Vec::with_capacity(t_grid.len() - 1);
    for j in 0..t_grid.len() - 1 {
        let pair = g.add(avus[j], avus[j + 1])?;
        pieces.push(g.scale(pair, 0.5 * (t_grid[j + 1] - t_grid[j]))?);
    }
    let auc = g.add_all(&pieces)?;
    let l = g.log_eps(auc, AVUC_EPS)?;
    g.neg(l)
}

/// Mean softmax cross-entropy.
pub fn cross_entropy_loss(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    let ls = g.log_softmax(logits)?;
    let picked = g.gather(ls, labels)?;
    let m = g.mean(picked)?;
    g.neg(m)
}

/// Negative ELBO: mean over Monte Carlo samples of the batch-mean cross-entropy,
/// plus `kl_scale * kl`.
pub fn elbo_loss(
    g: &mut Graph,
    logits_samples: &[Var],
    labels: &[usize],
    kl: Option<Var>,
    kl_scale: f64,
) -> Result<Var> {
    if logits_samples.is_empty() {
        return Err(Error::invalid("need at least one Monte Carlo sample"));
    }
    let nlls = logits_samples
        .iter()
        .map(|&l| cross_entropy_loss(g, l, labels))
        .collect::<Result<Vec<_>>>()?;
    let s = g.add_all(&nlls)?;
    let nll = if nlls.len() == 1 {
        s
    } else {
        g.scale(s, 1.0 / nlls.len() as f64)?
    };
    match kl {
        Some(kl) => {
            let scaled = g.scale(kl, kl_scale)?;
            g.add(nll, scaled)
        }
        None => Ok(nll),
    }
}

/// Loss-calibrated ELBO: `elbo + beta * avuc`.
pub fn total_loss(g: &mut Graph, elbo: Var, avuc: Var, beta: f64) -> Result<Var> {
    if !(beta >= 0.0) {
        return Err(Error::invalid("beta must be non-negative"));
    }
    let w = g.scale(avuc, beta)?;
    g.add(elbo, w)
}
