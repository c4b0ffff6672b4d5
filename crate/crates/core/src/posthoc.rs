//! Post-hoc temperature scaling of frozen models.
//!
//! The objective is minimised over `s = ln T` by gradient descent with an adaptive
//! step: a step that lowers the objective is kept and the step size grows by 20%,
//! otherwise it is discarded and the step size halves. Monte Carlo logit sets are
//! drawn once, so the objective is a deterministic function of `T`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::avuc::{self, PredictiveNodes};
use crate::diffcore::{softmax_rows, Graph, Tensor, Var};
use crate::metrics::NLL_EPS;
use crate::uncertainty::{self, McPrediction};
use crate::{Error, Result};

/// Initial step size on `ln T`.
pub const INITIAL_STEP: f64 = 0.005;
pub const MAX_ITERATIONS: usize = 500;
/// Stop once an accepted step changes the objective by less than this.
pub const OBJECTIVE_TOL: f64 = 1e-12;
const MIN_STEP: f64 = 1e-12;
const GROW: f64 = 1.2;
const SHRINK: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    Nll,
    Avuc,
    AuAvuc,
}

impl Objective {
    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Nll => "nll",
            Objective::Avuc => "avuc",
            Objective::AuAvuc => "au-avuc",
        }
    }
}

impl std::str::FromStr for Objective {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [Objective::Nll, Objective::Avuc, Objective::AuAvuc]
            .into_iter()
            .find(|o| o.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown objective {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemperatureFit {
    pub temperature: f64,
    pub objective: Objective,
    pub u_th: Option<f64>,
    pub objective_value: f64,
    /// Objective at `T = 1`.
    pub initial_value: f64,
    pub iterations: usize,
    /// The optimiser ended worse than `T = 1`, which was returned instead.
    pub fallback: bool,
}

impl TemperatureFit {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&s)?)
    }
}

/// `softmax(logits / t)` row-wise.
pub fn apply_temperature(logits: &Tensor, t: f64) -> Result<Tensor> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::invalid("temperature must be positive and finite"));
    }
    if logits.ndim() != 2 {
        return Err(Error::shape("apply_temperature", format!("expected [n, K], got {:?}", logits.shape())));
    }
    let scaled: Vec<f64> = logits.data().iter().map(|x| x / t).collect();
    Tensor::new(logits.shape().to_vec(), softmax_rows(&scaled, logits.cols()))
}

/// Monte Carlo logit sets for a batch plus its labels: the input of a fit.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitDump {
    /// One `[n, K]` tensor per Monte Carlo sample.
    pub samples: Vec<Tensor>,
    pub labels: Vec<usize>,
}

impl LogitDump {
    pub fn new(samples: Vec<Tensor>, labels: Vec<usize>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::invalid("logit dump needs at least one sample"))?;
        if first.ndim() != 2 || first.rows() != labels.len() || first.cols() < 2 {
            return Err(Error::shape("logit_dump", "logits must be [n, K >= 2] with n labels"));
        }
        if samples.iter().any(|s| s.shape() != first.shape()) {
            return Err(Error::shape("logit_dump", "samples differ in shape"));
        }
        if labels.iter().any(|&y| y >= first.cols()) {
            return Err(Error::invalid("label out of range"));
        }
        if samples.iter().any(|s| !s.all_finite()) {
            return Err(Error::NonFinite { op: "logit_dump" });
        }
        Ok(Self { samples, labels })
    }

    pub fn class_count(&self) -> usize {
        self.samples[0].cols()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn predict(&self, temperature: f64) -> Result<McPrediction> {
        McPrediction::from_logits(&self.samples, temperature)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let k = self.class_count();
        let mut header = vec!["sample_index".to_string(), "mc_index".into(), "label".into()];
        header.extend((0..k).map(|j| format!("logit_{j}")));
        w.write_record(&header)?;
        for i in 0..self.len() {
            for (t, s) in self.samples.iter().enumerate() {
                let mut rec = vec![i.to_string(), t.to_string(), self.labels[i].to_string()];
                rec.extend(s.row(i).iter().map(|v| v.to_string()));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.clone();
        if header.len() < 5 || &header[0] != "sample_index" || &header[1] != "mc_index" || &header[2] != "label" {
            return Err(Error::Format("logit dump header must be sample_index,mc_index,label,logit_0,...".into()));
        }
        let k = header.len() - 3;
        for j in 0..k {
            if header[3 + j] != format!("logit_{j}") {
                return Err(Error::Format(format!("column {} should be logit_{j}", 3 + j)));
            }
        }
        let parse = |s: &str| -> Result<f64> { s.parse().map_err(|_| Error::Format(format!("bad number {s:?}"))) };
        let mut rows: Vec<(usize, usize, usize, Vec<f64>)> = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let idx = |c: usize| -> Result<usize> {
                rec[c].parse().map_err(|_| Error::Format(format!("bad index {:?}", &rec[c])))
            };
            let logits = (0..k).map(|j| parse(&rec[3 + j])).collect::<Result<Vec<_>>>()?;
            rows.push((idx(0)?, idx(1)?, idx(2)?, logits));
        }
        let n = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
        let t = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
        if n == 0 || rows.len() != n * t {
            return Err(Error::Format("logit dump must hold every (sample_index, mc_index) pair once".into()));
        }
        let mut data = vec![vec![f64::NAN; n * k]; t];
        let mut seen = vec![false; n * t];
        let mut labels = vec![usize::MAX; n];
        for (i, m, y, logits) in rows {
            if std::mem::replace(&mut seen[i * t + m], true) {
                return Err(Error::Format(format!("duplicate row ({i}, {m})")));
            }
            if labels[i] != usize::MAX && labels[i] != y {
                return Err(Error::Format(format!("sample {i} has conflicting labels")));
            }
            labels[i] = y;
            data[m][i * k..(i + 1) * k].copy_from_slice(&logits);
        }
        let samples = data
            .into_iter()
            .map(|d| Tensor::matrix(n, k, d))
            .collect::<Result<Vec<_>>>()?;
        Self::new(samples, labels)
    }
}

/// Objective value and its derivative with respect to `ln T`.
fn objective_and_grad(
    dump: &LogitDump,
    objective: Objective,
    u_th: f64,
    t_grid: &[f64],
    log_t: f64,
) -> Result<(f64, f64)> {
    let mut g = Graph::new();
    let s = g.param(Tensor::scalar(log_t));
    let neg = g.neg(s)?;
    let inv_t = g.exp(neg)?;
    let logits: Vec<Var> = dump
        .samples
        .iter()
        .map(|l| {
            let c = g.constant(l.clone());
            g.mul_scalar_var(c, inv_t)
        })
        .collect::<Result<_>>()?;
    let root = match objective {
        Objective::Nll if logits.len() == 1 => avuc::cross_entropy_loss(&mut g, logits[0], &dump.labels)?,
        _ => {
            let probs = avuc::mean_probs(&mut g, &logits)?;
            match objective {
                Objective::Nll => {
                    let lp = g.log_eps(probs, NLL_EPS)?;
                    let picked = g.gather(lp, &dump.labels)?;
                    let m = g.mean(picked)?;
                    g.neg(m)?
                }
                Objective::Avuc => {
                    let nodes: PredictiveNodes = avuc::predictive_nodes(&mut g, probs)?;
                    let counts = avuc::soft_counts(&mut g, &nodes, &dump.labels, u_th)?;
                    avuc::avuc_loss(&mut g, &counts)?
                }
                Objective::AuAvuc => {
                    let nodes = avuc::predictive_nodes(&mut g, probs)?;
                    avuc::au_avuc_loss(&mut g, &nodes, &dump.labels, t_grid)?
                }
            }
        }
    };
    g.backward(root)?;
    let v = g.value(root).item();
    let d = g.grad_or_zeros(s).item();
    if !v.is_finite() || !d.is_finite() {
        return Err(Error::NonFinite { op: "fit_temperature" });
    }
    Ok((v, d))
}

/// Objective value at temperature `t`.
pub fn objective_value(dump: &LogitDump, objective: Objective, u_th: f64, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::invalid("temperature must be positive"));
    }
    let grid = avuc::default_t_grid(avuc::DEFAULT_GRID_POINTS);
    Ok(objective_and_grad(dump, objective, u_th, &grid, t.ln())?.0)
}

/// Threshold learned from the uncalibrated (`T = 1`) predictions of `dump`.
pub fn uncalibrated_threshold(dump: &LogitDump) -> Result<f64> {
    let pred = dump.predict(1.0)?;
    let correct: Vec<bool> = pred.pred_label.iter().zip(&dump.labels).map(|(a, b)| a == b).collect();
    Ok(uncertainty::learn_threshold(&pred.entropy, &correct)?.u_th)
}

/// Fit a temperature on held-out logits. For `avuc` the threshold defaults to the one
/// learned from the uncalibrated predictions.
pub fn fit_temperature(dump: &LogitDump, objective: Objective, u_th: Option<f64>) -> Result<TemperatureFit> {
    let th = match (objective, u_th) {
        (_, Some(t)) => t,
        (Objective::Avuc, None) => uncalibrated_threshold(dump)?,
        _ => f64::NAN,
    };
    let grid = avuc::default_t_grid(avuc::DEFAULT_GRID_POINTS);
    let eval = |s: f64| objective_and_grad(dump, objective, th, &grid, s);

    let (initial_value, mut d) = eval(0.0)?;
    let mut s = 0.0;
    let mut value = initial_value;
    let mut step = INITIAL_STEP;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS && step > MIN_STEP && d != 0.0 {
        iterations += 1;
        let cand = s - step * d;
        match eval(cand) {
            Ok((v, dc)) if v <= value => {
                let change = value - v;
                s = cand;
                value = v;
                d = dc;
                step *= GROW;
                if change < OBJECTIVE_TOL {
                    break;
                }
            }
            Ok(_) => step *= SHRINK,
            Err(Error::NonFinite { .. }) => step *= SHRINK,
            Err(e) => return Err(e),
        }
    }
    let fallback = value > initial_value;
    let (temperature, objective_value) = if fallback { (1.0, initial_value) } else { (s.exp(), value) };
    Ok(TemperatureFit {
        temperature,
        objective,
        u_th: th.is_finite().then_some(th),
        objective_value,
        initial_value,
        iterations,
        fallback,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_dump() -> LogitDump {
        let l = Tensor::from_rows(&[[3.0, 0.0], [0.0, 2.0], [1.0, 0.5], [0.2, 1.5], [2.0, 2.5]]).unwrap();
        LogitDump::new(vec![l], vec![0, 1, 1, 1, 0]).unwrap()
    }

    #[test]
    fn unit_temperature_is_plain_softmax() {
        let l = Tensor::from_rows(&[[1.0, 2.0, 3.0]]).unwrap();
        let p = apply_temperature(&l, 1.0).unwrap();
        assert_eq!(p.data(), softmax_rows(l.data(), 3).as_slice());
        let hot = apply_temperature(&l, 1e9).unwrap();
        let h = crate::uncertainty::entropy_row(hot.row(0));
        assert!((h - 3f64.ln()).abs() < 1e-6);
        assert!(apply_temperature(&l, 0.0).is_err());
        assert!(apply_temperature(&l, -1.0).is_err());
    }

    #[test]
    fn fit_never_regresses() {
        let dump = toy_dump();
        for obj in [Objective::Nll, Objective::Avuc, Objective::AuAvuc] {
            let fit = fit_temperature(&dump, obj, None).unwrap();
            assert!(fit.temperature > 0.0);
            assert!(fit.objective_value <= fit.initial_value, "{obj:?}");
        }
    }

    #[test]
    fn dump_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("logits.csv");
        let a = Tensor::from_rows(&[[0.1, -0.2], [1.5, 0.25]]).unwrap();
        let b = Tensor::from_rows(&[[0.3, 0.7], [-1.0, 2.0]]).unwrap();
        let dump = LogitDump::new(vec![a, b], vec![1, 0]).unwrap();
        dump.write_csv(&path).unwrap();
        assert_eq!(LogitDump::read_csv(&path).unwrap(), dump);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("sample_index,mc_index,label,logit_0,logit_1\n"));
    }

    #[test]
    fn bad_dumps_are_rejected() {
        assert!(LogitDump::new(vec![], vec![]).is_err());
        let l = Tensor::from_rows(&[[0.0, 1.0]]).unwrap();
        assert!(LogitDump::new(vec![l.clone()], vec![2]).is_err());
        assert!(LogitDump::new(vec![l], vec![0, 1]).is_err());
        assert!("tempering".parse::<Objective>().is_err());
    }
}
