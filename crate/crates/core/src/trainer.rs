//! Training loops for mean-field (SVI) and point-estimate (vanilla) networks, with
//! or without the AvUC term.
//!
//! Every epoch shuffles the training split, walks mini-batches in order and takes one
//! optimizer step per batch. AvUC methods train on the ELBO alone for the first
//! `warmup_epochs`; the uncertainty threshold is then learned from the predictions of
//! the last warm-up epoch and frozen (unless `refresh_threshold` is set).

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::avuc::{self, DEFAULT_BETA, DEFAULT_GRID_POINTS};
use crate::bayes::{BnnModel, Posterior, DEFAULT_DELTA};
use crate::diffcore::{argmax, Graph, Tensor, Var};
use crate::optim::{Optimizer, OptimizerKind};
use crate::seed::{self, stream};
use crate::shiftlab::{Dataset, Split};
use crate::uncertainty::{self, entropy_row, ThresholdAccumulator};
use crate::{Error, Result};

/// Upper bound on Monte Carlo samples per training step.
pub const MAX_TRAIN_SAMPLES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Svi,
    SviAvuc,
    SviAuAvuc,
    Vanilla,
    VanillaAvuc,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Svi,
        Method::SviAvuc,
        Method::SviAuAvuc,
        Method::Vanilla,
        Method::VanillaAvuc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Svi => "svi",
            Method::SviAvuc => "svi-avuc",
            Method::SviAuAvuc => "svi-au-avuc",
            Method::Vanilla => "vanilla",
            Method::VanillaAvuc => "vanilla-avuc",
        }
    }

    pub fn is_bayesian(self) -> bool {
        matches!(self, Method::Svi | Method::SviAvuc | Method::SviAuAvuc)
    }

    /// Whether the loss carries an AvUC term after warm-up.
    pub fn uses_avuc(self) -> bool {
        matches!(self, Method::SviAvuc | Method::SviAuAvuc | Method::VanillaAvuc)
    }

    pub fn posterior(self) -> Posterior {
        if self.is_bayesian() {
            Posterior::MeanField
        } else {
            Posterior::Point
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown method {s:?}")))
    }
}

/// Weight on the KL term of the ELBO, relative to a batch-mean negative log-likelihood.
/// `PerExample` is the Bayes-by-backprop `KL / M` weighting of a batch-summed
/// likelihood, divided through by the batch size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KlScale {
    /// `1 / M`, M mini-batches per epoch.
    PerBatch,
    /// `1 / N`, N training examples.
    PerExample,
    /// `1 / B`, B the batch size.
    PerBatchSize,
    Fixed(f64),
}

impl KlScale {
    pub fn factor(self, n_train: usize, batch_size: usize) -> f64 {
        match self {
            KlScale::PerBatch => 1.0 / n_train.div_ceil(batch_size).max(1) as f64,
            KlScale::PerExample => 1.0 / n_train.max(1) as f64,
            KlScale::PerBatchSize => 1.0 / batch_size as f64,
            KlScale::Fixed(w) => w,
        }
    }
}

/// Point-estimate pre-training followed by Empirical Bayes initialisation of the
/// variational posterior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmpiricalBayes {
    #[serde(default = "default_delta")]
    pub delta: f64,
    pub pretrain_epochs: usize,
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub method: Method,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// `(epoch, multiplier)` pairs; the last pair whose epoch is `<=` the current one
    /// scales `lr`.
    #[serde(default)]
    pub lr_schedule: Vec<(usize, f64)>,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "one")]
    pub mc_train_samples: usize,
    #[serde(default = "default_eval_samples")]
    pub mc_eval_samples: usize,
    #[serde(default = "default_warmup")]
    pub warmup_epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_kl_scale")]
    pub kl_scale: KlScale,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub empirical_bayes: Option<EmpiricalBayes>,
    /// Re-learn the threshold from each post-warm-up epoch instead of freezing it.
    #[serde(default)]
    pub refresh_threshold: bool,
    /// Threshold grid size for `svi-au-avuc`.
    #[serde(default = "default_grid")]
    pub t_grid_points: usize,
}

fn default_beta() -> f64 {
    DEFAULT_BETA
}
fn one() -> usize {
    1
}
fn default_eval_samples() -> usize {
    32
}
fn default_warmup() -> usize {
    3
}
fn default_kl_scale() -> KlScale {
    KlScale::PerExample
}
fn default_hidden() -> Vec<usize> {
    vec![32, 32]
}
fn default_grid() -> usize {
    DEFAULT_GRID_POINTS
}

impl TrainConfig {
    /// Defaults for every optional field.
    pub fn new(method: Method, epochs: usize, batch_size: usize, lr: f64) -> Self {
        Self {
            method,
            epochs,
            batch_size,
            lr,
            lr_schedule: Vec::new(),
            optimizer: OptimizerKind::default(),
            beta: default_beta(),
            mc_train_samples: 1,
            mc_eval_samples: default_eval_samples(),
            warmup_epochs: default_warmup(),
            seed: 0,
            kl_scale: default_kl_scale(),
            hidden: default_hidden(),
            empirical_bayes: None,
            refresh_threshold: false,
            t_grid_points: default_grid(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be positive"));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::invalid("lr must be positive"));
        }
        if self.lr_schedule.iter().any(|&(_, m)| !(m > 0.0) || !m.is_finite()) {
            return Err(Error::invalid("lr_schedule multipliers must be positive"));
        }
        if self.lr_schedule.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::invalid("lr_schedule epochs must be strictly increasing"));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::invalid("beta must be non-negative"));
        }
        if !(1..=MAX_TRAIN_SAMPLES).contains(&self.mc_train_samples) {
            return Err(Error::invalid(format!("mc_train_samples must be in 1..={MAX_TRAIN_SAMPLES}")));
        }
        if self.mc_eval_samples == 0 {
            return Err(Error::invalid("mc_eval_samples must be at least 1"));
        }
        if self.method.uses_avuc() && self.epochs < self.warmup_epochs {
            return Err(Error::invalid("AvUC methods need epochs >= warmup_epochs"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::invalid("hidden widths must be positive"));
        }
        if let KlScale::Fixed(w) = self.kl_scale {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::invalid("fixed kl_scale must be non-negative"));
            }
        }
        if let Some(eb) = &self.empirical_bayes {
            if !(eb.delta > 0.0) {
                return Err(Error::invalid("empirical_bayes.delta must be positive"));
            }
            if eb.pretrain_epochs == 0 {
                return Err(Error::invalid("empirical_bayes.pretrain_epochs must be positive"));
            }
        }
        if self.method == Method::SviAuAvuc {
            avuc::check_t_grid(&avuc::default_t_grid(self.t_grid_points))?;
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let mult = self
            .lr_schedule
            .iter()
            .take_while(|&&(e, _)| e <= epoch)
            .last()
            .map_or(1.0, |&(_, m)| m);
        self.lr * mult
    }
}

/// One row of the training history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean negative ELBO (cross-entropy for vanilla methods) over batches.
    pub elbo: f64,
    /// Mean AvUC loss over batches; absent during warm-up.
    pub avuc: Option<f64>,
    pub total: f64,
    /// Training accuracy of the per-batch predictions.
    pub acc: f64,
    /// Hard AvU of the epoch's predictions at `u_th`.
    pub avu: f64,
    pub u_th: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: BnnModel,
    pub u_th: Option<f64>,
    pub history: Vec<EpochRecord>,
}

impl TrainOutcome {
    /// AvU at the last warm-up epoch, if there was one.
    pub fn warmup_avu(&self, warmup_epochs: usize) -> Option<f64> {
        warmup_epochs
            .checked_sub(1)
            .and_then(|e| self.history.get(e))
            .map(|r| r.avu)
    }
}

pub fn write_history_csv(history: &[EpochRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "elbo", "avuc", "total", "acc", "avu"])?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            r.elbo.to_string(),
            r.avuc.map(|v| v.to_string()).unwrap_or_default(),
            r.total.to_string(),
            r.acc.to_string(),
            r.avu.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// A freshly initialised model for `config`, pre-trained and Empirical Bayes
/// initialised when requested.
pub fn prepare_model(dataset: &Dataset, config: &TrainConfig) -> Result<BnnModel> {
    config.validate()?;
    let mut model = BnnModel::new(
        dataset.dim(),
        &config.hidden,
        dataset.class_count,
        config.method.posterior(),
        config.seed,
    )?;
    if let (Some(eb), true) = (config.empirical_bayes, config.method.is_bayesian()) {
        let mut pre = config.clone();
        pre.method = Method::Vanilla;
        pre.epochs = eb.pretrain_epochs;
        pre.warmup_epochs = 0;
        pre.empirical_bayes = None;
        pre.seed = seed::derive(config.seed, stream::PRETRAIN);
        let point = BnnModel::new(dataset.dim(), &config.hidden, dataset.class_count, Posterior::Point, pre.seed)?;
        let trained = train(point, dataset, &pre)?;
        model.empirical_bayes_init(&trained.model.mean_weights(), eb.delta)?;
    }
    Ok(model)
}

/// [`prepare_model`] then [`train`].
pub fn fit(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    let model = prepare_model(dataset, config)?;
    train(model, dataset, config)
}

/// Train `model` on the training split of `dataset`.
pub fn train(mut model: BnnModel, dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if model.posterior != config.method.posterior() {
        return Err(Error::invalid(format!(
            "method {} needs a {:?} model",
            config.method,
            config.method.posterior()
        )));
    }
    if model.input_dim() != dataset.dim() || model.class_count != dataset.class_count {
        return Err(Error::shape("train", "model and dataset dimensions differ"));
    }
    let train_set = dataset.subset(Split::Train);
    if train_set.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    let labels = train_set.class_labels()?;
    let n = train_set.len();
    let kl_scale = config.kl_scale.factor(n, config.batch_size);
    let samples = if config.method.is_bayesian() {
        config.mc_train_samples
    } else {
        1
    };
    let t_grid = avuc::default_t_grid(config.t_grid_points);

    let mut optimizer = Optimizer::new(config.optimizer);
    let mut u_th: Option<f64> = None;
    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..n).collect();

    if config.method.uses_avuc() && config.warmup_epochs == 0 {
        u_th = Some(initial_threshold(&model, &train_set, &labels, config)?);
    }

    for epoch in 0..config.epochs {
        let warm = epoch < config.warmup_epochs;
        let lr = config.lr_at(epoch);
        let mut rng = seed::rng(seed::derive_path(config.seed, &[stream::SHUFFLE, epoch as u64]));
        order.shuffle(&mut rng);

        let mut sums = (0.0, 0.0, 0.0);
        let mut avuc_batches = 0usize;
        let mut batches = 0usize;
        let mut epoch_u = Vec::with_capacity(n);
        let mut epoch_correct = Vec::with_capacity(n);

        for (batch, idx) in order.chunks(config.batch_size).enumerate() {
            let x = train_set.features.select_rows(idx);
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let active_th = if warm { None } else { u_th };
            let step = batch_step(&model, config, &x, &y, epoch, batch, samples, kl_scale, active_th, &t_grid)
                .map_err(|e| match e {
                    Error::NonFinite { .. } => Error::Divergence {
                        epoch,
                        batch,
                        loss: f64::NAN,
                    },
                    other => other,
                })?;
            if !step.total.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch,
                    loss: step.total,
                });
            }
            {
                let mut params = model.params_mut();
                optimizer.step(&mut params, &step.grads, lr)?;
                if params.iter().any(|p| !p.all_finite()) {
                    return Err(Error::Divergence {
                        epoch,
                        batch,
                        loss: step.total,
                    });
                }
            }
            sums.0 += step.elbo;
            sums.2 += step.total;
            if let Some(a) = step.avuc {
                sums.1 += a;
                avuc_batches += 1;
            }
            batches += 1;
            epoch_u.extend(step.uncertainty);
            epoch_correct.extend(step.correct);
        }

        let mut acc_th = ThresholdAccumulator::default();
        acc_th.extend(&epoch_u, &epoch_correct);
        let epoch_th = acc_th.estimate()?.u_th;
        let last_warm = epoch + 1 == config.warmup_epochs;
        let record_th = match u_th {
            Some(t) if !warm => t,
            _ => epoch_th,
        };
        if last_warm || (config.refresh_threshold && !warm && epoch > 0) {
            u_th = Some(epoch_th);
        }
        let counts = avuc::hard_counts_from(&epoch_correct, &epoch_u, record_th);
        let correct = epoch_correct.iter().filter(|&&c| c).count();
        let rec = EpochRecord {
            epoch,
            elbo: sums.0 / batches as f64,
            avuc: (avuc_batches > 0).then(|| sums.1 / avuc_batches as f64),
            total: sums.2 / batches as f64,
            acc: correct as f64 / n as f64,
            avu: avuc::avu(&counts)?,
            u_th: record_th,
        };
        log::debug!(
            "epoch {epoch}: elbo {:.4} total {:.4} acc {:.4} avu {:.4}",
            rec.elbo,
            rec.total,
            rec.acc,
            rec.avu
        );
        history.push(rec);
        if u_th.is_none() && epoch + 1 == config.epochs {
            u_th = Some(epoch_th);
        }
    }
    Ok(TrainOutcome { model, u_th, history })
}

/// Threshold from the untrained model's predictions when there is no warm-up.
fn initial_threshold(model: &BnnModel, train_set: &Dataset, labels: &[usize], config: &TrainConfig) -> Result<f64> {
    let pred = uncertainty::mc_predict_with(
        model,
        &train_set.features,
        config.mc_train_samples,
        seed::derive(config.seed, stream::EVAL),
        1.0,
        crate::par::Exec::Sequential,
    )?;
    let correct: Vec<bool> = pred.pred_label.iter().zip(labels).map(|(a, b)| a == b).collect();
    Ok(uncertainty::learn_threshold(&pred.entropy, &correct)?.u_th)
}

struct StepResult {
    grads: Vec<Tensor>,
    elbo: f64,
    avuc: Option<f64>,
    total: f64,
    uncertainty: Vec<f64>,
    correct: Vec<bool>,
}

/// Forward and backward pass for one mini-batch. Gradients come back in the order of
/// [`BnnModel::params_mut`].
#[allow(clippy::too_many_arguments)]
fn batch_step(
    model: &BnnModel,
    config: &TrainConfig,
    x: &Tensor,
    y: &[usize],
    epoch: usize,
    batch: usize,
    samples: usize,
    kl_scale: f64,
    u_th: Option<f64>,
    t_grid: &[f64],
) -> Result<StepResult> {
    let mut g = Graph::new();
    let vars = model.register(&mut g);
    let xv = g.constant(x.clone());
    let logits = (0..samples)
        .map(|t| {
            let s = seed::derive_path(config.seed, &[stream::FORWARD, epoch as u64, batch as u64, t as u64]);
            model.sample_forward(&mut g, &vars, xv, s)
        })
        .collect::<Result<Vec<Var>>>()?;
    let kl = if model.is_stochastic() {
        Some(model.kl_to_prior(&mut g, &vars)?)
    } else {
        None
    };
    let elbo = avuc::elbo_loss(&mut g, &logits, y, kl, kl_scale)?;
    let probs = avuc::mean_probs(&mut g, &logits)?;
    let nodes = avuc::predictive_nodes(&mut g, probs)?;

    let mut avuc_value = None;
    let root = match u_th {
        Some(th) if config.method.uses_avuc() => {
            let term = if config.method == Method::SviAuAvuc {
                avuc::au_avuc_loss(&mut g, &nodes, y, t_grid)?
            } else {
                let counts = avuc::soft_counts(&mut g, &nodes, y, th)?;
                avuc::avuc_loss(&mut g, &counts)?
            };
            avuc_value = Some(g.value(term).item());
            avuc::total_loss(&mut g, elbo, term, config.beta)?
        }
        _ => elbo,
    };
    g.backward(root)?;

    let p = g.value(probs);
    let (uncertainty, correct): (Vec<f64>, Vec<bool>) = (0..p.rows())
        .map(|r| {
            let row = p.row(r);
            (entropy_row(row), argmax(row) == y[r])
        })
        .unzip();
    if avuc_value.is_none() {
        if let Some(th) = u_th {
            // Detached monitor for methods without the AvUC term.
            let conf = g.value(nodes.confidence).data();
            let counts = avuc::soft_counts_values(&correct, conf, &uncertainty.iter().map(|u| u.tanh()).collect::<Vec<_>>(), &uncertainty, th);
            avuc_value = Some(avuc::avuc_loss_value(&counts));
        }
    }
    Ok(StepResult {
        grads: vars.all().into_iter().map(|v| g.grad_or_zeros(v)).collect(),
        elbo: g.value(elbo).item(),
        avuc: avuc_value,
        total: g.value(root).item(),
        uncertainty,
        correct,
    })
}
