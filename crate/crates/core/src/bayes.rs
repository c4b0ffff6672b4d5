//! Mean-field Gaussian variational layers.
//!
//! Each weight and bias carries a posterior `N(mu, softplus(rho)^2)` and a Gaussian
//! prior `N(prior_mean, prior_std^2)`. Forward passes draw one weight sample per
//! layer with the reparameterisation `w = mu + softplus(rho) * eps`, shared across
//! the batch.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffcore::{inverse_softplus, softplus, Graph, Tensor, Var};
use crate::seed;
use crate::{Error, Result};

/// Initial `rho` when no Empirical Bayes initialisation is used (sigma ~ 6.7e-3).
pub const DEFAULT_RHO: f64 = -5.0;
/// Lower clamp on `|w_MLE|` in [`BnnModel::empirical_bayes_init`].
pub const MIN_ABS_MLE: f64 = 1e-6;
/// Default Empirical Bayes scale `delta`.
pub const DEFAULT_DELTA: f64 = 0.5;

/// Whether the network carries a weight distribution or a single point estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Posterior {
    MeanField,
    /// Deterministic network using only `mu` (the non-Bayesian path).
    Point,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariationalLinear {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `[out, in]`
    pub weight_mu: Tensor,
    /// `[out]`
    pub bias_mu: Tensor,
    pub weight_rho: Tensor,
    pub bias_rho: Tensor,
    pub prior_weight_mean: Tensor,
    pub prior_bias_mean: Tensor,
    pub prior_std: f64,
}

impl VariationalLinear {
    /// `mu ~ N(0, 1/fan_in)`, `rho = -5`, prior `N(0, 1)`.
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let std = (1.0 / in_dim as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                .collect()
        };
        let weight_mu = Tensor::new(vec![out_dim, in_dim], draw(out_dim * in_dim)).expect("shape");
        let bias_mu = Tensor::vector(draw(out_dim));
        Self {
            in_dim,
            out_dim,
            weight_mu,
            bias_mu,
            weight_rho: Tensor::full(&[out_dim, in_dim], DEFAULT_RHO),
            bias_rho: Tensor::full(&[out_dim], DEFAULT_RHO),
            prior_weight_mean: Tensor::zeros(&[out_dim, in_dim]),
            prior_bias_mean: Tensor::zeros(&[out_dim]),
            prior_std: 1.0,
        }
    }

    pub fn param_count(&self) -> usize {
        self.out_dim * (self.in_dim + 1)
    }

    pub fn weight_sigma(&self) -> Tensor {
        self.weight_rho.map(softplus)
    }

    /// Closed-form `KL(q || p)` summed over the layer.
    pub fn kl_value(&self) -> f64 {
        let s = self.prior_std;
        let term = |mu: f64, rho: f64, m: f64| {
            let sigma = softplus(rho);
            (s / sigma).ln() + (sigma * sigma + (mu - m) * (mu - m)) / (2.0 * s * s) - 0.5
        };
        let w = self
            .weight_mu
            .data()
            .iter()
            .zip(self.weight_rho.data())
            .zip(self.prior_weight_mean.data())
            .map(|((&mu, &rho), &m)| term(mu, rho, m));
        let b = self
            .bias_mu
            .data()
            .iter()
            .zip(self.bias_rho.data())
            .zip(self.prior_bias_mean.data())
            .map(|((&mu, &rho), &m)| term(mu, rho, m));
        w.chain(b).sum()
    }
}

/// Graph handles for one layer's parameters.
#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub weight_mu: Var,
    pub bias_mu: Var,
    pub weight_rho: Option<Var>,
    pub bias_rho: Option<Var>,
}

/// Graph handles for a whole model, in layer order.
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub layers: Vec<LayerVars>,
}

impl ModelVars {
    /// Every registered parameter in the fixed order used by [`BnnModel::params_mut`].
    pub fn all(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(l.weight_mu);
            out.push(l.bias_mu);
            out.extend(l.weight_rho);
            out.extend(l.bias_rho);
        }
        out
    }
}

/// A ReLU multilayer perceptron of [`VariationalLinear`] layers.
#[derive(Debug, Clone, PartialEq)]
pub struct BnnModel {
    pub layers: Vec<VariationalLinear>,
    pub class_count: usize,
    pub posterior: Posterior,
}

impl BnnModel {
    /// Build a network with layer widths `input -> hidden... -> classes`.
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        class_count: usize,
        posterior: Posterior,
        seed_value: u64,
    ) -> Result<Self> {
        if input_dim == 0 || class_count < 2 || hidden.contains(&0) {
            return Err(Error::invalid(
                "layer widths must be positive and class_count at least 2",
            ));
        }
        let mut rng = seed::rng(seed::derive(seed_value, seed::stream::INIT));
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(class_count);
        let layers = dims
            .windows(2)
            .map(|w| VariationalLinear::new(w[0], w[1], &mut rng))
            .collect();
        Ok(Self {
            layers,
            class_count,
            posterior,
        })
    }

    pub fn from_layers(
        layers: Vec<VariationalLinear>,
        class_count: usize,
        posterior: Posterior,
    ) -> Result<Self> {
        let model = Self {
            layers,
            class_count,
            posterior,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::invalid("model has no layers"));
        }
        for pair in self.layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::shape(
                    "model",
                    format!("layer widths {} -> {} do not chain", pair[0].out_dim, pair[1].in_dim),
                ));
            }
        }
        if self.layers.last().map(|l| l.out_dim) != Some(self.class_count) {
            return Err(Error::shape("model", "final layer width must equal class_count"));
        }
        for l in &self.layers {
            let w = [l.out_dim, l.in_dim];
            let b = [l.out_dim];
            let ok = l.weight_mu.shape() == w
                && l.weight_rho.shape() == w
                && l.prior_weight_mean.shape() == w
                && l.bias_mu.shape() == b
                && l.bias_rho.shape() == b
                && l.prior_bias_mean.shape() == b;
            if !ok {
                return Err(Error::shape("model", "parameter shapes disagree with layer widths"));
            }
            if !(l.prior_std > 0.0) {
                return Err(Error::invalid("prior_std must be positive"));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn is_stochastic(&self) -> bool {
        self.posterior == Posterior::MeanField
    }

    /// Trainable tensors: per layer `weight_mu, bias_mu` and, for mean-field models,
    /// `weight_rho, bias_rho`.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let stochastic = self.is_stochastic();
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.weight_mu);
            out.push(&mut l.bias_mu);
            if stochastic {
                out.push(&mut l.weight_rho);
                out.push(&mut l.bias_rho);
            }
        }
        out
    }

    /// Register the trainable parameters as graph leaves.
    pub fn register(&self, g: &mut Graph) -> ModelVars {
        let stochastic = self.is_stochastic();
        let layers = self
            .layers
            .iter()
            .map(|l| LayerVars {
                weight_mu: g.param(l.weight_mu.clone()),
                bias_mu: g.param(l.bias_mu.clone()),
                weight_rho: stochastic.then(|| g.param(l.weight_rho.clone())),
                bias_rho: stochastic.then(|| g.param(l.bias_rho.clone())),
            })
            .collect();
        ModelVars { layers }
    }

    fn check_input(&self, g: &Graph, x: Var) -> Result<()> {
        let t = g.value(x);
        if t.ndim() != 2 || t.cols() != self.input_dim() {
            return Err(Error::shape(
                "forward",
                format!("expected [batch, {}], got {:?}", self.input_dim(), t.shape()),
            ));
        }
        Ok(())
    }

    /// One stochastic forward pass: a single weight sample per layer drawn from the
    /// noise stream of `sample_seed`. Point models ignore the seed.
    pub fn sample_forward(&self, g: &mut Graph, vars: &ModelVars, x: Var, sample_seed: u64) -> Result<Var> {
        self.check_input(g, x)?;
        if !self.is_stochastic() {
            return self.deterministic_forward(g, vars, x);
        }
        let last = self.layers.len() - 1;
        let mut h = x;
        for (idx, (layer, lv)) in self.layers.iter().zip(&vars.layers).enumerate() {
            let mut rng = seed::rng(seed::derive(sample_seed, idx as u64));
            let mut noise = |shape: &[usize]| -> Tensor {
                let n = shape.iter().product();
                let data = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                Tensor::new(shape.to_vec(), data).expect("shape")
            };
            let eps_w = g.constant(noise(&[layer.out_dim, layer.in_dim]));
            let eps_b = g.constant(noise(&[layer.out_dim]));
            let (Some(w_rho), Some(b_rho)) = (lv.weight_rho, lv.bias_rho) else {
                return Err(Error::invalid("mean-field model registered without rho"));
            };
            let w = reparameterize(g, lv.weight_mu, w_rho, eps_w)?;
            let b = reparameterize(g, lv.bias_mu, b_rho, eps_b)?;
            h = affine(g, h, w, b)?;
            if idx < last {
                h = g.relu(h)?;
            }
        }
        Ok(h)
    }

    /// Forward pass with weights fixed at `mu`.
    pub fn deterministic_forward(&self, g: &mut Graph, vars: &ModelVars, x: Var) -> Result<Var> {
        self.check_input(g, x)?;
        let last = self.layers.len() - 1;
        let mut h = x;
        for (idx, lv) in vars.layers.iter().enumerate() {
            h = affine(g, h, lv.weight_mu, lv.bias_mu)?;
            if idx < last {
                h = g.relu(h)?;
            }
        }
        Ok(h)
    }

    /// Logits for `x` without recording gradients. `sample_seed` selects the weight
    /// sample for mean-field models.
    pub fn logits(&self, x: &Tensor, sample_seed: u64) -> Result<Tensor> {
        let mut g = Graph::new();
        let stochastic = self.is_stochastic();
        let vars = ModelVars {
            layers: self
                .layers
                .iter()
                .map(|l| LayerVars {
                    weight_mu: g.constant(l.weight_mu.clone()),
                    bias_mu: g.constant(l.bias_mu.clone()),
                    weight_rho: stochastic.then(|| g.constant(l.weight_rho.clone())),
                    bias_rho: stochastic.then(|| g.constant(l.bias_rho.clone())),
                })
                .collect(),
        };
        let xv = g.constant(x.clone());
        let out = self.sample_forward(&mut g, &vars, xv, sample_seed)?;
        Ok(g.value(out).clone())
    }

    /// Logits with weights at `mu`.
    pub fn mean_logits(&self, x: &Tensor) -> Result<Tensor> {
        let mut point = self.clone();
        point.posterior = Posterior::Point;
        point.logits(x, 0)
    }

    /// `sum KL(N(mu, sigma^2) || N(m, s^2))` over every weight and bias, as a graph node.
    pub fn kl_to_prior(&self, g: &mut Graph, vars: &ModelVars) -> Result<Var> {
        let mut terms = Vec::new();
        for (layer, lv) in self.layers.iter().zip(&vars.layers) {
            let (Some(w_rho), Some(b_rho)) = (lv.weight_rho, lv.bias_rho) else {
                return Err(Error::invalid("KL needs a mean-field model"));
            };
            terms.push(gaussian_kl(g, lv.weight_mu, w_rho, &layer.prior_weight_mean, layer.prior_std)?);
            terms.push(gaussian_kl(g, lv.bias_mu, b_rho, &layer.prior_bias_mean, layer.prior_std)?);
        }
        g.add_all(&terms)
    }

    pub fn kl_value(&self) -> f64 {
        self.layers.iter().map(VariationalLinear::kl_value).sum()
    }

    /// Empirical Bayes initialisation from point-estimate weights, given per layer as
    /// `(weight [out, in], bias [out])`: `mu <- w`, `rho <- ln(e^{delta |w|} - 1)`,
    /// prior `N(w, 1)`. `|w|` is clamped below at [`MIN_ABS_MLE`].
    pub fn empirical_bayes_init(&mut self, mle: &[(Tensor, Tensor)], delta: f64) -> Result<()> {
        if !(delta > 0.0) {
            return Err(Error::invalid("delta must be positive"));
        }
        if mle.len() != self.layers.len() {
            return Err(Error::shape(
                "empirical_bayes_init",
                format!("{} layers, {} MLE tensors", self.layers.len(), mle.len()),
            ));
        }
        for (layer, (w, b)) in self.layers.iter().zip(mle) {
            if w.shape() != layer.weight_mu.shape() || b.shape() != layer.bias_mu.shape() {
                return Err(Error::shape("empirical_bayes_init", "MLE shapes do not match model"));
            }
        }
        let rho_of = |t: &Tensor| t.map(|w| inverse_softplus(delta * w.abs().max(MIN_ABS_MLE)));
        for (layer, (w, b)) in self.layers.iter_mut().zip(mle) {
            layer.weight_mu = w.clone();
            layer.bias_mu = b.clone();
            layer.weight_rho = rho_of(w);
            layer.bias_rho = rho_of(b);
            layer.prior_weight_mean = w.clone();
            layer.prior_bias_mean = b.clone();
            layer.prior_std = 1.0;
        }
        self.posterior = Posterior::MeanField;
        Ok(())
    }

    /// Point-estimate weights `(weight_mu, bias_mu)` per layer.
    pub fn mean_weights(&self) -> Vec<(Tensor, Tensor)> {
        self.layers
            .iter()
            .map(|l| (l.weight_mu.clone(), l.bias_mu.clone()))
            .collect()
    }
}

fn reparameterize(g: &mut Graph, mu: Var, rho: Var, eps: Var) -> Result<Var> {
    let sigma = g.softplus(rho)?;
    let spread = g.mul(sigma, eps)?;
    g.add(mu, spread)
}

/// `h @ w^T + b`.
fn affine(g: &mut Graph, h: Var, w: Var, b: Var) -> Result<Var> {
    let wt = g.transpose(w)?;
    let z = g.matmul(h, wt)?;
    g.add_row(z, b)
}

fn gaussian_kl(g: &mut Graph, mu: Var, rho: Var, prior_mean: &Tensor, prior_std: f64) -> Result<Var> {
    let n = prior_mean.len() as f64;
    let m = g.constant(prior_mean.clone());
    let sigma = g.softplus(rho)?;
    let log_sigma = g.log(sigma)?;
    let var = g.square(sigma)?;
    let diff = g.sub(mu, m)?;
    let diff2 = g.square(diff)?;
    let num = g.add(var, diff2)?;
    let quad = g.scale(num, 1.0 / (2.0 * prior_std * prior_std))?;
    let per = g.sub(quad, log_sigma)?;
    let total = g.sum(per)?;
    g.add_scalar(total, n * (prior_std.ln() - 0.5))
}

/// Current checkpoint schema version.
pub const FORMAT_VERSION: u32 = 1;

/// One layer as stored on disk. `mu`, `rho` and `prior_mean` hold the `out x in`
/// weights row-major followed by the `out` biases. Point-estimate networks store
/// empty `rho` and `prior_mean` arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerRecord {
    pub mu: Vec<f64>,
    pub rho: Vec<f64>,
    pub prior_mean: Vec<f64>,
    pub prior_std: f64,
    #[serde(rename = "in")]
    pub in_dim: usize,
    pub out: usize,
}

/// JSON checkpoint shared by the trainer, calibration and evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub layers: Vec<LayerRecord>,
    pub class_count: usize,
    pub u_th: Option<f64>,
    pub temperature: f64,
}

fn concat(w: &Tensor, b: &Tensor) -> Vec<f64> {
    w.data().iter().chain(b.data()).copied().collect()
}

impl Checkpoint {
    pub fn from_model(model: &BnnModel, u_th: Option<f64>, temperature: f64) -> Self {
        let point = !model.is_stochastic();
        let layers = model
            .layers
            .iter()
            .map(|l| LayerRecord {
                mu: concat(&l.weight_mu, &l.bias_mu),
                rho: if point { Vec::new() } else { concat(&l.weight_rho, &l.bias_rho) },
                prior_mean: if point {
                    Vec::new()
                } else {
                    concat(&l.prior_weight_mean, &l.prior_bias_mean)
                },
                prior_std: l.prior_std,
                in_dim: l.in_dim,
                out: l.out_dim,
            })
            .collect();
        Self {
            format_version: FORMAT_VERSION,
            layers,
            class_count: model.class_count,
            u_th,
            temperature,
        }
    }

    pub fn to_model(&self) -> Result<BnnModel> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint format_version {}",
                self.format_version
            )));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Format("temperature must be positive".into()));
        }
        let point = self.layers.iter().all(|l| l.rho.is_empty());
        let posterior = if point { Posterior::Point } else { Posterior::MeanField };
        let mut layers = Vec::with_capacity(self.layers.len());
        for r in &self.layers {
            let (o, i) = (r.out, r.in_dim);
            let n = o * (i + 1);
            let split = |v: &[f64], what: &str| -> Result<(Tensor, Tensor)> {
                if v.len() != n {
                    return Err(Error::Format(format!(
                        "layer {i}->{o}: {what} has {} values, expected {n}",
                        v.len()
                    )));
                }
                Ok((
                    Tensor::new(vec![o, i], v[..o * i].to_vec())?,
                    Tensor::vector(v[o * i..].to_vec()),
                ))
            };
            let (weight_mu, bias_mu) = split(&r.mu, "mu")?;
            let ((weight_rho, bias_rho), (prior_weight_mean, prior_bias_mean)) = if point {
                (
                    (Tensor::full(&[o, i], DEFAULT_RHO), Tensor::full(&[o], DEFAULT_RHO)),
                    (Tensor::zeros(&[o, i]), Tensor::zeros(&[o])),
                )
            } else {
                (split(&r.rho, "rho")?, split(&r.prior_mean, "prior_mean")?)
            };
            layers.push(VariationalLinear {
                in_dim: i,
                out_dim: o,
                weight_mu,
                bias_mu,
                weight_rho,
                bias_rho,
                prior_weight_mean,
                prior_bias_mean,
                prior_std: r.prior_std,
            });
        }
        BnnModel::from_layers(layers, self.class_count, posterior)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_weight_layer(mu: f64, rho: f64, prior_mean: f64, prior_std: f64) -> VariationalLinear {
        VariationalLinear {
            in_dim: 1,
            out_dim: 1,
            weight_mu: Tensor::new(vec![1, 1], vec![mu]).unwrap(),
            bias_mu: Tensor::vector(vec![0.0]),
            weight_rho: Tensor::new(vec![1, 1], vec![rho]).unwrap(),
            bias_rho: Tensor::vector(vec![inverse_softplus(prior_std)]),
            prior_weight_mean: Tensor::new(vec![1, 1], vec![prior_mean]).unwrap(),
            prior_bias_mean: Tensor::vector(vec![0.0]),
            prior_std,
        }
    }

    #[test]
    fn kl_closed_forms() {
        // bias is N(0, 1) vs N(0, 1) in both cases and contributes zero
        let unit = inverse_softplus(1.0);
        let same = one_weight_layer(0.0, unit, 0.0, 1.0);
        assert!(same.kl_value().abs() < 1e-12);
        let shifted = one_weight_layer(1.0, unit, 0.0, 1.0);
        assert!((shifted.kl_value() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn kl_node_matches_closed_form() {
        let model = BnnModel::new(3, &[4], 2, Posterior::MeanField, 9).unwrap();
        let mut g = Graph::new();
        let vars = model.register(&mut g);
        let kl = model.kl_to_prior(&mut g, &vars).unwrap();
        let v = g.value(kl).item();
        assert!((v - model.kl_value()).abs() < 1e-9 * v.abs().max(1.0));
    }

    #[test]
    fn empirical_bayes_scale() {
        let mut model = BnnModel::new(1, &[], 2, Posterior::Point, 1).unwrap();
        let w = Tensor::new(vec![2, 1], vec![2.0, 0.0]).unwrap();
        let b = Tensor::vector(vec![-4.0, 0.5]);
        model.empirical_bayes_init(&[(w, b)], 0.5).unwrap();
        let l = &model.layers[0];
        let sig = l.weight_sigma();
        assert!((sig.data()[0] - 1.0).abs() < 1e-12);
        assert!((sig.data()[1] - 5e-7).abs() < 1e-18);
        assert!((softplus(l.bias_rho.data()[0]) - 2.0).abs() < 1e-12);
        assert_eq!(l.prior_weight_mean.data(), &[2.0, 0.0]);
        assert_eq!(l.prior_std, 1.0);
        assert_eq!(model.posterior, Posterior::MeanField);
        assert!(model.empirical_bayes_init(&[], 0.5).is_err());
        assert!(model.clone().empirical_bayes_init(&model.mean_weights(), 0.0).is_err());
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let model = BnnModel::new(3, &[4], 2, Posterior::MeanField, 0).unwrap();
        let x = Tensor::zeros(&[5, 2]);
        assert!(matches!(model.logits(&x, 1), Err(Error::Shape { .. })));
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let model = BnnModel::new(2, &[5, 3], 3, Posterior::MeanField, 77).unwrap();
        let ck = Checkpoint::from_model(&model, Some(0.123_456_789_012_345_67), 1.7);
        let text = ck.to_json().unwrap();
        let back = Checkpoint::from_json(&text).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_model().unwrap(), model);
        assert_eq!(back.to_json().unwrap(), text);

        let point = BnnModel::new(2, &[3], 2, Posterior::Point, 1).unwrap();
        let ck = Checkpoint::from_model(&point, None, 1.0);
        assert!(ck.layers[0].rho.is_empty());
        let back = ck.to_model().unwrap();
        assert_eq!(back.posterior, Posterior::Point);
        assert_eq!(back.mean_weights(), point.mean_weights());
    }

    #[test]
    fn checkpoint_rejects_bad_documents() {
        let model = BnnModel::new(2, &[3], 2, Posterior::MeanField, 1).unwrap();
        let mut ck = Checkpoint::from_model(&model, None, 1.0);
        ck.layers[0].mu.pop();
        assert!(ck.to_model().is_err());
        let text = r#"{"format_version":1,"layers":[],"class_count":2,"u_th":null,"temperature":1.0,"extra":1}"#;
        assert!(Checkpoint::from_json(text).is_err());
    }
}
