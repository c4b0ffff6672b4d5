//! First-order optimizers over a fixed, ordered list of parameter tensors.

use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OptimizerKind {
    Sgd {
        #[serde(default)]
        momentum: f64,
    },
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_adam_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_adam_eps(),
        }
    }

    pub fn sgd(momentum: f64) -> Self {
        OptimizerKind::Sgd { momentum }
    }
}

impl Default for OptimizerKind {
    fn default() -> Self {
        Self::adam()
    }
}

/// Optimizer with per-parameter state, created lazily on the first step.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    steps: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Self {
            kind,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Apply one update. `params` and `grads` must keep the same order across calls.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        if !(lr > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if params.len() != grads.len() {
            return Err(Error::shape("optimizer", "parameter and gradient counts differ"));
        }
        if self.first.is_empty() {
            self.first = grads.iter().map(|g| Tensor::zeros(g.shape())).collect();
            self.second = self.first.clone();
        } else if self.first.len() != params.len() {
            return Err(Error::shape("optimizer", "parameter count changed between steps"));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::shape("optimizer", format!("{:?} vs {:?}", p.shape(), g.shape())));
            }
        }
        self.steps += 1;
        match self.kind {
            OptimizerKind::Sgd { momentum } => {
                for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.first) {
                    for ((w, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                        *vi = momentum * *vi + gi;
                        *w -= lr * *vi;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
                    for (((w, &gi), mi), vi) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.data_mut())
                        .zip(v.data_mut())
                    {
                        *mi = beta1 * *mi + (1.0 - beta1) * gi;
                        *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                        let mhat = *mi / c1;
                        let vhat = *vi / c2;
                        *w -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_sgd_step() {
        let mut p = Tensor::vector(vec![1.0, -2.0]);
        let g = Tensor::vector(vec![0.5, 4.0]);
        let mut opt = Optimizer::new(OptimizerKind::sgd(0.0));
        opt.step(&mut [&mut p], &[g], 0.1).unwrap();
        assert_eq!(p.data(), &[1.0 - 0.05, -2.0 - 0.4]);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        for scale in [1e-4, 1.0, 1e4] {
            let mut p = Tensor::vector(vec![0.0]);
            let mut opt = Optimizer::new(OptimizerKind::adam());
            opt.step(&mut [&mut p], &[Tensor::vector(vec![scale])], 0.01).unwrap();
            assert!((p.item() + 0.01).abs() < 1e-6, "scale {scale}: {}", p.item());
        }
    }

    #[test]
    fn quadratic_bowl_converges() {
        // f(x) = 0.5 * sum a_i (x_i - c_i)^2. Adam's fixed-lr oscillation decays
        // slowly, so it gets more steps.
        let a = [1.0, 3.0, 0.5];
        let c = [2.0, -1.0, 0.25];
        for kind in [OptimizerKind::sgd(0.5), OptimizerKind::adam()] {
            let mut x = Tensor::vector(vec![0.0; 3]);
            let mut opt = Optimizer::new(kind);
            let (lr, steps) = if matches!(kind, OptimizerKind::Sgd { .. }) { (0.2, 100) } else { (0.1, 1000) };
            for _ in 0..steps {
                let g: Vec<f64> = (0..3).map(|i| a[i] * (x.data()[i] - c[i])).collect();
                opt.step(&mut [&mut x], &[Tensor::vector(g)], lr).unwrap();
            }
            for i in 0..3 {
                assert!((x.data()[i] - c[i]).abs() < 1e-4, "{kind:?}: {:?}", x.data());
            }
        }
    }

    #[test]
    fn rejects_bad_lr() {
        let mut p = Tensor::vector(vec![0.0]);
        let mut opt = Optimizer::new(OptimizerKind::adam());
        assert!(opt.step(&mut [&mut p], &[Tensor::vector(vec![1.0])], 0.0).is_err());
    }
}
