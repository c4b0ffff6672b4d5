//! Accuracy-versus-uncertainty calibration (AvUC) for probabilistic classifiers.
//!
//! The crate is organised bottom-up:
//!
//! - [`diffcore`]: a small dense-tensor engine with reverse-mode differentiation.
//! - [`bayes`]: mean-field Gaussian variational layers, KL to the prior, checkpoints.
//! - [`avuc`]: AvU counts, the differentiable AvUC loss and the loss-calibrated ELBO.
//! - [`uncertainty`]: Monte Carlo predictive distributions, entropy, mutual information.
//! - [`optim`] and [`trainer`]: SGD/Adam and the SVI / SVI-AvUC / Vanilla training loops.
//! - [`posthoc`]: temperature scaling driven by NLL, AvUC or AU-AvUC.
//! - [`metrics`]: calibration, scoring-rule and shift-detection metrics.
//! - [`shiftlab`]: synthetic datasets, graded shifts and out-of-distribution sets.
//!
//! Data-parallel loops (Monte Carlo passes, batch evaluation) run on rayon when the
//! `parallel` feature is enabled and fall back to plain iterators otherwise; see [`par`].

pub mod avuc;
pub mod bayes;
pub mod diffcore;
mod error;
pub mod metrics;
pub mod optim;
pub mod par;
pub mod posthoc;
pub mod seed;
pub mod shiftlab;
pub mod trainer;
pub mod uncertainty;

pub use error::{Error, Result};
