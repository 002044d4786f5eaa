//! Projection predictive variable selection for Gaussian process regression.
//!
//! A full GP (constant + squared-exponential ARD covariance) is fitted on all
//! inputs, by type-II maximum likelihood or by HMC over the hyperparameters.
//! Its latent posterior at the training inputs is then projected onto GPs
//! restricted to input subsets by minimizing a Gaussian KL divergence over the
//! submodel hyperparameters, and inputs are ranked by how much predictive
//! information their removal loses.

// `!(x > 0.0)` guards deliberately reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod gp;
pub mod harness;
pub mod hmc;
pub mod kernel;
pub mod linalg;
pub mod optim;
pub mod par;
pub mod projection;
pub mod search;

pub use data::{Dataset, Standardization};
pub use error::{Error, Result};
pub use gp::{fit_ml2, latent_posterior, log_marginal_likelihood, mlpd, predict, LatentPosterior, Ml2Fit, Prediction};
pub use kernel::{cov_grad, full_cov, se_ard, CovMatrix, HyperParams, ParamId};
pub use projection::{gaussian_kl, project, project_linear, LinearProjection, Reference, Submodel};
