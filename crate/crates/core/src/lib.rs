//! Natural Posterior Network.
//!
//! An encoder maps each input to a low-dimensional latent vector. A linear
//! decoder turns the latent into a parameter update `chi` for the conjugate
//! prior of an exponential-family target, while a normalizing flow on the
//! latent space turns it into an evidence pseudo-count `n`. The prior and the
//! per-input update are combined in closed form, giving a full posterior for
//! every input: the posterior evidence measures epistemic uncertainty and
//! collapses back to the prior far away from the training data.
//!
//! Module map:
//!
//! - [`tensor`]: dense matrices, a reverse-mode tape, and lgamma/digamma/trigamma.
//! - [`expfam`]: conjugate-prior algebra for Categorical, Normal and Poisson targets.
//! - [`flows`]: radial and masked autoregressive flows over a standard Normal base.
//! - [`model`]: the network, its Bayesian loss, ensembles and checkpoints.
//! - [`training`]: Adam, the warm-up / joint / fine-tune schedule and grid search.
//! - [`data`]: CSV ingestion, standardization, splits, toys and OOD construction.
//! - [`metrics`]: accuracy, RMSE, Brier, calibration, AUC-PR/ROC, confidence decay.
//! - [`experiment`]: manifests and the train/eval/sweep/plot drivers used by the CLI.

pub mod data;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod expfam;
pub mod flows;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod params;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use exec::Exec;
