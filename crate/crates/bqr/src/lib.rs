//! Bayesian geoadditive quantile regression.
//!
//! The crate fits conditional quantiles of a response semiparametrically:
//! linear covariate effects under flat priors, penalized B-spline smooth
//! effects under second-order random walk priors, and a region-level
//! spatial effect under an intrinsic Gaussian Markov random field prior.
//! Estimation runs a Gibbs sampler on the asymmetric-Laplace working
//! likelihood, so every full conditional is closed form.
//!
//! Alongside the sampler there is a small descriptive-statistics toolkit
//! (Wilcoxon rank-sum tests, Spearman correlations, LOWESS smoothing),
//! synthetic-data generators with known ground truth, and a CLI front end
//! (`describe`, `fit`, `compare`, `simulate`).

pub mod basis;
pub mod cli;
pub mod descriptive;
pub mod engine;
pub mod error;
pub mod graph;
pub mod ingest;
pub mod synth;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
