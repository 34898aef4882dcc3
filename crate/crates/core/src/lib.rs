//! Approximate Bayesian inference for partially linear joint models of
//! longitudinal and right-censored survival data, cast as latent Gaussian
//! models.
//!
//! The latent field holds a second-order random walk for the non-linear
//! trajectory, fixed effects, shared intercept/slope random effects, an
//! optional frailty and the linear predictors. Given the hyperparameters the
//! field is fitted by a Gaussian approximation; the hyperparameter posterior
//! is a Laplace approximation explored on a grid or a central composite
//! design.

pub mod cli;
pub mod gmrf;
pub mod likelihoods;
pub mod inference;
pub mod model;
pub mod oracle;
pub mod predict;
pub mod priors;
pub mod simulate;
