//! Laplace approximation of the hyperparameter posterior.

use super::newton::{gaussian_approximation_from, GaussianApprox};
use super::InferenceError;
use crate::model::{HyperParams, JointModel};

/// One evaluation of `log π(θ | y)` on the unconstrained scale.
#[derive(Debug, Clone)]
pub struct ThetaEval {
    pub z: Vec<f64>,
    pub log_posterior: f64,
    pub approx: GaussianApprox,
}

/// `log π(z) + log π(x*|θ) + log π(y|x*,θ) − log π_G(x*|y,θ)` at the
/// unconstrained point `z`, up to the normalising constant of `π(θ | y)`.
pub fn evaluate(model: &JointModel, z: &[f64], start: Option<&[f64]>) -> Result<ThetaEval, InferenceError> {
    let space = model.space();
    if z.iter().any(|v| !v.is_finite()) {
        return Err(InferenceError::NonFinitePosterior);
    }
    let theta = space.to_params(z);
    let approx = gaussian_approximation_from(model, &theta, start)?;
    let log_posterior =
        space.log_prior(z) + approx.log_latent + approx.log_likelihood - approx.log_normalizer;
    if log_posterior.is_nan() {
        return Err(InferenceError::NonFinitePosterior);
    }
    Ok(ThetaEval {
        z: z.to_vec(),
        log_posterior,
        approx,
    })
}

/// Laplace estimate of `log π(θ | y)` for the free hyperparameters on the
/// unconstrained scale (Jacobians of the transforms included).
pub fn log_theta_posterior(model: &JointModel, theta: &HyperParams) -> Result<f64, InferenceError> {
    let z = model.space().to_internal(theta)?;
    Ok(evaluate(model, &z, None)?.log_posterior)
}

/// The same density expressed on the natural scale of the hyperparameters.
pub fn log_theta_posterior_natural(model: &JointModel, theta: &HyperParams) -> Result<f64, InferenceError> {
    let z = model.space().to_internal(theta)?;
    let jac: f64 = model
        .space()
        .transforms()
        .iter()
        .zip(&z)
        .map(|(t, &zi)| t.log_jacobian(zi))
        .sum();
    Ok(evaluate(model, &z, None)?.log_posterior - jac)
}
