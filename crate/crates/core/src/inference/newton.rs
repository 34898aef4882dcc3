//! Gaussian approximation of `π(x | y, θ)` by damped Newton iterations.

use std::f64::consts::PI;

use super::InferenceError;
use crate::gmrf::Factorization;
use crate::model::{HyperParams, JointModel, LikTerm, PriorPrecision};

pub const NEWTON_TOLERANCE: f64 = 1e-8;
pub const NEWTON_MAX_ITERATIONS: usize = 50;
const MAX_HALVINGS: usize = 40;
const STALL_TOLERANCE: f64 = 1e-5;

/// Gaussian approximation at the conditional mode.
#[derive(Debug, Clone)]
pub struct GaussianApprox {
    pub theta: HyperParams,
    pub mode: Vec<f64>,
    /// Factor of `Q(θ) + C` at the mode, `C` the negated likelihood curvature.
    pub precision_factor: Factorization,
    /// `log π(x* | θ)`.
    pub log_latent: f64,
    /// `log π(y | x*, θ)`.
    pub log_likelihood: f64,
    /// `log π_G(x* | y, θ) = ½ log|Q + C| − (n/2) log 2π`.
    pub log_normalizer: f64,
    /// Newton updates needed to converge.
    pub iterations: usize,
}

impl GaussianApprox {
    pub fn dim(&self) -> usize {
        self.mode.len()
    }
}

fn objective(prior: &PriorPrecision, x: &[f64], terms: &[LikTerm]) -> f64 {
    -0.5 * prior.quadratic_form(x) + terms.iter().map(|t| t.value).sum::<f64>()
}

fn terms_at(model: &JointModel, theta: &HyperParams, x: &[f64]) -> Result<Vec<LikTerm>, InferenceError> {
    Ok(model.lik_terms(theta, model.eta(x))?)
}

/// Newton iterations from `start` (zeros when `None`) until the sup-norm of
/// the update drops below [`NEWTON_TOLERANCE`].
pub fn gaussian_approximation_from(
    model: &JointModel,
    theta: &HyperParams,
    start: Option<&[f64]>,
) -> Result<GaussianApprox, InferenceError> {
    let prior = model.prior_precision(theta)?;
    let n = model.dim();
    let eta0 = model.layout().eta_offset();
    let mut x = match start {
        Some(s) if s.len() == n => s.to_vec(),
        _ => vec![0.0; n],
    };
    let mut terms = terms_at(model, theta, &x)?;
    let mut f = objective(&prior, &x, &terms);

    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..NEWTON_MAX_ITERATIONS {
        let curvature: Vec<f64> = terms.iter().map(|t| -t.hess).collect();
        let h = model.posterior_precision(&prior, &curvature);
        let factor = model.symbolic(&h).factor(&h)?;
        let mut rhs = vec![0.0; n];
        for (r, t) in terms.iter().enumerate() {
            rhs[eta0 + r] = curvature[r] * x[eta0 + r] + t.grad;
        }
        let target = factor.solve(&rhs);
        if target.iter().any(|v| !v.is_finite()) {
            return Err(InferenceError::NewtonDiverged);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand: Vec<f64> = x.iter().zip(&target).map(|(a, b)| a + step * (b - a)).collect();
            if let Ok(cand_terms) = terms_at(model, theta, &cand) {
                let fc = objective(&prior, &cand, &cand_terms);
                if fc.is_finite() && fc >= f - 1e-10 * f.abs().max(1.0) {
                    accepted = Some((cand, cand_terms, fc));
                    break;
                }
            }
            step *= 0.5;
        }
        let (cand, cand_terms, fc) = accepted.ok_or(InferenceError::NewtonDiverged)?;
        let delta = x
            .iter()
            .zip(&cand)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        // Near the mode the augmentation precision puts a rounding floor of
        // about 1e-7 under the update; accept once the objective is flat.
        let stalled = delta < STALL_TOLERANCE && (fc - f).abs() <= 1e-12 * f.abs().max(1.0);
        x = cand;
        terms = cand_terms;
        f = fc;
        if delta < NEWTON_TOLERANCE || stalled {
            converged = true;
            break;
        }
        iterations += 1;
    }
    if !converged {
        log::debug!("Newton did not converge at {theta:?}");
        return Err(InferenceError::MaxIterations);
    }

    let curvature: Vec<f64> = terms.iter().map(|t| -t.hess).collect();
    let h = model.posterior_precision(&prior, &curvature);
    let factor = model.symbolic(&h).factor(&h)?;
    let log_latent = model.log_latent_density(&prior, &x);
    let log_likelihood = terms.iter().map(|t| t.value).sum();
    let log_normalizer = 0.5 * factor.log_determinant() - 0.5 * n as f64 * (2.0 * PI).ln();
    Ok(GaussianApprox {
        theta: theta.clone(),
        mode: x,
        precision_factor: factor,
        log_latent,
        log_likelihood,
        log_normalizer,
        iterations,
    })
}

pub fn gaussian_approximation(model: &JointModel, theta: &HyperParams) -> Result<GaussianApprox, InferenceError> {
    gaussian_approximation_from(model, theta, None)
}
