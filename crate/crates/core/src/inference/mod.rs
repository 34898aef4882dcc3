//! Approximate Bayesian inference: nested Laplace approximations with a
//! numerical integration over the hyperparameters.

mod explore;
mod laplace;
mod marginals;
mod newton;
mod result;

use std::collections::{BTreeMap, HashMap};

use log::info;
use thiserror::Error;

pub use explore::{factorial_design, nelder_mead, optimize_theta, GridPoint, NelderMeadResult, ThetaGrid};
pub use laplace::{evaluate, log_theta_posterior, log_theta_posterior_natural, ThetaEval};
pub use marginals::{marginals, mixture_cdf, mixture_moments, mixture_quantile, PartSummary};
pub use newton::{
    gaussian_approximation, gaussian_approximation_from, GaussianApprox, NEWTON_MAX_ITERATIONS,
    NEWTON_TOLERANCE,
};
pub use result::{
    FitResult, GridSummary, HyperSummary, LatentSummary, ModelSummary, SubjectSummary,
    TrajectorySummary,
};

use crate::gmrf::GmrfError;
use crate::model::{stack, JointData, JointModel, ModelConfig, ModelError, Response, StackedDesign};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Gmrf(#[from] GmrfError),
    #[error("Newton iterations diverged")]
    NewtonDiverged,
    #[error("Newton iterations did not converge")]
    MaxIterations,
    #[error("hyperparameter optimisation failed: {0}")]
    OptimizerFailed(String),
    #[error("the Hessian of the log posterior is not negative definite at the mode")]
    SingularHessian,
    #[error("no integration points retained")]
    EmptyGrid,
    #[error("non-finite log posterior")]
    NonFinitePosterior,
}

/// Fits the joint model. When the association is fixed at zero the two
/// sub-models are independent a posteriori and are fitted separately.
pub fn fit(data: &JointData, config: &ModelConfig) -> Result<FitResult, InferenceError> {
    config.validate()?;
    let design = stack(data, config)?;
    fit_design(design, config)
}

pub fn fit_design(design: StackedDesign, config: &ModelConfig) -> Result<FitResult, InferenceError> {
    let decouple = design.has_long() && design.has_surv() && config.association_is_zero();
    let parts = if decouple {
        info!("association fixed at zero: fitting the sub-models separately");
        vec![
            ("longitudinal", design.longitudinal_part()),
            ("survival", design.survival_part()),
        ]
    } else {
        vec![("joint", design.clone())]
    };
    let mut summaries = Vec::with_capacity(parts.len());
    for (name, part) in parts {
        let model = JointModel::from_design(part, config)?;
        let grid = optimize_theta(&model)?;
        info!(
            "{name}: {} hyperparameters, {} integration points, log evidence {:.6}",
            grid.names.len(),
            grid.points.len(),
            grid.log_evidence
        );
        summaries.push(marginals(&model, &grid, name)?);
    }
    Ok(assemble(&design, config, summaries))
}

fn assemble(design: &StackedDesign, config: &ModelConfig, parts: Vec<PartSummary>) -> FitResult {
    let mut hyperparameters = BTreeMap::new();
    let mut latent: BTreeMap<String, Vec<LatentSummary>> = BTreeMap::new();
    let mut alpha_cov = Vec::new();
    let mut beta_cov = Vec::new();
    let mut wv_cov: HashMap<String, [[f64; 2]; 2]> = HashMap::new();
    let mut grids = Vec::new();
    let mut log_marginal_likelihood = 0.0;
    for p in parts {
        hyperparameters.extend(p.hyper);
        for (k, v) in p.latent {
            latent.entry(k).or_default().extend(v);
        }
        if !p.alpha_cov.is_empty() {
            alpha_cov = p.alpha_cov;
        }
        if !p.beta_cov.is_empty() {
            beta_cov = p.beta_cov;
        }
        wv_cov.extend(p.wv_cov);
        log_marginal_likelihood += p.grid.log_evidence;
        grids.push(p.grid);
    }
    if design.has_surv() && design.has_long() {
        for name in config.association.nu_names() {
            if let Some(v) = config.prior_for(*name).fixed_value() {
                hyperparameters
                    .entry(name.as_str().to_string())
                    .or_insert_with(|| HyperSummary::fixed(v));
            }
        }
    }

    let trajectory = latent.get("alpha").map(|a| TrajectorySummary {
        knots: design.knots.clone(),
        mean: a.iter().map(|s| s.mean).collect(),
        lower: a.iter().map(|s| s.q025).collect(),
        upper: a.iter().map(|s| s.q975).collect(),
    });

    let lookup = |block: &str, label: &str| -> f64 {
        latent
            .get(block)
            .and_then(|v| v.iter().find(|s| s.label == label))
            .map_or(0.0, |s| s.mean)
    };
    let mut subjects: Vec<SubjectSummary> = design
        .subjects
        .iter()
        .map(|id| SubjectSummary {
            id: id.clone(),
            long_covariates: Vec::new(),
            surv_covariates: Vec::new(),
            time: None,
            event: None,
            w: lookup("w", &format!("w[{id}]")),
            v: lookup("v", &format!("v[{id}]")),
            m: lookup("m", &format!("m[{id}]")),
            wv_cov: wv_cov.get(id).copied().unwrap_or([[0.0; 2]; 2]),
        })
        .collect();
    let mut seen = vec![false; subjects.len()];
    for r in 0..design.n_rows() {
        let i = design.subject_index[r];
        match design.response[r] {
            Response::Gaussian { .. } => {
                if !seen[i] {
                    subjects[i].long_covariates = design.long_x(r);
                    seen[i] = true;
                }
            }
            Response::Survival { s, event } => {
                subjects[i].surv_covariates = design.surv_z(r);
                subjects[i].time = Some(s);
                subjects[i].event = Some(event);
            }
        }
    }

    FitResult {
        model: ModelSummary {
            association: config.association,
            baseline: config.baseline,
            random_effects: config.random_effects,
            frailty: config.frailty,
            knots: design.knots.clone(),
            long_names: design.long_names.clone(),
            surv_names: design.surv_names.clone(),
        },
        hyperparameters,
        latent,
        trajectory,
        subjects,
        alpha_cov,
        beta_cov,
        log_marginal_likelihood,
        grids,
    }
}
