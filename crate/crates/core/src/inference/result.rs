use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::explore::GridPoint;
use crate::model::{AssociationStructure, Baseline, RandomEffects};

/// Posterior summary of one latent coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentSummary {
    pub label: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
}

/// Posterior summary of a hyperparameter on its natural scale. `mode` is the
/// mode of the marginal density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperSummary {
    pub mode: f64,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
    pub fixed: bool,
}

impl HyperSummary {
    pub fn fixed(value: f64) -> Self {
        Self {
            mode: value,
            mean: value,
            sd: 0.0,
            q025: value,
            q50: value,
            q975: value,
            fixed: true,
        }
    }
}

/// Posterior of the smooth trajectory at the knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub knots: Vec<f64>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    /// `joint`, `longitudinal` or `survival`.
    pub part: String,
    pub strategy: String,
    pub names: Vec<String>,
    pub mode: Vec<f64>,
    pub neg_hessian: Vec<Vec<f64>>,
    pub points: Vec<GridPoint>,
    pub log_evidence: f64,
    pub evaluations: usize,
    pub newton_iterations_at_mode: usize,
}

/// Per-subject quantities used for prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSummary {
    pub id: String,
    /// Longitudinal covariates of the subject's first observation.
    pub long_covariates: Vec<f64>,
    pub surv_covariates: Vec<f64>,
    pub time: Option<f64>,
    pub event: Option<u8>,
    pub w: f64,
    pub v: f64,
    pub m: f64,
    /// Posterior covariance of `(w, v)`.
    pub wv_cov: [[f64; 2]; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub association: AssociationStructure,
    pub baseline: Baseline,
    pub random_effects: RandomEffects,
    pub frailty: bool,
    pub knots: Vec<f64>,
    pub long_names: Vec<String>,
    pub surv_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: ModelSummary,
    pub hyperparameters: BTreeMap<String, HyperSummary>,
    /// Latent summaries by block: `alpha`, `beta`, `gamma`, `w`, `v`, `m`.
    pub latent: BTreeMap<String, Vec<LatentSummary>>,
    pub trajectory: Option<TrajectorySummary>,
    pub subjects: Vec<SubjectSummary>,
    /// Posterior covariance of the spline coefficients.
    pub alpha_cov: Vec<Vec<f64>>,
    /// Posterior covariance of the longitudinal fixed effects.
    pub beta_cov: Vec<Vec<f64>>,
    pub log_marginal_likelihood: f64,
    pub grids: Vec<GridSummary>,
}

impl FitResult {
    pub fn hyper(&self, name: &str) -> Option<&HyperSummary> {
        self.hyperparameters.get(name)
    }

    pub fn latent_block(&self, block: &str) -> &[LatentSummary] {
        self.latent.get(block).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn subject(&self, id: &str) -> Option<&SubjectSummary> {
        self.subjects.iter().find(|s| s.id == id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fit result serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}
