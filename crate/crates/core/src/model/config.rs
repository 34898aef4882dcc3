//! Model configuration as read from the JSON model file.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::priors::{active_hyperparameters, HyperName, Prior};

/// How the shared effects `(w, v)` enter the survival predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AssociationStructure {
    /// `ν w`
    #[serde(rename = "eq4")]
    InterceptOnly,
    /// `ν v s`
    #[serde(rename = "eq5")]
    SlopeOnly,
    /// `ν (w + v s)`
    #[serde(rename = "eq6")]
    IntSlopeShared,
    /// `ν₁ w + ν₂ v s`
    #[serde(rename = "eq7")]
    IntSlopeSeparate,
}

impl AssociationStructure {
    pub fn nu_arity(&self) -> usize {
        match self {
            AssociationStructure::IntSlopeSeparate => 2,
            _ => 1,
        }
    }

    pub fn uses_slope(&self) -> bool {
        !matches!(self, AssociationStructure::InterceptOnly)
    }

    pub fn uses_intercept(&self) -> bool {
        !matches!(self, AssociationStructure::SlopeOnly)
    }

    pub fn nu_names(&self) -> &'static [HyperName] {
        match self {
            AssociationStructure::IntSlopeSeparate => &[HyperName::Nu1, HyperName::Nu2],
            _ => &[HyperName::Nu],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    Weibull,
    /// Weibull with `κ = 1`.
    Exponential,
}

/// Subject-level random effects in the longitudinal predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RandomEffects {
    /// Correlated intercept and slope `w + v t`.
    IntSlope,
    /// Intercept `w` only.
    Intercept,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplineConfig {
    pub n_knots: usize,
    pub scaled: bool,
    /// Explicit knot locations; overrides `n_knots` when present.
    pub knots: Option<Vec<f64>>,
}

impl Default for SplineConfig {
    fn default() -> Self {
        Self {
            n_knots: 25,
            scaled: true,
            knots: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntegrationStrategy {
    /// Product grid up to 4 free hyperparameters, composite design above.
    Auto,
    Grid,
    Ccd,
    /// Mode only.
    Eb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub strategy: IntegrationStrategy,
    /// Grid spacing in standardised coordinates.
    pub step: f64,
    /// Points this many log-units below the mode are dropped.
    pub drop: f64,
    /// Radius multiplier of the composite design.
    pub ccd_f0: f64,
    pub hessian_step: f64,
    /// Evaluation budget of one simplex run.
    pub max_evaluations: usize,
    /// Simplex termination on the spread of objective values.
    pub tolerance: f64,
    /// Simplex restarts from the best vertex.
    pub max_restarts: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            strategy: IntegrationStrategy::Auto,
            step: 0.75,
            drop: 6.0,
            ccd_f0: 1.1,
            hessian_step: 1e-3,
            max_evaluations: 300,
            tolerance: 1e-6,
            max_restarts: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub association: AssociationStructure,
    pub baseline: Baseline,
    pub random_effects: RandomEffects,
    pub spline: SplineConfig,
    pub frailty: bool,
    /// Per-hyperparameter overrides keyed by name (`tau_eps`, `nu1`, ...).
    pub priors: BTreeMap<String, Prior>,
    /// Prior precision of the fixed effects and of the spline's null space.
    pub fixed_effects_precision: f64,
    pub grid: GridConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            association: AssociationStructure::IntSlopeShared,
            baseline: Baseline::Weibull,
            random_effects: RandomEffects::IntSlope,
            spline: SplineConfig::default(),
            frailty: false,
            priors: BTreeMap::new(),
            fixed_effects_precision: 1e-3,
            grid: GridConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let config: ModelConfig =
            serde_json::from_str(text).map_err(|e| ModelError::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.random_effects == RandomEffects::Intercept && self.association.uses_slope() {
            return Err(ModelError::InvalidConfig(format!(
                "association {:?} needs a random slope",
                self.association
            )));
        }
        if !(self.fixed_effects_precision > 0.0) {
            return Err(ModelError::InvalidConfig(
                "fixed_effects_precision must be positive".into(),
            ));
        }
        if self.spline.knots.is_none() && self.spline.n_knots < 3 {
            return Err(ModelError::InvalidConfig("spline needs at least 3 knots".into()));
        }
        let g = &self.grid;
        if !(g.step > 0.0 && g.drop > 0.0 && g.ccd_f0 > 1.0 && g.hessian_step > 0.0) {
            return Err(ModelError::InvalidConfig("invalid grid settings".into()));
        }
        let active = active_hyperparameters(self, true, true);
        for (key, prior) in &self.priors {
            let name: HyperName = key.parse()?;
            if !active.contains(&name) {
                return Err(crate::priors::PriorError::UnknownHyperparameter(key.clone()).into());
            }
            prior.validate(name)?;
        }
        Ok(())
    }

    pub fn prior_for(&self, name: HyperName) -> Prior {
        self.priors
            .get(name.as_str())
            .copied()
            .unwrap_or_else(|| name.default_prior())
    }

    /// Whether the association term is identically zero.
    pub fn association_is_zero(&self) -> bool {
        self.association
            .nu_names()
            .iter()
            .all(|n| self.prior_for(*n).fixed_value() == Some(0.0))
    }
}
