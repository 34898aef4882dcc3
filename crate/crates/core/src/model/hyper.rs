use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError};
use crate::priors::{active_hyperparameters, HyperName, HyperTransform, Prior};

/// Hyperparameter values on their natural scale.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    values: BTreeMap<HyperName, f64>,
}

impl HyperParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: HyperName, value: f64) -> Self {
        self.set(name, value);
        self
    }

    pub fn set(&mut self, name: HyperName, value: f64) {
        self.values.insert(name, value);
    }

    pub fn get(&self, name: HyperName) -> Option<f64> {
        self.values.get(&name).copied()
    }

    pub fn require(&self, name: HyperName) -> Result<f64, ModelError> {
        let v = self.get(name).ok_or(ModelError::MissingHyperparameter(name))?;
        if !HyperTransform::new(name).in_domain(v) {
            return Err(ModelError::HyperparameterDomain { name, value: v });
        }
        Ok(v)
    }

    /// Weibull shape; 1 when absent (exponential baseline).
    pub fn kappa(&self) -> f64 {
        self.get(HyperName::Kappa).unwrap_or(1.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (HyperName, f64)> + '_ {
        self.values.iter().map(|(&k, &v)| (k, v))
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, _) in self.iter() {
            self.require(name)?;
        }
        Ok(())
    }
}

/// The free hyperparameters of a model and their unconstrained coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperSpace {
    free: Vec<HyperName>,
    transforms: Vec<HyperTransform>,
    priors: Vec<Prior>,
    fixed: HyperParams,
}

impl HyperSpace {
    pub fn new(config: &ModelConfig, has_long: bool, has_surv: bool) -> Self {
        let mut free = Vec::new();
        let mut transforms = Vec::new();
        let mut priors = Vec::new();
        let mut fixed = HyperParams::new();
        for name in active_hyperparameters(config, has_long, has_surv) {
            let prior = config.prior_for(name);
            match prior.fixed_value() {
                Some(v) => fixed.set(name, v),
                None => {
                    free.push(name);
                    transforms.push(HyperTransform::new(name));
                    priors.push(prior);
                }
            }
        }
        Self {
            free,
            transforms,
            priors,
            fixed,
        }
    }

    pub fn dim(&self) -> usize {
        self.free.len()
    }

    pub fn free_names(&self) -> &[HyperName] {
        &self.free
    }

    pub fn transforms(&self) -> &[HyperTransform] {
        &self.transforms
    }

    pub fn fixed(&self) -> &HyperParams {
        &self.fixed
    }

    pub fn to_params(&self, z: &[f64]) -> HyperParams {
        assert_eq!(z.len(), self.dim());
        let mut p = self.fixed.clone();
        for (t, &zi) in self.transforms.iter().zip(z) {
            p.set(t.name, t.backward(zi));
        }
        p
    }

    pub fn to_internal(&self, p: &HyperParams) -> Result<Vec<f64>, ModelError> {
        self.transforms
            .iter()
            .map(|t| p.require(t.name).map(|v| t.forward(v)))
            .collect()
    }

    /// `log π(z)` on the unconstrained scale, Jacobians included.
    pub fn log_prior(&self, z: &[f64]) -> f64 {
        self.priors
            .iter()
            .zip(&self.transforms)
            .zip(z)
            .map(|((p, t), &zi)| p.log_density_internal(t, zi))
            .sum()
    }

    pub fn start(&self) -> Vec<f64> {
        self.priors
            .iter()
            .zip(&self.free)
            .map(|(p, &n)| p.start_point(n))
            .collect()
    }
}
