//! Hyperparameter priors and the maps to the unconstrained scale.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AssociationStructure, Baseline, ModelConfig, RandomEffects};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PriorError {
    #[error("precision must be positive, got {0}")]
    NonPositiveTau(f64),
    #[error("prior precision must be positive, got {0}")]
    NonPositivePrecision(f64),
    #[error("PC prior needs u > 0 and alpha in (0, 1), got u = {u}, alpha = {alpha}")]
    InvalidPcPrior { u: f64, alpha: f64 },
    #[error("unknown hyperparameter `{0}` for this model")]
    UnknownHyperparameter(String),
    #[error("a PC prior only applies to precision parameters, not `{0}`")]
    PcOnNonPrecision(String),
    #[error("fixed value {value} is outside the domain of `{name}`")]
    FixedOutOfDomain { name: String, value: f64 },
}

/// Penalised-complexity prior on a precision `τ`: the standard deviation
/// `1/√τ` exceeds `u` with probability `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcPrecisionPrior {
    pub u: f64,
    pub alpha: f64,
}

impl PcPrecisionPrior {
    pub fn new(u: f64, alpha: f64) -> Result<Self, PriorError> {
        if !(u > 0.0 && u.is_finite() && alpha > 0.0 && alpha < 1.0) {
            return Err(PriorError::InvalidPcPrior { u, alpha });
        }
        Ok(Self { u, alpha })
    }

    /// Rate of the exponential prior on the standard deviation.
    pub fn lambda(&self) -> f64 {
        -self.alpha.ln() / self.u
    }

    /// Mode of the density of `log τ`, which is at `τ = λ²`.
    pub fn log_tau_mode(&self) -> f64 {
        2.0 * self.lambda().ln()
    }
}

impl Default for PcPrecisionPrior {
    fn default() -> Self {
        Self { u: 1.0, alpha: 0.01 }
    }
}

/// `log[(λ/2) τ^{-3/2} exp(−λ τ^{-1/2})]`, a Gumbel type-2 density.
pub fn pc_precision_logdensity(tau: f64, prior: &PcPrecisionPrior) -> Result<f64, PriorError> {
    if !(tau > 0.0) {
        return Err(PriorError::NonPositiveTau(tau));
    }
    let lambda = prior.lambda();
    Ok((lambda / 2.0).ln() - 1.5 * tau.ln() - lambda / tau.sqrt())
}

pub fn gaussian_logprior(x: f64, mean: f64, precision: f64) -> Result<f64, PriorError> {
    if !(precision > 0.0) {
        return Err(PriorError::NonPositivePrecision(precision));
    }
    Ok(0.5 * (precision / (2.0 * PI)).ln() - 0.5 * precision * (x - mean).powi(2))
}

/// Every hyperparameter the joint model can carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HyperName {
    TauEps,
    Kappa,
    TauAlpha,
    TauW,
    TauV,
    Rho,
    Nu,
    Nu1,
    Nu2,
    TauM,
}

impl HyperName {
    pub const ALL: [HyperName; 10] = [
        HyperName::TauEps,
        HyperName::Kappa,
        HyperName::TauAlpha,
        HyperName::TauW,
        HyperName::TauV,
        HyperName::Rho,
        HyperName::Nu,
        HyperName::Nu1,
        HyperName::Nu2,
        HyperName::TauM,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            HyperName::TauEps => "tau_eps",
            HyperName::Kappa => "kappa",
            HyperName::TauAlpha => "tau_alpha",
            HyperName::TauW => "tau_w",
            HyperName::TauV => "tau_v",
            HyperName::Rho => "rho",
            HyperName::Nu => "nu",
            HyperName::Nu1 => "nu1",
            HyperName::Nu2 => "nu2",
            HyperName::TauM => "tau_m",
        }
    }

    pub fn transform(&self) -> TransformKind {
        match self {
            HyperName::TauEps
            | HyperName::TauAlpha
            | HyperName::TauW
            | HyperName::TauV
            | HyperName::TauM
            | HyperName::Kappa => TransformKind::Log,
            HyperName::Rho => TransformKind::FisherZ,
            HyperName::Nu | HyperName::Nu1 | HyperName::Nu2 => TransformKind::Identity,
        }
    }

    pub fn is_precision(&self) -> bool {
        matches!(
            self,
            HyperName::TauEps | HyperName::TauAlpha | HyperName::TauW | HyperName::TauV | HyperName::TauM
        )
    }

    /// Name of the variance `1/τ` reported alongside a precision.
    pub fn variance_name(&self) -> Option<&'static str> {
        match self {
            HyperName::TauEps => Some("sigma2_eps"),
            HyperName::TauAlpha => Some("sigma2_alpha"),
            HyperName::TauW => Some("sigma2_w"),
            HyperName::TauV => Some("sigma2_v"),
            HyperName::TauM => Some("sigma2_m"),
            _ => None,
        }
    }

    pub fn default_prior(&self) -> Prior {
        match self {
            n if n.is_precision() => Prior::pc(PcPrecisionPrior::default()),
            HyperName::Kappa => Prior::Gaussian {
                mean: 0.0,
                precision: 0.01,
            },
            HyperName::Rho => Prior::Gaussian {
                mean: 0.0,
                precision: 0.15,
            },
            _ => Prior::Gaussian {
                mean: 0.0,
                precision: 0.001,
            },
        }
    }
}

impl fmt::Display for HyperName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HyperName {
    type Err = PriorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        HyperName::ALL
            .iter()
            .copied()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| PriorError::UnknownHyperparameter(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransformKind {
    /// `x ↦ log x` on `(0, ∞)`.
    Log,
    /// `ρ ↦ log((1+ρ)/(1−ρ))` on `(−1, 1)`.
    FisherZ,
    Identity,
}

/// Bijection between a hyperparameter's natural scale and the real line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperTransform {
    pub name: HyperName,
    pub kind: TransformKind,
}

impl HyperTransform {
    pub fn new(name: HyperName) -> Self {
        Self {
            name,
            kind: name.transform(),
        }
    }

    pub fn in_domain(&self, x: f64) -> bool {
        match self.kind {
            TransformKind::Log => x > 0.0 && x.is_finite(),
            TransformKind::FisherZ => x.abs() < 1.0,
            TransformKind::Identity => x.is_finite(),
        }
    }

    pub fn forward(&self, x: f64) -> f64 {
        match self.kind {
            TransformKind::Log => x.ln(),
            TransformKind::FisherZ => ((1.0 + x) / (1.0 - x)).ln(),
            TransformKind::Identity => x,
        }
    }

    pub fn backward(&self, z: f64) -> f64 {
        match self.kind {
            TransformKind::Log => z.exp(),
            TransformKind::FisherZ => (0.5 * z).tanh(),
            TransformKind::Identity => z,
        }
    }

    /// `log |d backward / dz|`.
    pub fn log_jacobian(&self, z: f64) -> f64 {
        match self.kind {
            TransformKind::Log => z,
            TransformKind::FisherZ => {
                let r = (0.5 * z).tanh();
                (0.5 * (1.0 - r * r)).ln()
            }
            TransformKind::Identity => 0.0,
        }
    }
}

/// Prior settings as they appear in the model configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Prior {
    PcPrecision { u: f64, alpha: f64 },
    /// Gaussian on the unconstrained scale.
    Gaussian { mean: f64, precision: f64 },
    /// Not estimated; held at `value` on the natural scale.
    Fixed { value: f64 },
}

impl Prior {
    pub fn pc(p: PcPrecisionPrior) -> Self {
        Prior::PcPrecision {
            u: p.u,
            alpha: p.alpha,
        }
    }

    pub fn validate(&self, name: HyperName) -> Result<(), PriorError> {
        match *self {
            Prior::PcPrecision { u, alpha } => {
                if !name.is_precision() {
                    return Err(PriorError::PcOnNonPrecision(name.to_string()));
                }
                PcPrecisionPrior::new(u, alpha).map(|_| ())
            }
            Prior::Gaussian { precision, .. } => {
                if !(precision > 0.0) {
                    return Err(PriorError::NonPositivePrecision(precision));
                }
                Ok(())
            }
            Prior::Fixed { value } => {
                if !HyperTransform::new(name).in_domain(value) {
                    return Err(PriorError::FixedOutOfDomain {
                        name: name.to_string(),
                        value,
                    });
                }
                Ok(())
            }
        }
    }

    pub fn fixed_value(&self) -> Option<f64> {
        match *self {
            Prior::Fixed { value } => Some(value),
            _ => None,
        }
    }

    /// Log-density of the unconstrained coordinate `z`, Jacobian included.
    pub fn log_density_internal(&self, transform: &HyperTransform, z: f64) -> f64 {
        match *self {
            Prior::PcPrecision { u, alpha } => {
                let pc = PcPrecisionPrior { u, alpha };
                match pc_precision_logdensity(transform.backward(z), &pc) {
                    Ok(v) => v + transform.log_jacobian(z),
                    Err(_) => f64::NEG_INFINITY,
                }
            }
            Prior::Gaussian { mean, precision } => {
                gaussian_logprior(z, mean, precision).unwrap_or(f64::NEG_INFINITY)
            }
            Prior::Fixed { .. } => 0.0,
        }
    }

    /// Deterministic optimiser start on the unconstrained scale.
    pub fn start_point(&self, name: HyperName) -> f64 {
        let t = HyperTransform::new(name);
        match *self {
            Prior::PcPrecision { u, alpha } => PcPrecisionPrior { u, alpha }.log_tau_mode(),
            Prior::Fixed { value } => t.forward(value),
            Prior::Gaussian { mean, .. } => match name {
                HyperName::Kappa => 0.0,
                HyperName::Rho => 0.0,
                HyperName::Nu | HyperName::Nu1 | HyperName::Nu2 => 0.01,
                _ => mean,
            },
        }
    }
}

/// Hyperparameters active for a configuration, in canonical order.
pub fn active_hyperparameters(config: &ModelConfig, has_long: bool, has_surv: bool) -> Vec<HyperName> {
    let mut names = Vec::new();
    if has_long {
        names.push(HyperName::TauEps);
    }
    if has_surv && config.baseline == Baseline::Weibull {
        names.push(HyperName::Kappa);
    }
    if has_long {
        names.push(HyperName::TauAlpha);
        names.push(HyperName::TauW);
        if config.random_effects == RandomEffects::IntSlope {
            names.push(HyperName::TauV);
            names.push(HyperName::Rho);
        }
    }
    if has_long && has_surv {
        match config.association {
            AssociationStructure::IntSlopeSeparate => {
                names.push(HyperName::Nu1);
                names.push(HyperName::Nu2);
            }
            _ => names.push(HyperName::Nu),
        }
    }
    if has_surv && config.frailty {
        names.push(HyperName::TauM);
    }
    names
}

/// Transforms for every hyperparameter of a full joint model under `config`.
///
/// Fails when the configuration names a prior for a hyperparameter the model
/// does not carry.
pub fn transform_registry(config: &ModelConfig) -> Result<Vec<HyperTransform>, PriorError> {
    let names = active_hyperparameters(config, true, true);
    for key in config.priors.keys() {
        let name: HyperName = key.parse()?;
        if !names.contains(&name) {
            return Err(PriorError::UnknownHyperparameter(key.clone()));
        }
    }
    Ok(names.into_iter().map(HyperTransform::new).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Composite Simpson on [a, b] with `n` (even) panels.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut acc = f(a) + f(b);
        for i in 1..n {
            let x = a + i as f64 * h;
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        acc * h / 3.0
    }

    fn pc_density(tau: f64) -> f64 {
        pc_precision_logdensity(tau, &PcPrecisionPrior::default()).unwrap().exp()
    }

    #[test]
    fn pc_value_at_one() {
        let lambda = -(0.01f64).ln();
        let v = pc_precision_logdensity(1.0, &PcPrecisionPrior::default()).unwrap();
        assert!((v - (lambda / 2.0 * (-lambda).exp()).ln()).abs() < 1e-14);
        assert!((v - 0.023_025_9f64.ln()).abs() < 1e-5);
        assert!((v + 3.771_138).abs() < 1e-6);
        assert!(matches!(
            pc_precision_logdensity(0.0, &PcPrecisionPrior::default()),
            Err(PriorError::NonPositiveTau(_))
        ));
    }

    #[test]
    fn pc_normalises_and_meets_tail_condition() {
        // Integrate on the log scale, where the integrand decays fast at both ends.
        let on_log = |z: f64| pc_density(z.exp()) * z.exp();
        let total = simpson(on_log, -12.0, 60.0, 200_000);
        assert!((total - 1.0).abs() < 1e-6, "{total}");
        let below_one = simpson(on_log, -12.0, 0.0, 100_000);
        assert!((below_one - 0.01).abs() < 1e-6, "{below_one}");
    }

    #[test]
    fn gaussian_prior() {
        assert!((gaussian_logprior(0.0, 0.0, 1.0).unwrap() + 0.918_938_533_204_672_7).abs() < 1e-12);
        let at_mean = gaussian_logprior(1.3, 1.3, 4.0).unwrap();
        for dx in [-0.5, -1e-3, 1e-3, 0.5] {
            assert!(gaussian_logprior(1.3 + dx, 1.3, 4.0).unwrap() < at_mean);
        }
        let expect = 0.5 * (0.001 / (2.0 * PI)).ln() - 0.5 * 0.001 * 4.0;
        assert!((gaussian_logprior(2.0, 0.0, 0.001).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn transform_fixed_points_and_round_trip() {
        let rho = HyperTransform::new(HyperName::Rho);
        assert_eq!(rho.forward(0.0), 0.0);
        assert_eq!(rho.backward(0.0), 0.0);
        let tau = HyperTransform::new(HyperName::TauAlpha);
        assert!((tau.forward(3f64.exp()) - 3.0).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut worst: f64 = 0.0;
        for name in [HyperName::TauEps, HyperName::Rho, HyperName::Nu, HyperName::Kappa] {
            let t = HyperTransform::new(name);
            for _ in 0..1000 {
                let x = match t.kind {
                    TransformKind::Log => rng.random_range(1e-3..1e3),
                    TransformKind::FisherZ => rng.random_range(-0.999..0.999),
                    TransformKind::Identity => rng.random_range(-50.0..50.0),
                };
                worst = worst.max((t.backward(t.forward(x)) - x).abs() / x.abs().max(1.0));
            }
        }
        assert!(worst < 1e-12, "{worst}");
    }

    #[test]
    fn change_of_variables_preserves_mass() {
        // P(τ in [e², e⁴]) on both scales.
        let t = HyperTransform::new(HyperName::TauAlpha);
        let prior = Prior::pc(PcPrecisionPrior::default());
        let natural = simpson(pc_density, 2f64.exp(), 4f64.exp(), 200_000);
        let internal = simpson(|z| prior.log_density_internal(&t, z).exp(), 2.0, 4.0, 20_000);
        assert!((natural - internal).abs() < 1e-6);

        let r = HyperTransform::new(HyperName::Rho);
        let on_z = simpson(
            |z| gaussian_logprior(z, 0.0, 0.15).unwrap().exp(),
            r.forward(-0.3),
            r.forward(0.6),
            20_000,
        );
        let on_rho = simpson(
            |x| (gaussian_logprior(r.forward(x), 0.0, 0.15).unwrap() - r.log_jacobian(r.forward(x))).exp(),
            -0.3,
            0.6,
            20_000,
        );
        assert!((on_z - on_rho).abs() < 1e-6);
    }

    #[test]
    fn transforms_are_monotone() {
        for name in [HyperName::TauW, HyperName::Rho, HyperName::Nu2] {
            let t = HyperTransform::new(name);
            let mut prev = f64::NEG_INFINITY;
            for k in -40..=40 {
                let v = t.backward(k as f64 * 0.25);
                assert!(v > prev);
                prev = v;
            }
        }
    }

    #[test]
    fn registry_rejects_unknown_names() {
        let mut config = ModelConfig::default();
        config.priors.insert("nu1".into(), Prior::Fixed { value: 0.0 });
        assert!(matches!(
            transform_registry(&config),
            Err(PriorError::UnknownHyperparameter(_))
        ));
        config.association = AssociationStructure::IntSlopeSeparate;
        let names: Vec<_> = transform_registry(&config).unwrap().iter().map(|t| t.name).collect();
        assert!(names.contains(&HyperName::Nu1) && names.contains(&HyperName::Nu2));
        assert!(!names.contains(&HyperName::Nu));
        assert!("sigma".parse::<HyperName>().is_err());
    }
}
