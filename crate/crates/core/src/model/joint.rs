//! The compiled joint model: prior precision `Q(θ)` of the augmented latent
//! field, the likelihood terms, and the pieces of the joint log-density.
//!
//! The predictors are part of the latent field through `η = A(θ) x + e`
//! with `e ~ N(0, κ⁻¹ I)` and `κ =` [`AUGMENTATION_PRECISION`], so the
//! augmented precision is
//!
//! ```text
//!     [ Q_x + κ AᵀA   −κ Aᵀ ]
//!     [   −κ A         κ I  ]
//! ```
//!
//! whose determinant is `κ^{n_η} |Q_x|`.

use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::DMatrix;

use super::{
    build_mapping, layout_for, stack, BlockKind, HyperParams, HyperSpace, JointData,
    LatentLayout, ModelConfig, ModelError, RandomEffects, Response, StackedDesign,
};
use crate::gmrf::{
    generalized_log_det, null_space_basis, rw2_structure, scale_rw2, IntSlopeSpec, SparseMatrix,
    SparseSymMatrix, SymbolicCholesky,
};
use crate::likelihoods::{gaussian_loglik, weibull_loglik, LongObs, SurvObs};
use crate::priors::HyperName;

/// Precision of the predictor noise linking `η` to `A x`.
pub const AUGMENTATION_PRECISION: f64 = 1e6;

#[derive(Debug, Clone)]
struct AlphaPrior {
    structure: DMatrix<f64>,
    /// `δ U Uᵀ` with `U` an orthonormal basis of the null space.
    null_part: DMatrix<f64>,
    log_det_structure: f64,
}

/// `Q(θ)` with its log-determinant and the mapping it was built from.
#[derive(Debug, Clone)]
pub struct PriorPrecision {
    pub matrix: SparseSymMatrix,
    pub log_det: f64,
    pub mapping: SparseMatrix,
    /// Leading entries of `matrix` that come from the augmentation.
    pub augmentation_entries: usize,
}

impl PriorPrecision {
    /// `xᵀ Q x`, evaluated as `x_restᵀ Q_x x_rest + κ ‖η − A x_rest‖²` so the
    /// large augmentation terms never cancel against each other.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.matrix.dim());
        let n_x = self.mapping.ncols();
        let ax = self.mapping.mul_vec(&x[..n_x]);
        let aug: f64 = ax.iter().zip(&x[n_x..]).map(|(a, e)| (e - a).powi(2)).sum();
        let rest: f64 = self.matrix.entries()[self.augmentation_entries..]
            .iter()
            .map(|&(r, c, v)| if r == c { v * x[r] * x[r] } else { 2.0 * v * x[r] * x[c] })
            .sum();
        rest + AUGMENTATION_PRECISION * aug
    }
}

/// The three addends of the log joint density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogDensityParts {
    pub latent: f64,
    pub likelihood: f64,
    pub prior: f64,
}

impl LogDensityParts {
    pub fn total(&self) -> f64 {
        self.latent + self.likelihood + self.prior
    }
}

/// Per-row derivative information of the log-likelihood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LikTerm {
    pub value: f64,
    pub grad: f64,
    pub hess: f64,
}

#[derive(Debug)]
pub struct JointModel {
    config: ModelConfig,
    design: StackedDesign,
    layout: LatentLayout,
    space: HyperSpace,
    alpha: Option<AlphaPrior>,
    symbolic: OnceLock<SymbolicCholesky>,
}

impl Clone for JointModel {
    fn clone(&self) -> Self {
        let symbolic = OnceLock::new();
        if let Some(s) = self.symbolic.get() {
            let _ = symbolic.set(s.clone());
        }
        Self {
            config: self.config.clone(),
            design: self.design.clone(),
            layout: self.layout.clone(),
            space: self.space.clone(),
            alpha: self.alpha.clone(),
            symbolic,
        }
    }
}

impl JointModel {
    pub fn compile(data: &JointData, config: &ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let design = stack(data, config)?;
        Self::from_design(design, config)
    }

    pub fn from_design(design: StackedDesign, config: &ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = layout_for(&design, config);
        let space = HyperSpace::new(config, design.has_long(), design.has_surv());
        let alpha = if design.has_long() {
            for t in design.spline_time.iter().flatten() {
                super::interpolation_weights(&design.knots, *t)?;
            }
            let base = rw2_structure(&design.knots)?;
            let structure = if config.spline.scaled {
                scale_rw2(&base)?.matrix
            } else {
                base
            };
            let log_det_structure = generalized_log_det(&structure, &design.knots)?;
            let u = null_space_basis(&design.knots);
            Some(AlphaPrior {
                structure: structure.to_dense(),
                null_part: (&u * u.transpose()) * config.fixed_effects_precision,
                log_det_structure,
            })
        } else {
            None
        };
        Ok(Self {
            config: config.clone(),
            design,
            layout,
            space,
            alpha,
            symbolic: OnceLock::new(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn design(&self) -> &StackedDesign {
        &self.design
    }

    pub fn layout(&self) -> &LatentLayout {
        &self.layout
    }

    pub fn space(&self) -> &HyperSpace {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    /// Checks that every hyperparameter the model uses is present and valid.
    pub fn check_theta(&self, theta: &HyperParams) -> Result<(), ModelError> {
        theta.validate()?;
        for name in crate::priors::active_hyperparameters(
            &self.config,
            self.design.has_long(),
            self.design.has_surv(),
        ) {
            theta.require(name)?;
        }
        Ok(())
    }

    pub fn mapping(&self, theta: &HyperParams) -> Result<SparseMatrix, ModelError> {
        build_mapping(&self.design, &self.layout, &self.config, theta)
    }

    /// Assembles `Q(θ)` of the augmented field. The entry order depends only
    /// on the design, so all matrices from one model share a pattern.
    pub fn prior_precision(&self, theta: &HyperParams) -> Result<PriorPrecision, ModelError> {
        self.check_theta(theta)?;
        let l = &self.layout;
        let a = self.mapping(theta)?;
        let k = AUGMENTATION_PRECISION;
        let delta = self.config.fixed_effects_precision;
        let eta0 = l.eta_offset();
        let mut q = SparseSymMatrix::with_capacity(l.dim(), 16 * a.nrows() + l.dim())
            .map_err(ModelError::from)?;
        let mut log_det = l.n_eta() as f64 * k.ln();

        for r in 0..a.nrows() {
            q.push(eta0 + r, eta0 + r, k);
            let row: Vec<(usize, f64)> = a.row(r).collect();
            for (i, &(ci, vi)) in row.iter().enumerate() {
                q.push(eta0 + r, ci, -k * vi);
                for &(cj, vj) in &row[..=i] {
                    q.push(ci, cj, k * vi * vj);
                }
            }
        }

        let augmentation_entries = q.entries().len();

        if let Some(alpha) = &self.alpha {
            let tau = theta.require(HyperName::TauAlpha)?;
            let block = &alpha.structure * tau + &alpha.null_part;
            q.push_dense_block(l.block(BlockKind::Alpha).offset, &block);
            let n = block.nrows() as f64;
            log_det += (n - 2.0) * tau.ln() + alpha.log_det_structure + 2.0 * delta.ln();
        }

        for kind in [BlockKind::Beta, BlockKind::Gamma] {
            for i in l.range(kind) {
                q.push(i, i, delta);
                log_det += delta.ln();
            }
        }

        let n_w = l.block(BlockKind::W).len;
        if n_w > 0 {
            let tau_w = theta.require(HyperName::TauW)?;
            match self.config.random_effects {
                RandomEffects::IntSlope => {
                    let spec = IntSlopeSpec {
                        sigma_w: tau_w.powf(-0.5),
                        sigma_v: theta.require(HyperName::TauV)?.powf(-0.5),
                        rho: theta.require(HyperName::Rho)?,
                    };
                    let qu = spec.precision()?;
                    for i in 0..n_w {
                        let (wi, vi) = (l.index(BlockKind::W, i), l.index(BlockKind::V, i));
                        q.push(wi, wi, qu[(0, 0)]);
                        q.push(vi, wi, qu[(1, 0)]);
                        q.push(vi, vi, qu[(1, 1)]);
                    }
                    log_det += n_w as f64 * spec.log_det_precision();
                }
                RandomEffects::Intercept => {
                    for i in l.range(BlockKind::W) {
                        q.push(i, i, tau_w);
                    }
                    log_det += n_w as f64 * tau_w.ln();
                }
            }
        }

        let n_m = l.block(BlockKind::M).len;
        if n_m > 0 {
            let tau_m = theta.require(HyperName::TauM)?;
            for i in l.range(BlockKind::M) {
                q.push(i, i, tau_m);
            }
            log_det += n_m as f64 * tau_m.ln();
        }

        Ok(PriorPrecision {
            matrix: q,
            log_det,
            mapping: a,
            augmentation_entries,
        })
    }

    /// `Q(θ)` plus the curvature `c` on the predictor diagonal, in a fixed
    /// pattern shared by every call.
    pub fn posterior_precision(&self, prior: &PriorPrecision, curvature: &[f64]) -> SparseSymMatrix {
        assert_eq!(curvature.len(), self.layout.n_eta());
        let eta0 = self.layout.eta_offset();
        let mut m = prior.matrix.clone();
        for (r, &c) in curvature.iter().enumerate() {
            m.push(eta0 + r, eta0 + r, c);
        }
        m
    }

    /// Symbolic factorization for [`Self::posterior_precision`], computed once.
    pub fn symbolic(&self, example: &SparseSymMatrix) -> &SymbolicCholesky {
        self.symbolic.get_or_init(|| SymbolicCholesky::analyze(example))
    }

    /// Log-likelihood with first and second derivative for every stacked row.
    pub fn lik_terms(&self, theta: &HyperParams, eta: &[f64]) -> Result<Vec<LikTerm>, ModelError> {
        assert_eq!(eta.len(), self.design.n_rows());
        let tau_eps = if self.design.has_long() {
            theta.require(HyperName::TauEps)?
        } else {
            1.0
        };
        let kappa = theta.kappa();
        self.design
            .response
            .iter()
            .zip(eta)
            .map(|(resp, &e)| match *resp {
                Response::Gaussian { y } => {
                    let obs = LongObs { y, eta: e, tau_eps };
                    let value = gaussian_loglik(&obs)?;
                    Ok(LikTerm {
                        value,
                        grad: tau_eps * (y - e),
                        hess: -tau_eps,
                    })
                }
                Response::Survival { s, event } => {
                    let obs = SurvObs { s, c: event, eta: e, kappa };
                    let value = weibull_loglik(&obs)?;
                    let h = obs.cumulative_hazard();
                    Ok(LikTerm {
                        value,
                        grad: f64::from(event) - h,
                        hess: -h,
                    })
                }
            })
            .collect()
    }

    pub fn eta<'a>(&self, x: &'a [f64]) -> &'a [f64] {
        &x[self.layout.eta_offset()..]
    }

    /// `log π(x | θ)` for the augmented field.
    pub fn log_latent_density(&self, prior: &PriorPrecision, x: &[f64]) -> f64 {
        let n = x.len() as f64;
        0.5 * prior.log_det - 0.5 * n * (2.0 * PI).ln() - 0.5 * prior.quadratic_form(x)
    }
}

/// The addends `log π(x|θ)`, `log π(y|x,θ)` and `log π(θ)` of the joint
/// log-density. The hyperprior is taken on the unconstrained scale of the
/// free hyperparameters, Jacobians included.
pub fn joint_logdensity_parts(
    model: &JointModel,
    x: &[f64],
    theta: &HyperParams,
) -> Result<LogDensityParts, ModelError> {
    if x.len() != model.dim() {
        return Err(ModelError::DimensionMismatch {
            expected: model.dim(),
            found: x.len(),
        });
    }
    let prior = model.prior_precision(theta)?;
    let latent = model.log_latent_density(&prior, x);
    let likelihood = model.lik_terms(theta, model.eta(x))?.iter().map(|t| t.value).sum();
    let z = model.space().to_internal(theta)?;
    Ok(LogDensityParts {
        latent,
        likelihood,
        prior: model.space().log_prior(&z),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LongRow, SurvRow};

    fn single_obs_model() -> (JointModel, HyperParams) {
        // One Gaussian row whose predictor is a single fixed effect.
        let data = JointData {
            long_names: vec![],
            surv_names: vec!["one".into()],
            long_rows: vec![],
            surv_rows: vec![SurvRow { id: "a".into(), s: 1.0, event: 1, z: vec![1.0] }],
        };
        let config = ModelConfig::default();
        let model = JointModel::compile(&data, &config).unwrap();
        (model, HyperParams::new().with(HyperName::Kappa, 1.0))
    }

    #[test]
    fn augmented_log_det_matches_dense() {
        let data = JointData {
            long_names: vec!["x".into()],
            surv_names: vec!["one".into()],
            long_rows: vec![
                LongRow { id: "a".into(), t: 0.0, y: 1.0, x: vec![0.3] },
                LongRow { id: "a".into(), t: 1.0, y: 2.0, x: vec![-0.2] },
                LongRow { id: "b".into(), t: 0.5, y: 0.0, x: vec![1.0] },
            ],
            surv_rows: vec![
                SurvRow { id: "a".into(), s: 1.5, event: 1, z: vec![1.0] },
                SurvRow { id: "b".into(), s: 0.7, event: 0, z: vec![1.0] },
            ],
        };
        let mut config = ModelConfig { frailty: true, ..Default::default() };
        config.spline.n_knots = 4;
        let model = JointModel::compile(&data, &config).unwrap();
        let theta = model.space().to_params(&vec![0.3; model.space().dim()]);
        let prior = model.prior_precision(&theta).unwrap();
        let dense = prior.matrix.to_dense();
        let chol = dense.clone().cholesky().unwrap();
        let expect = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        assert!((prior.log_det - expect).abs() < 1e-6 * expect.abs().max(1.0), "{} vs {}", prior.log_det, expect);
    }

    #[test]
    fn conjugate_parts_sum_to_bivariate_density() {
        // Dense Gaussian oracle for the latent part, closed-form normal for y.
        let data = JointData {
            long_names: vec![],
            surv_names: vec![],
            long_rows: vec![
                LongRow { id: "a".into(), t: 0.0, y: 2.0, x: vec![] },
                LongRow { id: "a".into(), t: 1.0, y: 2.0, x: vec![] },
                LongRow { id: "a".into(), t: 2.0, y: 2.0, x: vec![] },
            ],
            surv_rows: vec![],
        };
        let mut config = ModelConfig { random_effects: RandomEffects::Intercept, association: crate::model::AssociationStructure::InterceptOnly, ..Default::default() };
        config.spline.n_knots = 3;
        config.fixed_effects_precision = 1.0;
        let model = JointModel::compile(&data, &config).unwrap();
        let theta = HyperParams::new()
            .with(HyperName::TauEps, 1.0)
            .with(HyperName::TauAlpha, 2.0)
            .with(HyperName::TauW, 3.0);
        let x: Vec<f64> = (0..model.dim()).map(|i| 0.1 * i as f64).collect();
        let parts = joint_logdensity_parts(&model, &x, &theta).unwrap();
        let prior = model.prior_precision(&theta).unwrap();
        let q = prior.matrix.to_dense();
        let n = x.len();
        let xv = nalgebra::DVector::from_column_slice(&x);
        let expect_latent = 0.5 * q.clone().cholesky().unwrap().l().diagonal().iter().map(|d| 2.0 * d.ln()).sum::<f64>()
            - 0.5 * n as f64 * (2.0 * PI).ln()
            - 0.5 * (xv.transpose() * &q * &xv)[(0, 0)];
        assert!((parts.latent - expect_latent).abs() < 1e-6);
        let eta0 = model.layout().eta_offset();
        let expect_lik: f64 = (0..3)
            .map(|r| -0.5 * (2.0 * PI).ln() - 0.5 * (2.0 - x[eta0 + r]).powi(2))
            .sum();
        assert!((parts.likelihood - expect_lik).abs() < 1e-12);
    }

    #[test]
    fn scalar_conjugate_case() {
        let (model, theta) = single_obs_model();
        assert_eq!(model.dim(), 2);
        let x = [0.4, 0.1];
        let parts = joint_logdensity_parts(&model, &x, &theta).unwrap();
        assert!(parts.total().is_finite());
        assert!((parts.likelihood - (0.1 - 0.1f64.exp())).abs() < 1e-14);
    }

    #[test]
    fn rho_outside_domain_is_an_error() {
        let data = JointData {
            long_names: vec![],
            surv_names: vec![],
            long_rows: vec![LongRow { id: "a".into(), t: 0.0, y: 0.0, x: vec![] }, LongRow { id: "a".into(), t: 1.0, y: 0.0, x: vec![] }],
            surv_rows: vec![],
        };
        let mut config = ModelConfig::default();
        config.spline.n_knots = 3;
        let model = JointModel::compile(&data, &config).unwrap();
        let mut theta = model.space().to_params(&model.space().start());
        theta.set(HyperName::Rho, 1.0);
        let x = vec![0.0; model.dim()];
        assert!(matches!(
            joint_logdensity_parts(&model, &x, &theta),
            Err(ModelError::HyperparameterDomain { .. })
        ));
    }
}
