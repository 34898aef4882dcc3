//! The predictor map `η = A(θ) x`, where `x` excludes the predictors.

use super::{AssociationStructure, BlockKind, HyperParams, LatentLayout, ModelConfig, ModelError, RandomEffects, Response, StackedDesign};
use crate::gmrf::SparseMatrix;

/// Coefficients of `(w, v)` in the survival predictor at time `s`.
pub fn association_weights(
    structure: AssociationStructure,
    nu: &[f64],
    s: f64,
) -> Result<(f64, f64), ModelError> {
    if nu.len() != structure.nu_arity() {
        return Err(ModelError::WrongNuArity {
            expected: structure.nu_arity(),
            found: nu.len(),
        });
    }
    Ok(match structure {
        AssociationStructure::InterceptOnly => (nu[0], 0.0),
        AssociationStructure::SlopeOnly => (0.0, nu[0] * s),
        AssociationStructure::IntSlopeShared => (nu[0], nu[0] * s),
        AssociationStructure::IntSlopeSeparate => (nu[0], nu[1] * s),
    })
}

/// Linear interpolation weights of `t` on the two bracketing knots.
pub fn interpolation_weights(knots: &[f64], t: f64) -> Result<[(usize, f64); 2], ModelError> {
    let n = knots.len();
    let (lo, hi) = (knots[0], knots[n - 1]);
    let slack = 1e-12 * (hi - lo).abs().max(1.0);
    if !(t >= lo - slack && t <= hi + slack) {
        return Err(ModelError::TimeOutsideKnotRange { time: t, lo, hi });
    }
    let t = t.clamp(lo, hi);
    let j = knots.partition_point(|&k| k <= t).clamp(1, n - 1) - 1;
    let h = knots[j + 1] - knots[j];
    let right = ((t - knots[j]) / h).clamp(0.0, 1.0);
    Ok([(j, 1.0 - right), (j + 1, right)])
}

/// The association hyperparameters of `theta` in the order the structure uses.
pub fn nu_values(structure: AssociationStructure, theta: &HyperParams) -> Result<Vec<f64>, ModelError> {
    structure.nu_names().iter().map(|&n| theta.require(n)).collect()
}

/// Builds `A(θ)` with one row per stacked observation and one column per
/// non-predictor latent coordinate. The sparsity pattern does not depend on
/// `θ`; only the association coefficients do.
pub fn build_mapping(
    design: &StackedDesign,
    layout: &LatentLayout,
    config: &ModelConfig,
    theta: &HyperParams,
) -> Result<SparseMatrix, ModelError> {
    let has_long = design.has_long();
    let has_surv = design.has_surv();
    let nu = if has_long && has_surv {
        Some(nu_values(config.association, theta)?)
    } else {
        None
    };
    let slope = layout.block(BlockKind::V).len > 0;
    let frailty = layout.block(BlockKind::M).len > 0;
    let beta = layout.block(BlockKind::Beta);
    let gamma = layout.block(BlockKind::Gamma);
    let mut rows = Vec::with_capacity(design.n_rows());
    let mut surv_row = 0;
    for r in 0..design.n_rows() {
        let subject = design.subject_index[r];
        let mut row = Vec::new();
        match design.response[r] {
            Response::Gaussian { .. } => {
                let t = design.spline_time[r].expect("longitudinal row without time");
                for (k, w) in interpolation_weights(&design.knots, t)? {
                    row.push((layout.index(BlockKind::Alpha, k), w));
                }
                for k in 0..beta.len {
                    row.push((beta.offset + k, design.long_covariates[k][r]));
                }
                row.push((layout.index(BlockKind::W, subject), 1.0));
                if slope {
                    row.push((layout.index(BlockKind::V, subject), t));
                }
            }
            Response::Survival { s, .. } => {
                for k in 0..gamma.len {
                    row.push((gamma.offset + k, design.surv_covariates[k][r]));
                }
                if let Some(nu) = &nu {
                    let (ww, wv) = association_weights(config.association, nu, s)?;
                    if config.association.uses_intercept() {
                        row.push((layout.index(BlockKind::W, subject), ww));
                    }
                    if config.association.uses_slope() {
                        row.push((layout.index(BlockKind::V, subject), wv));
                    }
                }
                if frailty {
                    row.push((layout.index(BlockKind::M, surv_row), 1.0));
                }
                surv_row += 1;
            }
        }
        rows.push(row);
    }
    Ok(SparseMatrix::from_rows(layout.eta_offset(), rows))
}

/// Block lengths for a design under a configuration.
pub fn layout_for(design: &StackedDesign, config: &ModelConfig) -> LatentLayout {
    let has_long = design.has_long();
    let n = design.n_subjects();
    let n_alpha = if has_long { design.knots.len() } else { 0 };
    let n_w = if has_long { n } else { 0 };
    let n_v = if has_long && config.random_effects == RandomEffects::IntSlope { n } else { 0 };
    let n_m = if config.frailty { design.n_surv } else { 0 };
    LatentLayout::new([
        n_alpha,
        design.long_covariates.len(),
        design.surv_covariates.len(),
        n_w,
        n_v,
        n_m,
        design.n_long,
        design.n_surv,
    ])
}
