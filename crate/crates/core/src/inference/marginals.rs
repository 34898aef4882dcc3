//! Posterior marginals from the integration points: Gaussian mixtures for
//! the latent field and weighted point sets for the hyperparameters.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use super::explore::ThetaGrid;
use super::newton::gaussian_approximation_from;
use super::result::{GridSummary, HyperSummary, LatentSummary};
use super::InferenceError;
use crate::model::{BlockKind, JointModel, RandomEffects};
use crate::priors::{HyperTransform, TransformKind};

const QUANTILE_TOLERANCE: f64 = 1e-10;

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// Moments of a Gaussian mixture.
pub fn mixture_moments(weights: &[f64], means: &[f64], sds: &[f64]) -> (f64, f64) {
    let mean: f64 = weights.iter().zip(means).map(|(w, m)| w * m).sum();
    let second: f64 = weights
        .iter()
        .zip(means.iter().zip(sds))
        .map(|(w, (m, s))| w * (s * s + m * m))
        .sum();
    (mean, (second - mean * mean).max(0.0).sqrt())
}

pub fn mixture_cdf(weights: &[f64], means: &[f64], sds: &[f64], x: f64) -> f64 {
    let n = std_normal();
    weights
        .iter()
        .zip(means.iter().zip(sds))
        .map(|(w, (m, s))| w * n.cdf((x - m) / s))
        .sum()
}

/// Quantile of a Gaussian mixture by bisection on its distribution function.
pub fn mixture_quantile(weights: &[f64], means: &[f64], sds: &[f64], p: f64) -> f64 {
    let n = std_normal();
    if means.len() == 1 {
        return means[0] + sds[0] * n.inverse_cdf(p);
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (m, s) in means.iter().zip(sds) {
        lo = lo.min(m - 10.0 * s);
        hi = hi.max(m + 10.0 * s);
    }
    let scale = (hi - lo).abs().max(1e-300);
    while hi - lo > QUANTILE_TOLERANCE * scale.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if mixture_cdf(weights, means, sds, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn latent_summary(label: String, weights: &[f64], means: &[f64], sds: &[f64]) -> LatentSummary {
    let (mean, sd) = mixture_moments(weights, means, sds);
    LatentSummary {
        label,
        mean,
        sd,
        q025: mixture_quantile(weights, means, sds, 0.025),
        q50: mixture_quantile(weights, means, sds, 0.5),
        q975: mixture_quantile(weights, means, sds, 0.975),
    }
}

/// Summary of `x = g(z)` for `z` on the unconstrained scale, given weighted
/// points (mean and SD) and a Gaussian fit `N(mu, sigma²)` (quantiles, mode).
fn hyper_summary(
    points: &[(f64, f64)],
    mu: f64,
    sigma: f64,
    g: impl Fn(f64) -> f64,
    log_abs_dg: impl Fn(f64) -> f64,
) -> HyperSummary {
    let (mean, sd) = if points.len() > 1 {
        let m: f64 = points.iter().map(|(z, w)| w * g(*z)).sum();
        let v: f64 = points.iter().map(|(z, w)| w * (g(*z) - m).powi(2)).sum();
        (m, v.sqrt())
    } else {
        // Trapezoid rule under the Gaussian fit.
        let n = 1601;
        let (a, b) = (mu - 8.0 * sigma, mu + 8.0 * sigma);
        let h = (b - a) / (n - 1) as f64;
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let z = a + h * i as f64;
            let w = (-0.5 * ((z - mu) / sigma).powi(2)).exp() * if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            let x = g(z);
            s0 += w;
            s1 += w * x;
            s2 += w * x * x;
        }
        let m = s1 / s0;
        (m, (s2 / s0 - m * m).max(0.0).sqrt())
    };
    let n = std_normal();
    let qa = g(mu + sigma * n.inverse_cdf(0.025));
    let qb = g(mu + sigma * n.inverse_cdf(0.975));
    // Mode of the density of x: maximise log φ(z) − log |g'(z)|.
    let f = |z: f64| -0.5 * ((z - mu) / sigma).powi(2) - log_abs_dg(z);
    let (mut a, mut b) = (mu - 8.0 * sigma, mu + 8.0 * sigma);
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    for _ in 0..200 {
        if f(c) > f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - r * (b - a);
        d = a + r * (b - a);
    }
    HyperSummary {
        mode: g(0.5 * (a + b)),
        mean,
        sd,
        q025: qa.min(qb),
        q50: g(mu),
        q975: qa.max(qb),
        fixed: false,
    }
}

/// Everything one fitted part contributes to a [`super::FitResult`].
#[derive(Debug, Clone)]
pub struct PartSummary {
    pub hyper: BTreeMap<String, HyperSummary>,
    pub latent: BTreeMap<String, Vec<LatentSummary>>,
    pub alpha_cov: Vec<Vec<f64>>,
    pub beta_cov: Vec<Vec<f64>>,
    /// `(w, v)` covariance keyed by subject id.
    pub wv_cov: HashMap<String, [[f64; 2]; 2]>,
    pub grid: GridSummary,
}

struct PointMarginals {
    means: Vec<f64>,
    sds: Vec<f64>,
    alpha_cov: Vec<Vec<f64>>,
    beta_cov: Vec<Vec<f64>>,
    wv_cov: Vec<[[f64; 2]; 2]>,
    iterations: usize,
}

fn dense_block(
    inv: &crate::gmrf::SelectedInverse,
    range: std::ops::Range<usize>,
) -> Vec<Vec<f64>> {
    range
        .clone()
        .map(|i| range.clone().map(|j| inv.get(i, j).unwrap_or(0.0)).collect())
        .collect()
}

fn mix_cov(weights: &[f64], covs: &[&Vec<Vec<f64>>], means: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = means.first().map_or(0, Vec::len);
    let mean: Vec<f64> = (0..n)
        .map(|i| weights.iter().zip(means).map(|(w, m)| w * m[i]).sum())
        .collect();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    weights
                        .iter()
                        .zip(covs.iter().zip(means))
                        .map(|(w, (c, m))| w * (c[i][j] + m[i] * m[j]))
                        .sum::<f64>()
                        - mean[i] * mean[j]
                })
                .collect()
        })
        .collect()
}

/// Latent and hyperparameter marginals of one model over its grid.
pub fn marginals(model: &JointModel, grid: &ThetaGrid, part: &str) -> Result<PartSummary, InferenceError> {
    if grid.points.is_empty() {
        return Err(InferenceError::EmptyGrid);
    }
    let space = model.space();
    let layout = model.layout();
    let design = model.design();
    let n_x = layout.eta_offset();
    let mode_theta = space.to_params(&grid.mode);
    let mode_approx = gaussian_approximation_from(model, &mode_theta, None)?;
    let start = mode_approx.mode.clone();
    let alpha_r = layout.range(BlockKind::Alpha);
    let beta_r = layout.range(BlockKind::Beta);
    let n_w = layout.block(BlockKind::W).len;
    let slope = layout.block(BlockKind::V).len > 0;

    let per_point: Vec<PointMarginals> = grid
        .points
        .par_iter()
        .map(|p| {
            let theta = space.to_params(&p.z);
            let approx = gaussian_approximation_from(model, &theta, Some(&start))?;
            let inv = approx.precision_factor.selected_inverse();
            let var = inv.diagonal();
            let wv_cov = (0..n_w)
                .map(|i| {
                    let wi = layout.index(BlockKind::W, i);
                    if slope {
                        let vi = layout.index(BlockKind::V, i);
                        let c = inv.get(wi, vi).unwrap_or(0.0);
                        [[var[wi], c], [c, var[vi]]]
                    } else {
                        [[var[wi], 0.0], [0.0, 0.0]]
                    }
                })
                .collect();
            Ok(PointMarginals {
                means: approx.mode[..n_x].to_vec(),
                sds: var[..n_x].iter().map(|v| v.max(0.0).sqrt()).collect(),
                alpha_cov: dense_block(&inv, alpha_r.clone()),
                beta_cov: dense_block(&inv, beta_r.clone()),
                wv_cov,
                iterations: approx.iterations,
            })
        })
        .collect::<Result<_, InferenceError>>()?;

    let weights: Vec<f64> = grid.points.iter().map(|p| p.weight).collect();
    let mut latent = BTreeMap::new();
    for block in layout.blocks() {
        if block.len == 0 || matches!(block.kind, BlockKind::EtaL | BlockKind::EtaS) {
            continue;
        }
        let summaries: Vec<LatentSummary> = (0..block.len)
            .into_par_iter()
            .map(|i| {
                let j = block.offset + i;
                let means: Vec<f64> = per_point.iter().map(|p| p.means[j]).collect();
                let sds: Vec<f64> = per_point.iter().map(|p| p.sds[j]).collect();
                let label = match block.kind {
                    BlockKind::Alpha => format!("alpha[{i}]"),
                    BlockKind::Beta => design.long_names[i].clone(),
                    BlockKind::Gamma => design.surv_names[i].clone(),
                    BlockKind::W => format!("w[{}]", design.subjects[i]),
                    BlockKind::V => format!("v[{}]", design.subjects[i]),
                    BlockKind::M => {
                        let r = design.n_long + i;
                        format!("m[{}]", design.subjects[design.subject_index[r]])
                    }
                    BlockKind::EtaL | BlockKind::EtaS => unreachable!(),
                };
                latent_summary(label, &weights, &means, &sds)
            })
            .collect();
        latent.insert(block.kind.as_str().to_string(), summaries);
    }

    let alpha_means: Vec<Vec<f64>> = per_point.iter().map(|p| p.means[alpha_r.clone()].to_vec()).collect();
    let beta_means: Vec<Vec<f64>> = per_point.iter().map(|p| p.means[beta_r.clone()].to_vec()).collect();
    let alpha_cov = mix_cov(&weights, &per_point.iter().map(|p| &p.alpha_cov).collect::<Vec<_>>(), &alpha_means);
    let beta_cov = mix_cov(&weights, &per_point.iter().map(|p| &p.beta_cov).collect::<Vec<_>>(), &beta_means);
    let mut wv_cov = HashMap::new();
    for i in 0..n_w {
        let mut acc = [[0.0; 2]; 2];
        let wj = layout.index(BlockKind::W, i);
        let means: Vec<[f64; 2]> = per_point
            .iter()
            .map(|p| [p.means[wj], if slope { p.means[layout.index(BlockKind::V, i)] } else { 0.0 }])
            .collect();
        let mut mean = [0.0; 2];
        for (w, m) in weights.iter().zip(&means) {
            mean[0] += w * m[0];
            mean[1] += w * m[1];
        }
        for (k, p) in per_point.iter().enumerate() {
            for a in 0..2 {
                for b in 0..2 {
                    acc[a][b] += weights[k] * (p.wv_cov[i][a][b] + means[k][a] * means[k][b]);
                }
            }
        }
        for a in 0..2 {
            for b in 0..2 {
                acc[a][b] -= mean[a] * mean[b];
            }
        }
        if model.config().random_effects == RandomEffects::Intercept {
            acc[0][1] = 0.0;
            acc[1][0] = 0.0;
            acc[1][1] = 0.0;
        }
        wv_cov.insert(design.subjects[i].clone(), acc);
    }

    let mut hyper = BTreeMap::new();
    let d = space.dim();
    let inv_hessian = if d > 0 {
        grid.hessian_at_mode.clone().try_inverse()
    } else {
        None
    };
    for (k, t) in space.transforms().iter().enumerate() {
        let pts: Vec<(f64, f64)> = grid.points.iter().map(|p| (p.z[k], p.weight)).collect();
        let mu: f64 = pts.iter().map(|(z, w)| z * w).sum();
        let mut var: f64 = pts.iter().map(|(z, w)| w * (z - mu).powi(2)).sum();
        if pts.len() == 1 {
            var = inv_hessian.as_ref().map_or(0.0, |h| h[(k, k)]);
        }
        let sigma = var.max(1e-300).sqrt();
        let tt = *t;
        hyper.insert(
            t.name.as_str().to_string(),
            hyper_summary(&pts, mu, sigma, |z| tt.backward(z), |z| tt.log_jacobian(z)),
        );
        if let Some(vname) = t.name.variance_name() {
            debug_assert_eq!(t.kind, TransformKind::Log);
            hyper.insert(vname.to_string(), hyper_summary(&pts, mu, sigma, |z| (-z).exp(), |z| -z));
        }
    }
    for (name, value) in space.fixed().iter() {
        hyper.insert(name.as_str().to_string(), HyperSummary::fixed(value));
        if let Some(vname) = name.variance_name() {
            hyper.insert(vname.to_string(), HyperSummary::fixed(1.0 / value));
        }
    }
    let _ = HyperTransform::new;

    let grid_summary = GridSummary {
        part: part.to_string(),
        strategy: format!("{:?}", grid.strategy).to_lowercase(),
        names: grid.names.iter().map(|n| n.as_str().to_string()).collect(),
        mode: grid.mode.clone(),
        neg_hessian: (0..d)
            .map(|i| (0..d).map(|j| grid.hessian_at_mode[(i, j)]).collect())
            .collect(),
        points: grid.points.clone(),
        log_evidence: grid.log_evidence,
        evaluations: grid.evaluations,
        newton_iterations_at_mode: per_point[grid.mode_point].iterations,
    };

    Ok(PartSummary {
        hyper,
        latent,
        alpha_cov,
        beta_cov,
        wv_cov,
        grid: grid_summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_component_quantiles_are_exact() {
        let q = mixture_quantile(&[1.0], &[2.0], &[0.5], 0.975);
        assert!((q - (2.0 + 0.5 * 1.959_963_984_540_054)).abs() < 1e-9);
    }

    #[test]
    fn mixture_quantiles_are_monotone() {
        let w = [0.2, 0.5, 0.3];
        let m = [-1.0, 0.5, 3.0];
        let s = [0.3, 1.0, 0.2];
        let mut prev = f64::NEG_INFINITY;
        for k in 1..100 {
            let q = mixture_quantile(&w, &m, &s, k as f64 / 100.0);
            assert!(q > prev);
            assert!((mixture_cdf(&w, &m, &s, q) - k as f64 / 100.0).abs() < 1e-8);
            prev = q;
        }
    }

    #[test]
    fn lognormal_mode_and_median() {
        let s = hyper_summary(&[(0.3, 1.0)], 0.3, 0.4, f64::exp, |z| z);
        assert!((s.mode - (0.3f64 - 0.16).exp()).abs() < 1e-8);
        assert!((s.q50 - 0.3f64.exp()).abs() < 1e-12);
        assert!((s.mean - (0.3f64 + 0.08).exp()).abs() < 1e-6);
    }
}
