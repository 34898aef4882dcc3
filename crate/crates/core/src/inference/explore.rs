//! Mode search, curvature and integration points for the hyperparameters.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::laplace::{evaluate, ThetaEval};
use super::InferenceError;
use crate::model::{IntegrationStrategy, JointModel};
use crate::priors::HyperName;

/// Upper bound on the number of product-grid points.
const MAX_GRID_POINTS: usize = 20_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    /// Unconstrained coordinates.
    pub z: Vec<f64>,
    /// Standardised coordinates.
    pub s: Vec<f64>,
    pub log_posterior: f64,
    pub weight: f64,
}

/// Integration points for `π(θ | y)` in unconstrained coordinates.
#[derive(Debug, Clone)]
pub struct ThetaGrid {
    pub names: Vec<HyperName>,
    pub strategy: IntegrationStrategy,
    pub points: Vec<GridPoint>,
    pub mode_point: usize,
    pub mode: Vec<f64>,
    pub mode_log_posterior: f64,
    /// Negative Hessian of `log π(z | y)` at the mode.
    pub hessian_at_mode: DMatrix<f64>,
    pub log_evidence: f64,
    pub evaluations: usize,
}

impl ThetaGrid {
    pub fn weights_sum(&self) -> f64 {
        self.points.iter().map(|p| p.weight).sum()
    }
}

#[derive(Debug, Clone)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// Minimises `f` with the Nelder–Mead simplex, from an axis-aligned simplex
/// of edge `step` at `start`. Stops when the spread of the simplex values
/// is below `tol` or after `max_evals` evaluations.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    start: &[f64],
    step: f64,
    max_evals: usize,
    tol: f64,
) -> NelderMeadResult {
    let d = start.len();
    let mut evals = 0;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    let f0 = eval(start, &mut evals);
    simplex.push((start.to_vec(), f0));
    for i in 0..d {
        let mut x = start.to_vec();
        x[i] += step;
        let v = eval(&x, &mut evals);
        simplex.push((x, v));
    }
    let mut converged = false;
    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, worst) = (simplex[0].1, simplex[d].1);
        if (worst - best).abs() < tol && worst.is_finite() {
            converged = true;
            break;
        }
        let centroid: Vec<f64> = (0..d)
            .map(|k| simplex[..d].iter().map(|p| p.0[k]).sum::<f64>() / d as f64)
            .collect();
        let worst_x = simplex[d].0.clone();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&worst_x)
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };
        let xr = along(-1.0);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = eval(&xe, &mut evals);
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[d].1 {
                let xc = along(-0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            } else {
                let xc = along(0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            };
            if fc < simplex[d].1.min(fr) {
                simplex[d] = (xc, fc);
            } else {
                let x0 = simplex[0].0.clone();
                for p in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = x0.iter().zip(&p.0).map(|(a, b)| a + 0.5 * (b - a)).collect();
                    let v = eval(&x, &mut evals);
                    *p = (x, v);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, f) = simplex.swap_remove(0);
    NelderMeadResult {
        x,
        f,
        evaluations: evals,
        converged,
    }
}

/// Symmetric finite-difference Hessian of `log π(z | y)` at `z`.
fn fd_hessian(
    model: &JointModel,
    z: &[f64],
    f0: f64,
    h: f64,
    start: &[f64],
) -> Result<(DMatrix<f64>, usize), InferenceError> {
    let d = z.len();
    let mut offsets: Vec<(usize, usize, i8, i8)> = Vec::new();
    for i in 0..d {
        offsets.push((i, i, 1, 0));
        offsets.push((i, i, -1, 0));
        for j in 0..i {
            for (a, b) in [(1, 1), (1, -1), (-1, 1), (-1, -1)] {
                offsets.push((i, j, a, b));
            }
        }
    }
    let values: Vec<f64> = offsets
        .par_iter()
        .map(|&(i, j, a, b)| {
            let mut x = z.to_vec();
            x[i] += f64::from(a) * h;
            if i != j {
                x[j] += f64::from(b) * h;
            }
            evaluate(model, &x, Some(start)).map(|e| e.log_posterior)
        })
        .collect::<Result<_, _>>()?;
    let lookup: BTreeMap<(usize, usize, i8, i8), f64> = offsets.iter().copied().zip(values).collect();
    let mut hess = DMatrix::zeros(d, d);
    for i in 0..d {
        hess[(i, i)] = (lookup[&(i, i, 1, 0)] - 2.0 * f0 + lookup[&(i, i, -1, 0)]) / (h * h);
        for j in 0..i {
            let v = (lookup[&(i, j, 1, 1)] - lookup[&(i, j, 1, -1)] - lookup[&(i, j, -1, 1)]
                + lookup[&(i, j, -1, -1)])
                / (4.0 * h * h);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    Ok((hess, offsets.len()))
}

/// Two-level design with `d` columns of ±1 whose columns are mutually
/// orthogonal: a full factorial up to four factors, half or quarter
/// fractions above.
pub fn factorial_design(d: usize) -> Vec<Vec<f64>> {
    if d == 1 {
        return vec![vec![1.0], vec![-1.0]];
    }
    let base = match d {
        0 => return Vec::new(),
        2..=4 => d,
        5..=7 => d - 1,
        _ => d - 2,
    };
    let mut rows = Vec::with_capacity(1 << base);
    for k in 0..(1usize << base) {
        let mut row: Vec<f64> = (0..base)
            .map(|b| if (k >> b) & 1 == 1 { -1.0 } else { 1.0 })
            .collect();
        if d > base {
            row.push(row.iter().product());
        }
        if d > base + 1 {
            row.push(row[1..base].iter().product());
        }
        rows.push(row);
    }
    rows
}

struct Standardiser {
    center: Vec<f64>,
    /// `V Λ^{-1/2}`.
    transform: DMatrix<f64>,
    log_det: f64,
}

impl Standardiser {
    fn new(mode: &[f64], neg_hessian: &DMatrix<f64>) -> Result<Self, InferenceError> {
        let eig = SymmetricEigen::new(neg_hessian.clone());
        if eig.eigenvalues.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(InferenceError::SingularHessian);
        }
        let d = mode.len();
        let mut transform = eig.eigenvectors.clone();
        for k in 0..d {
            let scale = eig.eigenvalues[k].powf(-0.5);
            for i in 0..d {
                transform[(i, k)] *= scale;
            }
        }
        Ok(Self {
            center: mode.to_vec(),
            transform,
            log_det: -0.5 * eig.eigenvalues.iter().map(|l| l.ln()).sum::<f64>(),
        })
    }

    fn to_z(&self, s: &[f64]) -> Vec<f64> {
        let dz = &self.transform * DVector::from_column_slice(s);
        self.center.iter().zip(dz.iter()).map(|(c, d)| c + d).collect()
    }
}

/// Finds the mode of `π(θ | y)`, its curvature, and the integration points.
pub fn optimize_theta(model: &JointModel) -> Result<ThetaGrid, InferenceError> {
    let grid = &model.config().grid;
    let space = model.space();
    let d = space.dim();
    let names = space.free_names().to_vec();

    let start = space.start();
    let first = evaluate(model, &start, None).map_err(|e| {
        InferenceError::OptimizerFailed(format!("no finite value at the start point: {e}"))
    })?;
    if !first.log_posterior.is_finite() {
        return Err(InferenceError::OptimizerFailed(
            "no finite value at the start point".into(),
        ));
    }
    if d == 0 {
        return Ok(ThetaGrid {
            names,
            strategy: IntegrationStrategy::Eb,
            points: vec![GridPoint {
                z: vec![],
                s: vec![],
                log_posterior: first.log_posterior,
                weight: 1.0,
            }],
            mode_point: 0,
            mode: vec![],
            mode_log_posterior: first.log_posterior,
            hessian_at_mode: DMatrix::zeros(0, 0),
            log_evidence: first.log_posterior,
            evaluations: 1,
        });
    }

    let mut evaluations = 1;
    let mut warm = first.approx.mode.clone();
    let mut best = (start.clone(), first.log_posterior);
    let mut step = 1.0;
    for restart in 0..=grid.max_restarts {
        let res = nelder_mead(
            |z| match evaluate(model, z, Some(&warm)) {
                Ok(e) => {
                    if e.log_posterior.is_finite() {
                        warm = e.approx.mode;
                    }
                    -e.log_posterior
                }
                Err(_) => f64::INFINITY,
            },
            &best.0,
            step,
            grid.max_evaluations,
            grid.tolerance,
        );
        evaluations += res.evaluations;
        let improvement = -res.f - best.1;
        debug!(
            "simplex run {restart}: log posterior {:.6} after {} evaluations",
            -res.f, res.evaluations
        );
        if -res.f > best.1 {
            best = (res.x, -res.f);
        }
        if res.converged && improvement < grid.tolerance {
            break;
        }
        step = 0.5;
    }

    let mode_eval: ThetaEval = evaluate(model, &best.0, Some(&warm))?;
    let mode = mode_eval.z.clone();
    let lmode = mode_eval.log_posterior;
    let (hess, n_h) = fd_hessian(model, &mode, lmode, grid.hessian_step, &mode_eval.approx.mode)?;
    evaluations += n_h + 1;
    let neg_hessian = -hess;
    let standard = Standardiser::new(&mode, &neg_hessian)?;
    let x_mode = mode_eval.approx.mode;

    let strategy = match grid.strategy {
        IntegrationStrategy::Auto if d <= 4 => IntegrationStrategy::Grid,
        IntegrationStrategy::Auto => IntegrationStrategy::Ccd,
        s => s,
    };

    let eval_at = |s: &[f64]| -> Result<(Vec<f64>, f64), InferenceError> {
        let z = standard.to_z(s);
        let e = evaluate(model, &z, Some(&x_mode))?;
        Ok((z, e.log_posterior))
    };

    let mut points: Vec<(Vec<f64>, Vec<f64>, f64, f64)> = Vec::new();
    let log_evidence;
    match strategy {
        IntegrationStrategy::Eb | IntegrationStrategy::Auto => {
            points.push((mode.clone(), vec![0.0; d], lmode, 1.0));
            log_evidence = lmode + 0.5 * d as f64 * (2.0 * PI).ln() + standard.log_det;
        }
        IntegrationStrategy::Grid => {
            let mut visited: BTreeSet<Vec<i32>> = BTreeSet::new();
            let mut frontier: Vec<Vec<i32>> = vec![vec![0; d]];
            visited.insert(vec![0; d]);
            let mut kept: Vec<(Vec<i32>, Vec<f64>, f64)> = Vec::new();
            while !frontier.is_empty() {
                let evaluated: Vec<(Vec<i32>, Vec<f64>, f64)> = frontier
                    .par_iter()
                    .map(|k| {
                        let s: Vec<f64> = k.iter().map(|&i| f64::from(i) * grid.step).collect();
                        let (z, l) = eval_at(&s).unwrap_or((standard.to_z(&s), f64::NEG_INFINITY));
                        (k.clone(), z, l)
                    })
                    .collect();
                evaluations += evaluated.len();
                let mut next = Vec::new();
                for (k, z, l) in evaluated {
                    if l >= lmode - grid.drop {
                        for axis in 0..d {
                            for dir in [-1, 1] {
                                let mut nb = k.clone();
                                nb[axis] += dir;
                                if visited.insert(nb.clone()) {
                                    next.push(nb);
                                }
                            }
                        }
                        kept.push((k, z, l));
                    }
                }
                if visited.len() > MAX_GRID_POINTS {
                    warn!("hyperparameter grid truncated at {} points", visited.len());
                    break;
                }
                next.sort();
                frontier = next;
            }
            kept.sort_by(|a, b| a.0.cmp(&b.0));
            let lmax = kept.iter().map(|p| p.2).fold(f64::NEG_INFINITY, f64::max);
            let kept: Vec<_> = kept.into_iter().filter(|p| p.2 >= lmax - grid.drop).collect();
            let sum: f64 = kept.iter().map(|p| (p.2 - lmax).exp()).sum();
            log_evidence = lmax + sum.ln() + d as f64 * grid.step.ln() + standard.log_det;
            for (k, z, l) in kept {
                let s = k.iter().map(|&i| f64::from(i) * grid.step).collect();
                points.push((z, s, l, 1.0));
            }
        }
        IntegrationStrategy::Ccd => {
            let f0 = grid.ccd_f0;
            let radius = f0 * (d as f64).sqrt();
            let mut design: Vec<Vec<f64>> = vec![vec![0.0; d]];
            if d > 1 {
                for row in factorial_design(d) {
                    design.push(row.iter().map(|v| v * f0).collect());
                }
            }
            for axis in 0..d {
                for dir in [1.0, -1.0] {
                    let mut s = vec![0.0; d];
                    s[axis] = dir * radius;
                    design.push(s);
                }
            }
            let n_p = design.len() as f64;
            let delta = (d as f64 * f0 * f0 / 2.0).exp() / ((n_p - 1.0) * (f0 * f0 - 1.0));
            let evaluated: Vec<(Vec<f64>, f64)> = design
                .par_iter()
                .map(|s| {
                    eval_at(s).unwrap_or_else(|e| {
                        warn!("design point {s:?} dropped: {e}");
                        (standard.to_z(s), f64::NEG_INFINITY)
                    })
                })
                .collect();
            evaluations += evaluated.len();
            for (i, (s, (z, l))) in design.into_iter().zip(evaluated).enumerate() {
                let w = if i == 0 { 1.0 } else { delta };
                if l.is_finite() {
                    points.push((z, s, l, w));
                }
            }
            log_evidence = lmode + 0.5 * d as f64 * (2.0 * PI).ln() + standard.log_det;
        }
    }

    let lmax = points.iter().map(|p| p.2).fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = points.iter().map(|p| p.3 * (p.2 - lmax).exp()).collect();
    let total: f64 = raw.iter().sum();
    let mut grid_points: Vec<GridPoint> = points
        .into_iter()
        .zip(raw)
        .map(|((z, s, l, _), w)| GridPoint {
            z,
            s,
            log_posterior: l,
            weight: w / total,
        })
        .collect();
    let mode_point = grid_points
        .iter()
        .position(|p| p.s.iter().all(|v| *v == 0.0))
        .unwrap_or(0);
    grid_points[mode_point].log_posterior = lmode;
    if !log_evidence.is_finite() {
        return Err(InferenceError::NonFinitePosterior);
    }

    Ok(ThetaGrid {
        names,
        strategy,
        points: grid_points,
        mode_point,
        mode,
        mode_log_posterior: lmode,
        hessian_at_mode: neg_hessian,
        log_evidence,
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simplex_finds_quadratic_minimum() {
        let res = nelder_mead(
            |x| (x[0] - 1.0).powi(2) + 3.0 * (x[1] + 2.0).powi(2) + 0.5 * x[0] * x[1],
            &[0.0, 0.0],
            1.0,
            500,
            1e-12,
        );
        // Stationary point of the quadratic.
        let a = nalgebra::Matrix2::new(2.0, 0.5, 0.5, 6.0);
        let b = nalgebra::Vector2::new(2.0, -12.0);
        let x = a.try_inverse().unwrap() * b;
        assert!(res.converged);
        assert!((res.x[0] - x[0]).abs() < 1e-4 && (res.x[1] - x[1]).abs() < 1e-4);
    }

    #[test]
    fn simplex_respects_budget() {
        let res = nelder_mead(|x| x.iter().map(|v| v.abs().sqrt()).sum(), &[3.0; 4], 1.0, 40, 0.0);
        assert!(res.evaluations <= 40 + 5);
        assert!(!res.converged);
    }

    #[test]
    fn factorial_columns_are_balanced_and_orthogonal() {
        for d in 1..=9 {
            let rows = factorial_design(d);
            for i in 0..d {
                assert_eq!(rows.iter().map(|r| r[i]).sum::<f64>(), 0.0, "d={d}");
                for j in 0..i {
                    assert_eq!(rows.iter().map(|r| r[i] * r[j]).sum::<f64>(), 0.0, "d={d}");
                }
            }
        }
        assert_eq!(factorial_design(5).len(), 16);
    }
}
