//! Survival curves and fitted trajectories from a [`FitResult`].

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inference::{FitResult, SubjectSummary};
use crate::model::{association_weights, interpolation_weights, Baseline, ModelError, SurvRow};

const Z975: f64 = 1.959_963_984_540_054;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PredictError {
    #[error("no survival rows")]
    EmptyData,
    #[error("unknown subject `{0}`")]
    UnknownSubject(String),
    #[error("the fit has no longitudinal part")]
    NoTrajectory,
    #[error("the fit has no survival part")]
    NoSurvival,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    KaplanMeier,
    ModelMean,
    SubjectSpecific,
}

impl CurveKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CurveKind::KaplanMeier => "kaplan_meier",
            CurveKind::ModelMean => "model_mean",
            CurveKind::SubjectSpecific => "subject_specific",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
    pub kind: CurveKind,
    pub subject: Option<String>,
}

impl SurvivalCurve {
    /// Value of a right-continuous step curve at `t`.
    pub fn step_at(&self, t: f64) -> f64 {
        match self.times.iter().rposition(|&x| x <= t) {
            Some(i) => self.survival[i],
            None => 1.0,
        }
    }
}

/// Product-limit estimate; the curve starts at `(0, 1)` and then lists each
/// distinct event time.
pub fn kaplan_meier(rows: &[SurvRow]) -> Result<SurvivalCurve, PredictError> {
    if rows.is_empty() {
        return Err(PredictError::EmptyData);
    }
    let mut obs: Vec<(f64, u8)> = rows.iter().map(|r| (r.s, r.event)).collect();
    obs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut times = vec![0.0];
    let mut survival = vec![1.0];
    let mut at_risk = obs.len();
    let mut s = 1.0;
    let mut i = 0;
    while i < obs.len() {
        let t = obs[i].0;
        let (mut deaths, mut leaving) = (0, 0);
        while i < obs.len() && obs[i].0 == t {
            deaths += obs[i].1 as usize;
            leaving += 1;
            i += 1;
        }
        if deaths > 0 {
            s *= 1.0 - deaths as f64 / at_risk as f64;
            times.push(t);
            survival.push(s);
        }
        at_risk -= leaving;
    }
    Ok(SurvivalCurve {
        times,
        survival,
        kind: CurveKind::KaplanMeier,
        subject: None,
    })
}

struct SurvivalPlugin {
    kappa: f64,
    nu: Vec<f64>,
    gamma: Vec<f64>,
}

fn plugin(fit: &FitResult) -> Result<SurvivalPlugin, PredictError> {
    let gamma: Vec<f64> = fit.latent_block("gamma").iter().map(|s| s.mean).collect();
    if fit.model.surv_names.len() != gamma.len() || !fit.subjects.iter().any(|s| s.time.is_some()) {
        return Err(PredictError::NoSurvival);
    }
    let kappa = match fit.model.baseline {
        Baseline::Exponential => 1.0,
        Baseline::Weibull => fit.hyper("kappa").map_or(1.0, |h| h.mean),
    };
    let nu = fit
        .model
        .association
        .nu_names()
        .iter()
        .map(|n| fit.hyper(n.as_str()).map_or(0.0, |h| h.mean))
        .collect();
    Ok(SurvivalPlugin { kappa, nu, gamma })
}

impl SurvivalPlugin {
    fn curve(&self, fit: &FitResult, z: &[f64], w: f64, v: f64, m: f64, times: &[f64]) -> Result<Vec<f64>, PredictError> {
        let lin: f64 = self.gamma.iter().zip(z).map(|(g, x)| g * x).sum::<f64>() + m;
        times
            .iter()
            .map(|&s| {
                let (cw, cv) = association_weights(fit.model.association, &self.nu, s)?;
                let eta = lin + cw * w + cv * v;
                Ok((-s.max(0.0).powf(self.kappa) * eta.exp()).exp())
            })
            .collect()
    }
}

fn find_subject<'a>(fit: &'a FitResult, id: &str) -> Result<&'a SubjectSummary, PredictError> {
    fit.subject(id).ok_or_else(|| PredictError::UnknownSubject(id.to_string()))
}

/// Plug-in survival curve `exp(−s^κ e^{η(s)})` of one subject at posterior means.
pub fn subject_survival(fit: &FitResult, id: &str, times: &[f64]) -> Result<SurvivalCurve, PredictError> {
    let subject = find_subject(fit, id)?;
    let p = plugin(fit)?;
    let z = if subject.surv_covariates.is_empty() {
        return Err(PredictError::NoSurvival);
    } else {
        &subject.surv_covariates
    };
    Ok(SurvivalCurve {
        times: times.to_vec(),
        survival: p.curve(fit, z, subject.w, subject.v, subject.m, times)?,
        kind: CurveKind::SubjectSpecific,
        subject: Some(id.to_string()),
    })
}

/// Population curve: zero random effects and frailty, covariates at their
/// sample means.
pub fn model_mean_survival(fit: &FitResult, times: &[f64]) -> Result<SurvivalCurve, PredictError> {
    let p = plugin(fit)?;
    let rows: Vec<&SubjectSummary> = fit.subjects.iter().filter(|s| s.time.is_some()).collect();
    let z: Vec<f64> = (0..p.gamma.len())
        .map(|k| rows.iter().map(|s| s.surv_covariates[k]).sum::<f64>() / rows.len() as f64)
        .collect();
    Ok(SurvivalCurve {
        times: times.to_vec(),
        survival: p.curve(fit, &z, 0.0, 0.0, 0.0, times)?,
        kind: CurveKind::ModelMean,
        subject: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub time: f64,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Posterior mean and 95% band of a subject's longitudinal predictor. The
/// band combines the spline, fixed-effect and random-effect covariances and
/// ignores the covariance between these blocks.
pub fn trajectory(fit: &FitResult, id: &str, times: &[f64]) -> Result<Vec<TrajectoryPoint>, PredictError> {
    let subject = find_subject(fit, id)?;
    let alpha = fit.latent_block("alpha");
    if alpha.is_empty() {
        return Err(PredictError::NoTrajectory);
    }
    let beta: Vec<f64> = fit.latent_block("beta").iter().map(|s| s.mean).collect();
    let x = &subject.long_covariates;
    let fixed: f64 = beta.iter().zip(x).map(|(b, xk)| b * xk).sum();
    let fixed_var: f64 = (0..beta.len().min(x.len()))
        .map(|i| (0..beta.len().min(x.len())).map(|j| x[i] * fit.beta_cov[i][j] * x[j]).sum::<f64>())
        .sum();
    let c = subject.wv_cov;
    times
        .iter()
        .map(|&t| {
            let wts = interpolation_weights(&fit.model.knots, t)?;
            let mut mean = fixed + subject.w + subject.v * t;
            let mut var = fixed_var + c[0][0] + 2.0 * t * c[0][1] + t * t * c[1][1];
            for &(i, wi) in &wts {
                mean += wi * alpha[i].mean;
                for &(j, wj) in &wts {
                    var += wi * wj * fit.alpha_cov[i][j];
                }
            }
            let half = Z975 * var.max(0.0).sqrt();
            Ok(TrajectoryPoint {
                time: t,
                mean,
                lower: mean - half,
                upper: mean + half,
            })
        })
        .collect()
}

/// Curves as CSV with columns `time,value,kind,subject_id`.
pub fn write_curves_csv<W: Write>(out: W, curves: &[SurvivalCurve]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time", "value", "kind", "subject_id"])?;
    for c in curves {
        for (t, s) in c.times.iter().zip(&c.survival) {
            w.write_record([
                format!("{t:.16e}"),
                format!("{s:.16e}"),
                c.kind.as_str().to_string(),
                c.subject.clone().unwrap_or_default(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Trajectory points as CSV with columns `time,mean,lower,upper,subject_id`.
pub fn write_trajectory_csv<W: Write>(out: W, subject: &str, points: &[TrajectoryPoint]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time", "mean", "lower", "upper", "subject_id"])?;
    for p in points {
        w.write_record([
            format!("{:.16e}", p.time),
            format!("{:.16e}", p.mean),
            format!("{:.16e}", p.lower),
            format!("{:.16e}", p.upper),
            subject.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
