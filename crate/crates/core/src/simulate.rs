//! Synthetic joint datasets generated under the model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{association_weights, AssociationStructure, JointData, LongRow, SurvRow};

const BISECTION_LOWER: f64 = 1e-10;
const TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimulationError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("subject {subject}: could not bracket the event time")]
    BisectionFailed { subject: usize },
}

/// How event times are generated from the hazard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HazardMode {
    /// The predictor is frozen at the event time, as in the fitted model.
    AtEventTime,
    /// Exact inversion of the time-varying cumulative hazard.
    ExactTimeVarying,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObsSchedule {
    pub start: f64,
    pub end: f64,
    /// Number of equally spaced times on `[start, end]`.
    pub count: usize,
}

impl Default for ObsSchedule {
    fn default() -> Self {
        Self {
            start: 0.0,
            end: 4.0,
            count: 9,
        }
    }
}

impl ObsSchedule {
    pub fn times(&self) -> Vec<f64> {
        match self.count {
            0 => Vec::new(),
            1 => vec![self.start],
            n => (0..n)
                .map(|i| self.start + (self.end - self.start) * i as f64 / (n - 1) as f64)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimScenario {
    pub n_subjects: usize,
    pub obs_times: ObsSchedule,
    /// Polynomial coefficients of the trajectory, constant term first.
    pub trajectory: Vec<f64>,
    /// Longitudinal fixed effects; covariate `x{k}` is a subject-level N(0, 1) draw.
    pub beta: Vec<f64>,
    /// Survival fixed effects; the first multiplies the intercept column,
    /// the rest subject-level N(0, 1) covariates `z{k}`.
    pub gamma: Vec<f64>,
    pub sigma_w: f64,
    pub sigma_v: f64,
    pub rho: f64,
    /// Frailty standard deviation, 0 for none.
    pub sigma_m: f64,
    pub association: AssociationStructure,
    pub nu: Vec<f64>,
    pub kappa: f64,
    pub tau_eps: f64,
    pub horizon: f64,
    pub hazard_mode: HazardMode,
    pub seed: u64,
}

impl Default for SimScenario {
    fn default() -> Self {
        Self {
            n_subjects: 300,
            obs_times: ObsSchedule::default(),
            trajectory: vec![0.0, 0.0, 1.0],
            beta: Vec::new(),
            gamma: vec![-1.0],
            sigma_w: 0.5,
            sigma_v: 0.0,
            rho: 0.0,
            sigma_m: 0.0,
            association: AssociationStructure::InterceptOnly,
            nu: vec![1.0],
            kappa: 1.0,
            tau_eps: 10.0,
            horizon: 4.0,
            hazard_mode: HazardMode::AtEventTime,
            seed: 1,
        }
    }
}

impl SimScenario {
    pub fn from_json(text: &str) -> Result<Self, SimulationError> {
        let s: SimScenario =
            serde_json::from_str(text).map_err(|e| SimulationError::InvalidScenario(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        let bad = |m: &str| Err(SimulationError::InvalidScenario(m.to_string()));
        if self.n_subjects == 0 {
            return bad("n_subjects must be positive");
        }
        if !(self.horizon > 0.0) {
            return bad("censoring horizon must be positive");
        }
        if !(self.kappa > 0.0 && self.tau_eps > 0.0) {
            return bad("kappa and tau_eps must be positive");
        }
        if !(self.sigma_w >= 0.0 && self.sigma_v >= 0.0 && self.sigma_m >= 0.0) {
            return bad("standard deviations must be non-negative");
        }
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return bad("rho must lie in (-1, 1)");
        }
        if self.gamma.is_empty() {
            return bad("gamma needs at least the intercept");
        }
        if self.nu.len() != self.association.nu_arity() {
            return bad("wrong number of association parameters");
        }
        let o = &self.obs_times;
        if o.count > 1 && !(o.end > o.start) {
            return bad("observation schedule must be increasing");
        }
        let finite = self.trajectory.iter().chain(&self.beta).chain(&self.gamma).chain(&self.nu);
        if finite.into_iter().any(|v| !v.is_finite()) {
            return bad("non-finite coefficient");
        }
        Ok(())
    }

    pub fn trajectory_at(&self, t: f64) -> f64 {
        self.trajectory.iter().rev().fold(0.0, |acc, c| acc * t + c)
    }

    pub fn long_names(&self) -> Vec<String> {
        (1..=self.beta.len()).map(|k| format!("x{k}")).collect()
    }

    pub fn surv_names(&self) -> Vec<String> {
        std::iter::once("intercept".to_string())
            .chain((1..self.gamma.len()).map(|k| format!("z{k}")))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectTruth {
    pub id: String,
    pub w: f64,
    pub v: f64,
    pub m: f64,
    /// Latent event time before censoring.
    pub event_time: f64,
    /// Fixed-point residual `s^κ e^{η(s)} + log U` of the frozen-predictor draw.
    pub residual: f64,
}

/// Generating parameters and realised random effects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub scenario: SimScenario,
    pub subjects: Vec<SubjectTruth>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulated {
    pub data: JointData,
    pub truth: Truth,
}

/// `H(s) = ∫₀^s κ u^{κ−1} e^{a + b u} du`, written as `∫₀^{s^κ} e^{a + b r^{1/κ}} dr`.
pub fn cumulative_hazard(s: f64, kappa: f64, a: f64, b: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    if b == 0.0 {
        return s.powf(kappa) * a.exp();
    }
    let f = |r: f64| (a + b * r.powf(1.0 / kappa)).exp();
    adaptive_simpson(&f, 0.0, s.powf(kappa), TOLERANCE)
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let (fa, fb) = (f(a), f(b));
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol * whole.abs().max(1.0), 40)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let diff = left + right - whole;
    if depth == 0 || diff.abs() <= 15.0 * tol {
        return left + right + diff / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Solves `H(s) = e` on `[1e-10, 10 s^X]`; `None` when the root is not bracketed.
fn invert_hazard(e: f64, kappa: f64, a: f64, b: f64, horizon: f64) -> Option<f64> {
    let (mut lo, mut hi) = (BISECTION_LOWER, 10.0 * horizon);
    if cumulative_hazard(lo, kappa, a, b) > e || cumulative_hazard(hi, kappa, a, b) < e {
        return None;
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        let h = cumulative_hazard(mid, kappa, a, b);
        if (h - e).abs() < TOLERANCE {
            return Some(mid);
        }
        if h < e {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

struct SubjectDraw {
    long: Vec<LongRow>,
    surv: SurvRow,
    truth: SubjectTruth,
}

fn simulate_subject(sc: &SimScenario, i: usize, times: &[f64]) -> Result<SubjectDraw, SimulationError> {
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    rng.set_stream(i as u64);
    let id = format!("{}", i + 1);
    let mut std = || -> f64 { StandardNormal.sample(&mut rng) };

    let x: Vec<f64> = sc.beta.iter().map(|_| std()).collect();
    let z: Vec<f64> = std::iter::once(1.0)
        .chain(sc.gamma.iter().skip(1).map(|_| std()))
        .collect();
    let (z1, z2, z3) = (std(), std(), std());
    let w = sc.sigma_w * z1;
    let v = sc.sigma_v * (sc.rho * z1 + (1.0 - sc.rho * sc.rho).sqrt() * z2);
    let m = sc.sigma_m * z3;

    let u: f64 = Uniform::new(0.0, 1.0).expect("unit interval").sample(&mut rng);
    let e = -(1.0 - u).ln();
    let (cw, cv) = association_weights(sc.association, &sc.nu, 1.0).expect("validated arity");
    let a = sc.gamma.iter().zip(&z).map(|(g, zk)| g * zk).sum::<f64>() + cw * w + m;
    let b = cv * v;
    let frozen = |s: f64| (e * (-(a + b * s)).exp()).powf(1.0 / sc.kappa);

    let (event_time, residual) = match sc.hazard_mode {
        HazardMode::AtEventTime => {
            let s0 = frozen(0.0);
            let s1 = frozen(s0);
            (s1, s1.powf(sc.kappa) * (a + b * s1).exp() - e)
        }
        HazardMode::ExactTimeVarying => {
            if b == 0.0 {
                (frozen(0.0), 0.0)
            } else if cumulative_hazard(sc.horizon, sc.kappa, a, b) < e {
                // The event falls beyond the horizon and is censored.
                (f64::INFINITY, 0.0)
            } else {
                let s = invert_hazard(e, sc.kappa, a, b, sc.horizon)
                    .ok_or(SimulationError::BisectionFailed { subject: i })?;
                (s, cumulative_hazard(s, sc.kappa, a, b) - e)
            }
        }
    };
    let (s, event) = if event_time <= sc.horizon {
        (event_time, 1)
    } else {
        (sc.horizon, 0)
    };

    let noise = Normal::new(0.0, sc.tau_eps.powf(-0.5)).expect("finite noise scale");
    let long = times
        .iter()
        .filter(|&&t| t <= s)
        .map(|&t| {
            let mean = sc.trajectory_at(t)
                + sc.beta.iter().zip(&x).map(|(bk, xk)| bk * xk).sum::<f64>()
                + w
                + v * t;
            LongRow {
                id: id.clone(),
                t,
                y: mean + noise.sample(&mut rng),
                x: x.clone(),
            }
        })
        .collect();
    Ok(SubjectDraw {
        long,
        surv: SurvRow {
            id: id.clone(),
            s,
            event,
            z,
        },
        truth: SubjectTruth {
            id,
            w,
            v,
            m,
            event_time,
            residual,
        },
    })
}

/// Draws a dataset. Each subject uses its own stream of the seeded
/// generator, so the output does not depend on scheduling.
pub fn simulate_joint(scenario: &SimScenario) -> Result<Simulated, SimulationError> {
    scenario.validate()?;
    let times = scenario.obs_times.times();
    let draws: Vec<SubjectDraw> = (0..scenario.n_subjects)
        .into_par_iter()
        .map(|i| simulate_subject(scenario, i, &times))
        .collect::<Result<_, _>>()?;
    let mut data = JointData {
        long_names: scenario.long_names(),
        surv_names: scenario.surv_names(),
        long_rows: Vec::new(),
        surv_rows: Vec::with_capacity(draws.len()),
    };
    let mut subjects = Vec::with_capacity(draws.len());
    for d in draws {
        data.long_rows.extend(d.long);
        data.surv_rows.push(d.surv);
        subjects.push(d.truth);
    }
    Ok(Simulated {
        data,
        truth: Truth {
            scenario: scenario.clone(),
            subjects,
        },
    })
}
