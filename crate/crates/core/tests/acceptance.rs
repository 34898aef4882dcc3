//! End-to-end acceptance checks. Runs without the libtest harness so that
//! every criterion prints its own PASS/FAIL line.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use jointlgm::inference::{fit, FitResult, TrajectorySummary};
use jointlgm::gmrf::{null_space_basis, rw2_structure, scale_rw2};
use jointlgm::likelihoods::{loglik_grad_hess, LongObs, Obs, SurvObs};
use jointlgm::model::{
    stack, AssociationStructure, Baseline, BlockKind, JointData, JointModel, ModelConfig,
    RandomEffects, Response, AUGMENTATION_PRECISION,
};
use jointlgm::oracle::{run_mcmc, McmcConfig};
use jointlgm::priors::{pc_precision_logdensity, HyperName, PcPrecisionPrior, Prior};
use jointlgm::simulate::{simulate_joint, ObsSchedule, SimScenario};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn fixed(config: &mut ModelConfig, name: HyperName, value: f64) {
    config.priors.insert(name.as_str().to_string(), Prior::Fixed { value });
}

/// Default scenario with a random intercept shared through `ν w`.
fn recovery_config() -> ModelConfig {
    ModelConfig {
        association: AssociationStructure::InterceptOnly,
        random_effects: RandomEffects::Intercept,
        ..Default::default()
    }
}

fn gaussian_exactness() -> Outcome {
    let sc = SimScenario {
        n_subjects: 15,
        beta: vec![0.5],
        sigma_v: 0.3,
        rho: 0.2,
        horizon: 1e6,
        gamma: vec![-8.0],
        seed: 21,
        ..Default::default()
    };
    let mut data = simulate_joint(&sc).unwrap().data;
    data.surv_rows.clear();
    data.surv_names.clear();
    let mut config = ModelConfig::default();
    config.spline.n_knots = 9;
    for (name, value) in [
        (HyperName::TauEps, 10.0),
        (HyperName::TauAlpha, 2.0),
        (HyperName::TauW, 4.0),
        (HyperName::TauV, 9.0),
        (HyperName::Rho, 0.3),
    ] {
        fixed(&mut config, name, value);
    }
    let result = fit(&data, &config).unwrap();

    // Closed-form generalised least squares with the same prior.
    let model = JointModel::compile(&data, &config).unwrap();
    let theta = model.space().to_params(&[]);
    let prior = model.prior_precision(&theta).unwrap();
    let a = prior.mapping.to_dense();
    let q_x = dense_latent_precision(&model, &config, 2.0, 4.0, 9.0, 0.3);
    let y = DVector::from_iterator(
        a.nrows(),
        model.design().response.iter().map(|r| match r {
            Response::Gaussian { y } => *y,
            Response::Survival { .. } => unreachable!(),
        }),
    );
    let noise = 1.0 / 10.0 + 1.0 / AUGMENTATION_PRECISION;
    let post = &q_x + a.transpose() * &a / noise;
    let cov = post.clone().cholesky().unwrap().inverse();
    let mean = &cov * a.transpose() * &y / noise;
    let marg = &a * q_x.clone().cholesky().unwrap().inverse() * a.transpose()
        + DMatrix::identity(a.nrows(), a.nrows()) * noise;
    let chol = marg.cholesky().unwrap();
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let quad = y.dot(&chol.solve(&y));
    let evidence =
        -0.5 * quad - 0.5 * log_det - 0.5 * y.len() as f64 * (2.0 * std::f64::consts::PI).ln();

    let mut worst: f64 = 0.0;
    for block in model.layout().blocks() {
        let Some(summaries) = result.latent.get(block.kind.as_str()) else {
            continue;
        };
        for (i, s) in summaries.iter().enumerate() {
            let j = block.offset + i;
            worst = worst
                .max((s.mean - mean[j]).abs())
                .max((s.sd - cov[(j, j)].sqrt()).abs());
        }
    }
    let d_ev = (result.log_marginal_likelihood - evidence).abs();
    outcome(
        worst < 1e-6 && d_ev < 1e-8,
        format!("max latent error {worst:.2e}, evidence error {d_ev:.2e}"),
    )
}

/// Prior precision of the non-predictor latent blocks, assembled densely
/// from the spline structure and the random-effect covariance.
fn dense_latent_precision(
    model: &JointModel,
    config: &ModelConfig,
    tau_alpha: f64,
    tau_w: f64,
    tau_v: f64,
    rho: f64,
) -> DMatrix<f64> {
    let l = model.layout();
    let n_x = l.eta_offset();
    let delta = config.fixed_effects_precision;
    let mut q = DMatrix::zeros(n_x, n_x);
    let knots = &model.design().knots;
    let mut s = rw2_structure(knots).unwrap();
    if config.spline.scaled {
        s = scale_rw2(&s).unwrap().matrix;
    }
    let u = null_space_basis(knots);
    let alpha = s.to_dense() * tau_alpha + &u * u.transpose() * delta;
    let a0 = l.block(BlockKind::Alpha).offset;
    q.view_mut((a0, a0), alpha.shape()).copy_from(&alpha);
    for i in l.range(BlockKind::Beta) {
        q[(i, i)] = delta;
    }
    let (sw, sv) = (tau_w.powf(-0.5), tau_v.powf(-0.5));
    let cov = nalgebra::Matrix2::new(sw * sw, rho * sw * sv, rho * sw * sv, sv * sv);
    let prec = cov.try_inverse().unwrap();
    for i in 0..l.block(BlockKind::W).len {
        let (w, v) = (l.index(BlockKind::W, i), l.index(BlockKind::V, i));
        q[(w, w)] = prec[(0, 0)];
        q[(w, v)] = prec[(0, 1)];
        q[(v, w)] = prec[(1, 0)];
        q[(v, v)] = prec[(1, 1)];
    }
    q
}

fn richardson(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    let d = |h: f64| (f(x + h) - f(x - h)) / (2.0 * h);
    (4.0 * d(h / 2.0) - d(h)) / 3.0
}

fn gradient_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for k in 0..1000 {
        let obs = |eta: f64| -> Obs {
            if k % 2 == 0 {
                Obs::Long(LongObs {
                    y: 0.0,
                    eta,
                    tau_eps: 1.0,
                })
            } else {
                Obs::Surv(SurvObs {
                    s: 1.0,
                    c: 0,
                    eta,
                    kappa: 1.0,
                })
            }
        };
        let eta0: f64 = rng.random_range(-3.0..3.0);
        let base = match obs(eta0) {
            Obs::Long(_) => Obs::Long(LongObs {
                y: rng.random_range(-5.0..5.0),
                eta: eta0,
                tau_eps: rng.random_range(0.05..50.0),
            }),
            Obs::Surv(_) => Obs::Surv(SurvObs {
                s: rng.random_range(0.01..5.0),
                c: rng.random_range(0..2u8),
                eta: eta0,
                kappa: rng.random_range(0.3..3.0),
            }),
        };
        let at = |eta: f64| match base {
            Obs::Long(o) => Obs::Long(LongObs { eta, ..o }),
            Obs::Surv(o) => Obs::Surv(SurvObs { eta, ..o }),
        };
        let (g, h) = loglik_grad_hess(&base).unwrap();
        let fd_g = richardson(|e| at(e).loglik().unwrap(), eta0, 1e-3);
        let fd_h = richardson(|e| loglik_grad_hess(&at(e)).unwrap().0, eta0, 1e-3);
        worst = worst
            .max((g - fd_g).abs() / g.abs().max(1.0))
            .max((h - fd_h).abs() / h.abs().max(1.0));
    }
    outcome(worst < 1e-6, format!("1000 points, max relative error {worst:.2e}"))
}

fn pc_prior() -> Outcome {
    let prior = PcPrecisionPrior::new(1.0, 0.01).unwrap();
    // Integrate over z = log τ with the trapezoid rule.
    let integrate = |lo: f64, hi: f64| -> f64 {
        let n = 400_000;
        let h = (hi - lo) / n as f64;
        (0..=n)
            .map(|i| {
                let z = lo + h * i as f64;
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                w * (pc_precision_logdensity(z.exp(), &prior).unwrap() + z).exp()
            })
            .sum::<f64>()
            * h
    };
    let total = integrate(-20.0, 100.0);
    let tail = integrate(-20.0, (1.0f64 / (prior.u * prior.u)).ln());
    outcome(
        (total - 1.0).abs() < 1e-6 && (tail - prior.alpha).abs() < 1e-6,
        format!("mass {total:.10}, P(1/sqrt(tau) > 1) = {tail:.10}"),
    )
}

fn oracle_agreement() -> Outcome {
    let sc = SimScenario {
        n_subjects: 25,
        obs_times: ObsSchedule {
            start: 0.0,
            end: 3.0,
            count: 4,
        },
        sigma_v: 0.3,
        rho: 0.2,
        association: AssociationStructure::IntSlopeShared,
        nu: vec![0.8],
        kappa: 1.3,
        seed: 4,
        ..Default::default()
    };
    let data = simulate_joint(&sc).unwrap().data;
    let mut config = ModelConfig {
        association: AssociationStructure::IntSlopeShared,
        ..Default::default()
    };
    config.spline.n_knots = 10;
    let result = fit(&data, &config).unwrap();
    let model = JointModel::from_design(stack(&data, &config).unwrap(), &config).unwrap();
    let mcmc = run_mcmc(&model, &McmcConfig::default()).unwrap();

    let mut checked = 0;
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    let mut check = |name: String, laplace: f64, mean: f64, sd: f64, mcse: f64| {
        checked += 1;
        let diff = (laplace - mean).abs();
        worst = worst.max(diff / sd);
        if diff >= (0.3 * sd).max(3.0 * mcse) {
            failures.push(name);
        }
    };
    for (name, p) in &mcmc.hyperparameters {
        let h = result.hyper(name).expect("hyperparameter in fit");
        check(name.clone(), h.mean, p.mean, p.sd, p.mcse);
    }
    for (block, ps) in &mcmc.latent {
        for (p, l) in ps.iter().zip(result.latent_block(block)) {
            check(format!("{block}:{}", p.label), l.mean, p.mean, p.sd, p.mcse);
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "{checked} parameters, largest |difference|/sd {worst:.3}, failures {failures:?}, {} obs",
            data.long_rows.len()
        ),
    )
}

/// Posterior-mean trajectory by linear interpolation between knots.
fn interpolate(t: &TrajectorySummary, x: f64) -> f64 {
    let k = &t.knots;
    let j = k.partition_point(|&v| v < x).clamp(1, k.len() - 1);
    let w = (x - k[j - 1]) / (k[j] - k[j - 1]);
    (1.0 - w) * t.mean[j - 1] + w * t.mean[j]
}

fn knot_stability() -> Outcome {
    let data = simulate_joint(&SimScenario {
        seed: 5,
        ..Default::default()
    })
    .unwrap()
    .data;
    let fit_with = |n_knots: usize| {
        let mut c = recovery_config();
        c.spline.n_knots = n_knots;
        fit(&data, &c).unwrap().trajectory.unwrap()
    };
    let (a, b) = (fit_with(15), fit_with(47));
    let lo = a.knots[0].max(b.knots[0]);
    let hi = a.knots.last().unwrap().min(*b.knots.last().unwrap());
    let grid: Vec<f64> = (0..=1000).map(|i| lo + (hi - lo) * i as f64 / 1000.0).collect();
    let sup = grid
        .iter()
        .map(|&x| (interpolate(&a, x) - interpolate(&b, x)).abs())
        .fold(0.0, f64::max);
    let values: Vec<f64> = grid.iter().map(|&x| interpolate(&b, x)).collect();
    let range = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - values.iter().cloned().fold(f64::INFINITY, f64::min);
    outcome(
        sup < 0.05 * range,
        format!("sup distance {sup:.4}, 5% of range {:.4}", 0.05 * range),
    )
}

fn recovery() -> Outcome {
    let config = recovery_config();
    let mut covered = 0;
    let mut worst_rmse: f64 = 0.0;
    for seed in 1..=20u64 {
        let data = simulate_joint(&SimScenario {
            seed,
            ..Default::default()
        })
        .unwrap()
        .data;
        let result = fit(&data, &config).unwrap();
        let nu = result.hyper("nu").unwrap();
        if nu.q025 <= 1.0 && 1.0 <= nu.q975 {
            covered += 1;
        }
        let traj = result.trajectory.as_ref().unwrap();
        let n = 400;
        let mse = (0..=n)
            .map(|i| {
                let t = 2.0 * i as f64 / n as f64;
                (interpolate(traj, t) - t * t).powi(2)
            })
            .sum::<f64>()
            / (n + 1) as f64;
        worst_rmse = worst_rmse.max(mse.sqrt());
    }
    outcome(
        covered >= 17 && worst_rmse < 0.1,
        format!("association covered in {covered}/20 replicates, largest spline RMSE on [0, 2] {worst_rmse:.4}"),
    )
}

fn summaries_distance(a: &FitResult, b: &FitResult, skip: &[&str]) -> f64 {
    let mut worst: f64 = 0.0;
    for (name, ha) in &a.hyperparameters {
        if skip.contains(&name.as_str()) {
            continue;
        }
        let hb = &b.hyperparameters[name];
        for (x, y) in [
            (ha.mode, hb.mode),
            (ha.mean, hb.mean),
            (ha.sd, hb.sd),
            (ha.q025, hb.q025),
            (ha.q50, hb.q50),
            (ha.q975, hb.q975),
        ] {
            worst = worst.max((x - y).abs());
        }
    }
    for (block, la) in &a.latent {
        for (x, y) in la.iter().zip(&b.latent[block]) {
            for (p, q) in [
                (x.mean, y.mean),
                (x.sd, y.sd),
                (x.q025, y.q025),
                (x.q50, y.q50),
                (x.q975, y.q975),
            ] {
                worst = worst.max((p - q).abs());
            }
        }
    }
    worst
}

fn small_joint_data(seed: u64) -> JointData {
    simulate_joint(&SimScenario {
        n_subjects: 120,
        sigma_v: 0.3,
        association: AssociationStructure::IntSlopeShared,
        kappa: 1.2,
        seed,
        ..Default::default()
    })
    .unwrap()
    .data
}

fn exponential_special_case() -> Outcome {
    let data = simulate_joint(&SimScenario {
        n_subjects: 150,
        seed: 8,
        ..Default::default()
    })
    .unwrap()
    .data;
    let exp = fit(
        &data,
        &ModelConfig {
            baseline: Baseline::Exponential,
            ..recovery_config()
        },
    )
    .unwrap();
    let mut weib_config = recovery_config();
    fixed(&mut weib_config, HyperName::Kappa, 1.0);
    let weib = fit(&data, &weib_config).unwrap();
    let worst = summaries_distance(&exp, &weib, &["kappa"]);
    let d_ev = (exp.log_marginal_likelihood - weib.log_marginal_likelihood).abs();
    outcome(
        worst < 1e-8 && d_ev < 1e-8,
        format!("largest summary difference {worst:.2e}, evidence difference {d_ev:.2e}"),
    )
}

fn decoupling() -> Outcome {
    let data = small_joint_data(9);
    let mut config = ModelConfig {
        association: AssociationStructure::IntSlopeShared,
        ..Default::default()
    };
    fixed(&mut config, HyperName::Nu, 0.0);
    let joint = fit(&data, &config).unwrap();
    let surv_only = JointData {
        long_names: data.long_names.clone(),
        surv_names: data.surv_names.clone(),
        long_rows: Vec::new(),
        surv_rows: data.surv_rows.clone(),
    };
    let alone = fit(&surv_only, &config).unwrap();
    let mut worst: f64 = 0.0;
    for (x, y) in joint.latent_block("gamma").iter().zip(alone.latent_block("gamma")) {
        for (p, q) in [(x.mean, y.mean), (x.sd, y.sd), (x.q025, y.q025), (x.q975, y.q975)] {
            worst = worst.max((p - q).abs());
        }
    }
    let (a, b) = (joint.hyper("kappa").unwrap(), alone.hyper("kappa").unwrap());
    for (p, q) in [(a.mean, b.mean), (a.sd, b.sd), (a.q025, b.q025), (a.q975, b.q975), (a.mode, b.mode)] {
        worst = worst.max((p - q).abs());
    }
    let n_gamma = alone.latent_block("gamma").len();
    outcome(
        worst < 1e-6 && n_gamma > 0,
        format!("largest survival summary difference {worst:.2e}"),
    )
}

fn association_structures() -> Outcome {
    let data = small_joint_data(10);
    let mut report = Vec::new();
    let mut pass = true;
    for structure in [
        AssociationStructure::InterceptOnly,
        AssociationStructure::SlopeOnly,
        AssociationStructure::IntSlopeShared,
        AssociationStructure::IntSlopeSeparate,
    ] {
        let config = ModelConfig {
            association: structure,
            ..Default::default()
        };
        match fit(&data, &config) {
            Ok(r) => {
                let nus: Vec<&str> = ["nu", "nu1", "nu2"]
                    .into_iter()
                    .filter(|n| r.hyperparameters.contains_key(*n))
                    .collect();
                let expected: &[&str] = if structure == AssociationStructure::IntSlopeSeparate {
                    &["nu1", "nu2"]
                } else {
                    &["nu"]
                };
                pass &= nus == expected
                    && nus.iter().all(|n| r.hyperparameters[*n].sd.is_finite());
                report.push(nus.join("+"));
            }
            Err(e) => {
                pass = false;
                report.push(format!("error: {e}"));
            }
        }
    }
    outcome(pass, format!("eq4..eq7 report {}", report.join(", ")))
}

fn determinism() -> Outcome {
    let data = small_joint_data(12);
    let config = ModelConfig::default();
    let a = fit(&data, &config).unwrap().to_json();
    let b = fit(&data, &config).unwrap().to_json();
    outcome(a == b, format!("{} bytes, identical: {}", a.len(), a == b))
}

fn main() {
    let criteria: Vec<(&str, Duration, fn() -> Outcome)> = vec![
        ("1 exactness on Gaussian models", Duration::from_secs(1), gaussian_exactness),
        ("2 likelihood derivatives", Duration::from_secs(1), gradient_suite),
        ("3 PC prior normalisation and tail", Duration::from_secs(1), pc_prior),
        ("4 agreement with MCMC", Duration::from_secs(300), oracle_agreement),
        ("5 knot stability", Duration::from_secs(120), knot_stability),
        ("6 parameter recovery", Duration::from_secs(600), recovery),
        ("7 exponential special case", Duration::MAX, exponential_special_case),
        ("8 decoupling", Duration::MAX, decoupling),
        ("9 association structures", Duration::MAX, association_structures),
        ("10 determinism", Duration::MAX, determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = BTreeMap::new();
    for (name, budget, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let in_time = elapsed <= budget;
        let pass = result.pass && in_time;
        println!(
            "criterion {name}: {} ({}; {:.2} s{})",
            if pass { "PASS" } else { "FAIL" },
            result.detail,
            elapsed.as_secs_f64(),
            if in_time { "" } else { ", over time budget" }
        );
        if !pass {
            failed.insert(name, result.detail);
        }
    }
    if !failed.is_empty() {
        println!("{} criteria failed", failed.len());
        std::process::exit(1);
    }
    println!("all criteria passed");
}
