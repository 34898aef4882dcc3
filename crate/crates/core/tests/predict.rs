use jointlgm::inference::{fit, FitResult, HyperSummary};
use jointlgm::model::{AssociationStructure, JointData, ModelConfig, RandomEffects};
use jointlgm::predict::{
    kaplan_meier, model_mean_survival, subject_survival, trajectory, PredictError,
};
use jointlgm::priors::{HyperName, Prior};
use jointlgm::simulate::{simulate_joint, SimScenario};

fn data(seed: u64) -> JointData {
    simulate_joint(&SimScenario {
        n_subjects: 60,
        gamma: vec![-1.0, 0.5],
        seed,
        ..Default::default()
    })
    .unwrap()
    .data
}

fn intercept_config() -> ModelConfig {
    ModelConfig {
        association: AssociationStructure::InterceptOnly,
        random_effects: RandomEffects::Intercept,
        ..Default::default()
    }
}

fn grid(n: usize, end: f64) -> Vec<f64> {
    (0..n).map(|i| end * i as f64 / (n - 1) as f64).collect()
}

fn non_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] <= w[0] + 1e-15)
}

#[test]
fn unit_hazard_gives_exponential_survival() {
    let mut result: FitResult = fit(&data(1), &intercept_config()).unwrap();
    for g in result.latent.get_mut("gamma").unwrap() {
        g.mean = 0.0;
    }
    result
        .hyperparameters
        .insert("kappa".into(), HyperSummary::fixed(1.0));
    result
        .hyperparameters
        .insert("nu".into(), HyperSummary::fixed(0.0));
    let s = &mut result.subjects[0];
    s.m = 0.0;
    let id = s.id.clone();
    let curve = subject_survival(&result, &id, &[0.0, 1.0, 2.0]).unwrap();
    assert_eq!(curve.survival[0], 1.0);
    assert!((curve.survival[1] - (-1.0f64).exp()).abs() < 1e-15);
    assert!((curve.survival[2] - (-2.0f64).exp()).abs() < 1e-15);
}

#[test]
fn curves_start_at_one_and_decrease() {
    let d = data(2);
    let result = fit(&d, &ModelConfig::default()).unwrap();
    let times = grid(101, 4.0);
    let mean = model_mean_survival(&result, &times).unwrap();
    assert_eq!(mean.survival[0], 1.0);
    assert!(non_increasing(&mean.survival));
    for id in ["1", "17", "40"] {
        let c = subject_survival(&result, id, &times).unwrap();
        assert_eq!(c.survival[0], 1.0);
        assert!(non_increasing(&c.survival), "subject {id}");
        assert!(c.survival.iter().all(|s| (0.0..=1.0).contains(s)));
    }
    let km = kaplan_meier(&d.surv_rows).unwrap();
    assert_eq!((km.times[0], km.survival[0]), (0.0, 1.0));
    assert!(non_increasing(&km.survival));
}

#[test]
fn high_intercept_subject_is_below_the_mean_curve() {
    let d = simulate_joint(&SimScenario {
        n_subjects: 80,
        sigma_w: 1.0,
        seed: 3,
        ..Default::default()
    })
    .unwrap()
    .data;
    let result = fit(&d, &intercept_config()).unwrap();
    assert!(result.hyper("nu").unwrap().mean > 0.0);
    let top = result
        .subjects
        .iter()
        .max_by(|a, b| a.w.total_cmp(&b.w))
        .unwrap();
    let times = grid(21, 4.0);
    let mean = model_mean_survival(&result, &times).unwrap();
    let high = subject_survival(&result, &top.id, &times).unwrap();
    for k in 1..times.len() {
        assert!(high.survival[k] < mean.survival[k]);
    }
}

#[test]
fn without_association_equal_covariates_give_equal_curves() {
    let d = simulate_joint(&SimScenario {
        n_subjects: 40,
        seed: 4,
        ..Default::default()
    })
    .unwrap()
    .data;
    let mut config = intercept_config();
    config.priors.insert(
        HyperName::Nu.as_str().to_string(),
        Prior::Fixed { value: 0.0 },
    );
    let result = fit(&d, &config).unwrap();
    let times = grid(11, 4.0);
    let first = subject_survival(&result, "1", &times).unwrap();
    for s in &result.subjects[1..] {
        let c = subject_survival(&result, &s.id, &times).unwrap();
        assert_eq!(c.survival, first.survival);
    }
    assert_ne!(result.subjects[0].w, result.subjects[1].w);
}

#[test]
fn trajectory_follows_the_observations() {
    let d = data(5);
    let result = fit(&d, &ModelConfig::default()).unwrap();
    let noise_var = result.hyper("sigma2_eps").unwrap().mean;
    let (mut inside, mut total) = (0, 0);
    for id in ["2", "9", "33"] {
        let rows: Vec<_> = d.long_rows.iter().filter(|r| r.id == id).collect();
        let times: Vec<f64> = rows.iter().map(|r| r.t).collect();
        let points = trajectory(&result, id, &times).unwrap();
        for (p, r) in points.iter().zip(&rows) {
            assert!(p.lower <= p.mean && p.mean <= p.upper);
            let band_sd = (p.upper - p.mean) / 1.959_963_984_540_054;
            let sd = (band_sd * band_sd + noise_var).sqrt();
            inside += usize::from((r.y - p.mean).abs() <= 2.0 * sd);
            total += 1;
        }
    }
    assert!(inside as f64 >= 0.85 * total as f64, "{inside}/{total}");
}

#[test]
fn unknown_subject_is_an_error() {
    let result = fit(&data(6), &intercept_config()).unwrap();
    assert!(matches!(
        subject_survival(&result, "nobody", &[1.0]),
        Err(PredictError::UnknownSubject(_))
    ));
    assert!(matches!(
        trajectory(&result, "nobody", &[1.0]),
        Err(PredictError::UnknownSubject(_))
    ));
}
