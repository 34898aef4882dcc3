//! Blockwise random-walk Metropolis over `(x, θ)` for small instances.
//!
//! The augmented field is sampled as `(x_rest, e = η − A x_rest)`, a
//! volume-preserving change of variables, so that the tight coupling between
//! the predictors and the rest of the field does not stall the chain.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inference::gaussian_approximation;
use crate::model::{
    BlockKind, JointModel, ModelError, PriorPrecision, AUGMENTATION_PRECISION,
};

pub const MAX_DIMENSION: usize = 2000;
const TARGET_ACCEPTANCE: f64 = 0.3;
const ADAPT_EVERY: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("latent dimension {dim} exceeds the oracle limit of {max}")]
    DimensionTooLarge { dim: usize, max: usize },
    #[error("the target density is not finite at the start point")]
    DegenerateTarget,
    #[error("invalid sampler configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thinning: usize,
    /// Initial proposal scale multipliers by block name; 1 when absent.
    pub step_scales: BTreeMap<String, f64>,
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            iterations: 200_000,
            burn_in: 50_000,
            thinning: 10,
            step_scales: BTreeMap::new(),
            seed: 1,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<(), OracleError> {
        if self.iterations <= self.burn_in {
            return Err(OracleError::InvalidConfig("iterations must exceed burn_in".into()));
        }
        if self.thinning == 0 {
            return Err(OracleError::InvalidConfig("thinning must be positive".into()));
        }
        if self.step_scales.values().any(|s| !(*s > 0.0)) {
            return Err(OracleError::InvalidConfig("step scales must be positive".into()));
        }
        Ok(())
    }
}

/// A group of coordinates updated together.
#[derive(Debug, Clone)]
pub struct SamplerBlock {
    pub name: String,
    pub indices: Vec<usize>,
    /// Initial proposal standard deviations.
    pub scales: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Chain {
    /// Post burn-in draws after thinning.
    pub samples: Vec<Vec<f64>>,
    /// Post burn-in acceptance rate by block.
    pub acceptance: BTreeMap<String, f64>,
}

struct BlockState {
    indices: Vec<usize>,
    chol: DMatrix<f64>,
    log_scale: f64,
    accepted: usize,
    proposed: usize,
    sum: DVector<f64>,
    outer: DMatrix<f64>,
    n_stats: usize,
    adapt_steps: usize,
}

/// Adaptive blockwise random-walk Metropolis. Proposal covariances and
/// scales are tuned during burn-in only and frozen afterwards.
pub fn metropolis<F: FnMut(&[f64]) -> f64>(
    mut log_target: F,
    start: Vec<f64>,
    blocks: &[SamplerBlock],
    config: &McmcConfig,
) -> Result<Chain, OracleError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let unif = Uniform::new(0.0, 1.0).expect("unit interval");
    let mut x = start;
    let mut lp = log_target(&x);
    if !lp.is_finite() {
        return Err(OracleError::DegenerateTarget);
    }
    let mut states: Vec<BlockState> = blocks
        .iter()
        .map(|b| {
            let d = b.indices.len();
            let mult = config.step_scales.get(&b.name).copied().unwrap_or(1.0);
            BlockState {
                indices: b.indices.clone(),
                chol: DMatrix::from_diagonal(&DVector::from_iterator(d, b.scales.iter().map(|s| s * mult))),
                log_scale: (2.38 / (d as f64).sqrt()).ln(),
                accepted: 0,
                proposed: 0,
                sum: DVector::zeros(d),
                outer: DMatrix::zeros(d, d),
                n_stats: 0,
                adapt_steps: 0,
            }
        })
        .collect();

    let mut samples = Vec::with_capacity((config.iterations - config.burn_in) / config.thinning + 1);
    let mut proposal = x.clone();
    for it in 0..config.iterations {
        let burning = it < config.burn_in;
        if it == config.burn_in {
            for st in &mut states {
                st.accepted = 0;
                st.proposed = 0;
            }
        }
        for st in &mut states {
            let d = st.indices.len();
            let noise = DVector::from_iterator(d, (0..d).map(|_| StandardNormal.sample(&mut rng)));
            let step = &st.chol * noise * st.log_scale.exp();
            proposal.copy_from_slice(&x);
            for (k, &i) in st.indices.iter().enumerate() {
                proposal[i] += step[k];
            }
            let lp_new = log_target(&proposal);
            let u: f64 = unif.sample(&mut rng);
            let accept = lp_new.is_finite() && u.ln() < lp_new - lp;
            st.proposed += 1;
            if accept {
                std::mem::swap(&mut x, &mut proposal);
                lp = lp_new;
                st.accepted += 1;
            }
            if burning {
                st.adapt_steps += 1;
                let gain = (st.adapt_steps as f64 + 10.0).powf(-0.6);
                st.log_scale += gain * (f64::from(u8::from(accept)) - TARGET_ACCEPTANCE);
                if it >= config.burn_in / 4 {
                    let v = DVector::from_iterator(d, st.indices.iter().map(|&i| x[i]));
                    st.sum += &v;
                    st.outer += &v * v.transpose();
                    st.n_stats += 1;
                }
            }
        }
        if burning && it >= config.burn_in / 4 && (it + 1) % ADAPT_EVERY == 0 {
            for st in &mut states {
                if st.n_stats < 2 * st.indices.len() + 10 {
                    continue;
                }
                let n = st.n_stats as f64;
                let mean = &st.sum / n;
                let mut cov = &st.outer / n - &mean * mean.transpose();
                let floor = cov.diagonal().max().max(1e-300) * 1e-8;
                for k in 0..cov.nrows() {
                    cov[(k, k)] += floor;
                }
                if let Some(c) = cov.cholesky() {
                    st.chol = c.l();
                }
            }
        }
        if !burning && (it - config.burn_in).is_multiple_of(config.thinning) {
            samples.push(x.clone());
        }
    }
    let acceptance = blocks
        .iter()
        .zip(&states)
        .map(|(b, st)| (b.name.clone(), st.accepted as f64 / st.proposed.max(1) as f64))
        .collect();
    Ok(Chain { samples, acceptance })
}

/// Effective sample size by Geyer's initial positive sequence.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let c0 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if c0 <= 0.0 {
        return n as f64;
    }
    let rho = |lag: usize| -> f64 {
        (0..n - lag).map(|i| (x[i] - mean) * (x[i + lag] - mean)).sum::<f64>() / (n as f64 * c0)
    };
    let mut tau = -1.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = if k == 0 { 1.0 } else { rho(2 * k) } + rho(2 * k + 1);
        if pair <= 0.0 {
            break;
        }
        // Initial monotone sequence.
        let pair = pair.min(prev);
        tau += 2.0 * pair;
        prev = pair;
        k += 1;
    }
    n as f64 / tau.max(1.0 / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub label: String,
    pub mean: f64,
    pub sd: f64,
    pub ess: f64,
    pub mcse: f64,
}

impl ParamSummary {
    pub fn from_draws(label: String, draws: &[f64]) -> Self {
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let sd = (draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
        let ess = effective_sample_size(draws);
        Self {
            label,
            mean,
            sd,
            ess,
            mcse: sd / ess.sqrt(),
        }
    }
}

/// Posterior summaries of the sampler, keyed like [`crate::inference::FitResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcSummary {
    pub tag: String,
    pub hyperparameters: BTreeMap<String, ParamSummary>,
    pub latent: BTreeMap<String, Vec<ParamSummary>>,
    pub acceptance: BTreeMap<String, f64>,
    pub iterations: usize,
    pub draws: usize,
}

impl McmcSummary {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serialises")
    }
}

/// Samples the joint posterior of the model's latent field and free
/// hyperparameters.
pub fn run_mcmc(model: &JointModel, config: &McmcConfig) -> Result<McmcSummary, OracleError> {
    config.validate()?;
    if model.dim() > MAX_DIMENSION {
        return Err(OracleError::DimensionTooLarge {
            dim: model.dim(),
            max: MAX_DIMENSION,
        });
    }
    let space = model.space();
    let layout = model.layout();
    let design = model.design();
    let n_x = layout.eta_offset();
    let n_eta = layout.n_eta();
    let d = space.dim();

    // Start at the conditional mode for the prior's start point.
    let z0 = space.start();
    let theta0 = space.to_params(&z0);
    let approx = gaussian_approximation(model, &theta0).map_err(|_| OracleError::DegenerateTarget)?;
    let var = approx.precision_factor.marginal_variances();
    let prior0 = model.prior_precision(&theta0)?;
    let ax = prior0.mapping.mul_vec(&approx.mode[..n_x]);
    let mut start = approx.mode[..n_x].to_vec();
    start.extend(model.eta(&approx.mode).iter().zip(&ax).map(|(e, a)| e - a));
    start.extend(&z0);

    let mut blocks = Vec::new();
    for b in layout.blocks() {
        if b.len == 0 || matches!(b.kind, BlockKind::EtaL | BlockKind::EtaS) {
            continue;
        }
        blocks.push(SamplerBlock {
            name: b.kind.as_str().to_string(),
            indices: (b.offset..b.offset + b.len).collect(),
            scales: var[b.offset..b.offset + b.len].iter().map(|v| v.max(1e-12).sqrt()).collect(),
        });
    }
    if n_eta > 0 {
        blocks.push(SamplerBlock {
            name: "eta".into(),
            indices: (n_x..n_x + n_eta).collect(),
            scales: vec![AUGMENTATION_PRECISION.powf(-0.5); n_eta],
        });
    }
    if d > 0 {
        blocks.push(SamplerBlock {
            name: "theta".into(),
            indices: (n_x + n_eta..n_x + n_eta + d).collect(),
            scales: vec![0.1; d],
        });
    }

    let mut cache: Option<(Vec<f64>, PriorPrecision, f64)> = None;
    let mut full = vec![0.0; n_x + n_eta];
    let target = |s: &[f64]| -> f64 {
        let z = &s[n_x + n_eta..];
        if z.iter().any(|v| !v.is_finite()) {
            return f64::NEG_INFINITY;
        }
        let theta = space.to_params(z);
        if cache.as_ref().is_none_or(|(cz, _, _)| cz.as_slice() != z) {
            let Ok(prior) = model.prior_precision(&theta) else {
                return f64::NEG_INFINITY;
            };
            let hyper = space.log_prior(z);
            cache = Some((z.to_vec(), prior, hyper));
        }
        let (_, prior, hyper) = cache.as_ref().expect("cached prior");
        full[..n_x].copy_from_slice(&s[..n_x]);
        let ax = prior.mapping.mul_vec(&s[..n_x]);
        for r in 0..n_eta {
            full[n_x + r] = ax[r] + s[n_x + r];
        }
        let lik = match model.lik_terms(&theta, model.eta(&full)) {
            Ok(t) => t.iter().map(|t| t.value).sum::<f64>(),
            Err(_) => return f64::NEG_INFINITY,
        };
        model.log_latent_density(prior, &full) + lik + hyper
    };
    let chain = metropolis(target, start, &blocks, config)?;

    let column = |j: usize| -> Vec<f64> { chain.samples.iter().map(|s| s[j]).collect() };
    let mut latent = BTreeMap::new();
    for b in layout.blocks() {
        if b.len == 0 || matches!(b.kind, BlockKind::EtaL | BlockKind::EtaS) {
            continue;
        }
        let summaries = (0..b.len)
            .map(|i| {
                let label = match b.kind {
                    BlockKind::Alpha => format!("alpha[{i}]"),
                    BlockKind::Beta => design.long_names[i].clone(),
                    BlockKind::Gamma => design.surv_names[i].clone(),
                    BlockKind::W => format!("w[{}]", design.subjects[i]),
                    BlockKind::V => format!("v[{}]", design.subjects[i]),
                    BlockKind::M => format!("m[{}]", design.subjects[design.subject_index[design.n_long + i]]),
                    BlockKind::EtaL | BlockKind::EtaS => unreachable!(),
                };
                ParamSummary::from_draws(label, &column(b.offset + i))
            })
            .collect();
        latent.insert(b.kind.as_str().to_string(), summaries);
    }
    let mut hyperparameters = BTreeMap::new();
    for (k, t) in space.transforms().iter().enumerate() {
        let z = column(n_x + n_eta + k);
        let natural: Vec<f64> = z.iter().map(|&v| t.backward(v)).collect();
        hyperparameters.insert(
            t.name.as_str().to_string(),
            ParamSummary::from_draws(t.name.as_str().to_string(), &natural),
        );
        if let Some(vname) = t.name.variance_name() {
            let variance: Vec<f64> = z.iter().map(|&v| (-v).exp()).collect();
            hyperparameters.insert(vname.to_string(), ParamSummary::from_draws(vname.to_string(), &variance));
        }
    }
    Ok(McmcSummary {
        tag: "oracle".into(),
        hyperparameters,
        latent,
        acceptance: chain.acceptance,
        iterations: config.iterations,
        draws: chain.samples.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::priors::{pc_precision_logdensity, PcPrecisionPrior};

    fn toy_config(seed: u64) -> McmcConfig {
        McmcConfig {
            iterations: 60_000,
            burn_in: 10_000,
            thinning: 5,
            seed,
            ..Default::default()
        }
    }

    fn scalar_block() -> Vec<SamplerBlock> {
        vec![SamplerBlock {
            name: "x".into(),
            indices: vec![0],
            scales: vec![1.0],
        }]
    }

    #[test]
    fn conjugate_gaussian_toy() {
        // x ~ N(0, 1), y = 2 ~ N(x, 1): x | y ~ N(1, 1/2).
        let chain = metropolis(
            |x| -0.5 * x[0] * x[0] - 0.5 * (2.0 - x[0]).powi(2),
            vec![0.0],
            &scalar_block(),
            &toy_config(3),
        )
        .unwrap();
        let draws: Vec<f64> = chain.samples.iter().map(|s| s[0]).collect();
        let s = ParamSummary::from_draws("x".into(), &draws);
        assert!((s.mean - 1.0).abs() < 3.0 * s.mcse, "{s:?}");
        assert!((s.sd - 0.5f64.sqrt()).abs() < 0.05);
        let acc = chain.acceptance["x"];
        assert!(acc > 0.1 && acc < 0.6, "{acc}");
    }

    #[test]
    fn pc_prior_tail_probability() {
        let prior = PcPrecisionPrior::new(1.0, 0.01).unwrap();
        // Sample z = log τ; P(σ > 1) = P(τ < 1) = P(z < 0).
        let chain = metropolis(
            |z| pc_precision_logdensity(z[0].exp(), &prior).map_or(f64::NEG_INFINITY, |l| l + z[0]),
            vec![3.0],
            &scalar_block(),
            &McmcConfig {
                iterations: 400_000,
                burn_in: 20_000,
                thinning: 2,
                seed: 11,
                ..Default::default()
            },
        )
        .unwrap();
        let tail: Vec<f64> = chain.samples.iter().map(|s| f64::from(u8::from(s[0] < 0.0))).collect();
        let s = ParamSummary::from_draws("tail".into(), &tail);
        assert!((s.mean - 0.01).abs() < 3.0 * s.mcse, "{s:?}");
    }

    #[test]
    fn seeded_determinism() {
        let run = |seed| {
            metropolis(|x| -0.5 * x[0] * x[0], vec![0.5], &scalar_block(), &toy_config(seed))
                .unwrap()
                .samples
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6));
    }

    #[test]
    fn iid_draws_have_full_ess() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..20_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let ess = effective_sample_size(&x);
        assert!((ess / 20_000.0 - 1.0).abs() < 0.1, "{ess}");
    }

    #[test]
    fn ar1_ess() {
        // AR(1) with φ = 0.9 has τ = (1 + φ)/(1 − φ) = 19.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut x = vec![0.0f64; 200_000];
        for i in 1..x.len() {
            let e: f64 = StandardNormal.sample(&mut rng);
            x[i] = 0.9 * x[i - 1] + e;
        }
        let ess = effective_sample_size(&x);
        assert!((200_000.0 / ess / 19.0 - 1.0).abs() < 0.15, "{ess}");
    }

    #[test]
    fn rejects_bad_config() {
        let c = McmcConfig {
            iterations: 10,
            burn_in: 10,
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(OracleError::InvalidConfig(_))));
    }
}
