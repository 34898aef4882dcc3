//! Observation log-likelihoods as functions of the linear predictor.
//!
//! Survival rows follow the event coding `c = 1` (event observed) and
//! `c = 0` (right-censored), and the predictor of a survival row is held
//! constant over `[0, s]`, so the cumulative hazard is `s^κ e^η`.

use std::f64::consts::PI;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LikelihoodError {
    #[error("noise precision must be positive, got {0}")]
    NonPositivePrecision(f64),
    #[error("survival time must be positive, got {0}")]
    NonPositiveTime(f64),
    #[error("Weibull shape must be positive, got {0}")]
    NonPositiveShape(f64),
    #[error("event indicator must be 0 or 1, got {0}")]
    InvalidIndicator(u8),
}

/// One longitudinal observation with a Gaussian response.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LongObs {
    pub y: f64,
    pub eta: f64,
    pub tau_eps: f64,
}

/// One right-censored survival observation with a Weibull baseline hazard.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurvObs {
    pub s: f64,
    pub c: u8,
    pub eta: f64,
    pub kappa: f64,
}

impl LongObs {
    fn check(&self) -> Result<(), LikelihoodError> {
        if !(self.tau_eps > 0.0) {
            return Err(LikelihoodError::NonPositivePrecision(self.tau_eps));
        }
        Ok(())
    }
}

impl SurvObs {
    fn check(&self) -> Result<(), LikelihoodError> {
        if !(self.s > 0.0) {
            return Err(LikelihoodError::NonPositiveTime(self.s));
        }
        if !(self.kappa > 0.0) {
            return Err(LikelihoodError::NonPositiveShape(self.kappa));
        }
        if self.c > 1 {
            return Err(LikelihoodError::InvalidIndicator(self.c));
        }
        Ok(())
    }

    /// Cumulative hazard `H(s) = s^κ e^η`.
    pub fn cumulative_hazard(&self) -> f64 {
        self.s.powf(self.kappa) * self.eta.exp()
    }
}

pub fn gaussian_loglik(obs: &LongObs) -> Result<f64, LikelihoodError> {
    obs.check()?;
    let r = obs.y - obs.eta;
    Ok(0.5 * (obs.tau_eps / (2.0 * PI)).ln() - 0.5 * obs.tau_eps * r * r)
}

/// `c·[log κ + (κ−1) log s + η] − s^κ e^η`.
pub fn weibull_loglik(obs: &SurvObs) -> Result<f64, LikelihoodError> {
    obs.check()?;
    let log_hazard = obs.kappa.ln() + (obs.kappa - 1.0) * obs.s.ln() + obs.eta;
    Ok(f64::from(obs.c) * log_hazard - obs.cumulative_hazard())
}

/// Either observation family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Obs {
    Long(LongObs),
    Surv(SurvObs),
}

impl Obs {
    pub fn loglik(&self) -> Result<f64, LikelihoodError> {
        match self {
            Obs::Long(o) => gaussian_loglik(o),
            Obs::Surv(o) => weibull_loglik(o),
        }
    }
}

/// First and second derivative of the log-likelihood in `η`.
pub fn loglik_grad_hess(obs: &Obs) -> Result<(f64, f64), LikelihoodError> {
    match obs {
        Obs::Long(o) => {
            o.check()?;
            Ok((o.tau_eps * (o.y - o.eta), -o.tau_eps))
        }
        Obs::Surv(o) => {
            o.check()?;
            let h = o.cumulative_hazard();
            Ok((f64::from(o.c) - h, -h))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn long(y: f64, eta: f64, tau_eps: f64) -> LongObs {
        LongObs { y, eta, tau_eps }
    }

    fn surv(s: f64, c: u8, eta: f64, kappa: f64) -> SurvObs {
        SurvObs { s, c, eta, kappa }
    }

    #[test]
    fn gaussian_examples() {
        assert!((gaussian_loglik(&long(0.0, 0.0, 1.0)).unwrap() + 0.918_938_533_204_672_7).abs() < 1e-12);
        let v = gaussian_loglik(&long(2.0, 2.0, 5.0)).unwrap();
        assert!((v - 0.5 * (5.0 / (2.0 * PI)).ln()).abs() < 1e-15);
        assert!(matches!(
            gaussian_loglik(&long(0.0, 0.0, 0.0)),
            Err(LikelihoodError::NonPositivePrecision(_))
        ));
    }

    #[test]
    fn gaussian_matches_numerically_normalised_density() {
        // Trapezoid normalisation of the unnormalised kernel exp(-τ r²/2).
        let (tau, y, eta) = (2.0_f64, 1.0_f64, 0.0_f64);
        let h = 1e-4;
        let mut z = 0.0_f64;
        let mut x = -20.0_f64;
        while x <= 20.0 {
            z += (-0.5 * tau * x * x).exp() * h;
            x += h;
        }
        let expect = -0.5 * tau * (y - eta) * (y - eta) - z.ln();
        assert!((gaussian_loglik(&long(y, eta, tau)).unwrap() - expect).abs() < 1e-10);
    }

    #[test]
    fn weibull_examples() {
        assert!((weibull_loglik(&surv(1.0, 1, 0.0, 1.0)).unwrap() + 1.0).abs() < 1e-15);
        assert!((weibull_loglik(&surv(2.0, 0, 0.0, 2.0)).unwrap() + 4.0).abs() < 1e-15);
        let expect = 2f64.ln() + 2f64.ln() + 0.5 - 4.0 * 0.5f64.exp();
        let got = weibull_loglik(&surv(2.0, 1, 0.5, 2.0)).unwrap();
        assert!((got - expect).abs() < 1e-14);
        assert!((got + 4.708_591).abs() < 1e-6);
    }

    #[test]
    fn weibull_errors() {
        assert!(matches!(
            weibull_loglik(&surv(0.0, 1, 0.0, 1.0)),
            Err(LikelihoodError::NonPositiveTime(_))
        ));
        assert!(matches!(
            weibull_loglik(&surv(1.0, 1, 0.0, -1.0)),
            Err(LikelihoodError::NonPositiveShape(_))
        ));
    }

    #[test]
    fn closed_form_derivatives() {
        assert_eq!(loglik_grad_hess(&Obs::Long(long(1.0, 0.0, 2.0))).unwrap(), (2.0, -2.0));
        assert_eq!(loglik_grad_hess(&Obs::Surv(surv(1.0, 1, 0.0, 1.0))).unwrap(), (0.0, -1.0));
    }

    #[test]
    fn exponential_hazard_special_case() {
        // κ = 1: log-likelihood of a constant hazard λ = e^η.
        for &(s, c, eta) in &[(0.3, 1u8, 0.2), (2.5, 0, -1.0), (1.7, 1, 1.3)] {
            let lambda: f64 = f64::exp(eta);
            let expect = f64::from(c) * lambda.ln() - lambda * s;
            assert_eq!(weibull_loglik(&surv(s, c, eta, 1.0)).unwrap(), expect);
        }
    }

    #[test]
    fn censored_likelihood_is_a_survival_function() {
        let mut prev = 1.0;
        let tiny = (weibull_loglik(&surv(1e-12, 0, 0.4, 1.7)).unwrap()).exp();
        assert!((tiny - 1.0).abs() < 1e-12);
        for k in 1..200 {
            let s = k as f64 * 0.05;
            let v = weibull_loglik(&surv(s, 0, 0.4, 1.7)).unwrap().exp();
            assert!(v <= prev);
            prev = v;
        }
    }

    fn fd_check(obs: Obs) {
        let h = 1e-5;
        let with_eta = |e: f64| match obs {
            Obs::Long(o) => Obs::Long(LongObs { eta: e, ..o }),
            Obs::Surv(o) => Obs::Surv(SurvObs { eta: e, ..o }),
        };
        let eta = match obs {
            Obs::Long(o) => o.eta,
            Obs::Surv(o) => o.eta,
        };
        let f = |e: f64| with_eta(e).loglik().unwrap();
        let g = |e: f64| loglik_grad_hess(&with_eta(e)).unwrap().0;
        let (grad, hess) = loglik_grad_hess(&obs).unwrap();
        let fd_grad = (f(eta + h) - f(eta - h)) / (2.0 * h);
        let fd_hess = (g(eta + h) - g(eta - h)) / (2.0 * h);
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
        assert!(rel(fd_grad, grad) < 1e-6, "grad {grad} vs {fd_grad}");
        assert!(rel(fd_hess, hess) < 1e-6, "hess {hess} vs {fd_hess}");
    }

    proptest! {
        #[test]
        fn gaussian_derivatives_match_finite_differences(
            y in -5.0..5.0f64, eta in -3.0..3.0f64, tau in 0.05..50.0f64
        ) {
            fd_check(Obs::Long(long(y, eta, tau)));
        }

        #[test]
        fn weibull_derivatives_match_finite_differences(
            s in 0.01..5.0f64, c in 0u8..2, eta in -3.0..3.0f64, kappa in 0.3..3.0f64
        ) {
            fd_check(Obs::Surv(surv(s, c, eta, kappa)));
        }

        #[test]
        fn weibull_curvature_is_negative(
            s in 1e-3..20.0f64, c in 0u8..2, eta in -10.0..10.0f64, kappa in 0.1..5.0f64
        ) {
            let (_, h) = loglik_grad_hess(&Obs::Surv(surv(s, c, eta, kappa))).unwrap();
            prop_assert!(h < 0.0);
        }
    }
}
