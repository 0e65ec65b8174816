//! Calibration of the three distributed noise mechanisms: closed-form
//! Skellam variance selection, the accuracy bound, per-user noise splitting,
//! sequential composition over the query series, and the epsilon bound
//! implied by the security parameters.

use crate::dist::{DistError, NoiseSpec, SkellamParams};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MechanismError {
    #[error("invalid mechanism parameter: {0}")]
    InvalidParameter(String),
    #[error("calibration denominator is not positive (epsilon/S too extreme)")]
    DegenerateCalibration,
    #[error(transparent)]
    Dist(#[from] DistError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MechanismKind {
    Skellam,
    Geometric,
    Binomial,
    None,
}

/// Everything DP calibration consumes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechanismParams {
    pub epsilon: f64,
    pub delta: f64,
    pub beta: f64,
    /// a-priori lower bound on the fraction of uncompromised users
    pub gamma: f64,
    pub sensitivity: u64,
    pub n_users: u64,
    pub lambda_queries: u64,
}

impl MechanismParams {
    pub fn validate(&self) -> Result<(), MechanismError> {
        let bad = |m: &str| Err(MechanismError::InvalidParameter(m.to_string()));
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be > 0");
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad("delta must be in (0,1)");
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad("beta must be in (0,1)");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must be in (0,1]");
        }
        if self.sensitivity < 1 {
            return bad("sensitivity must be >= 1");
        }
        if self.n_users < 1 {
            return bad("n_users must be >= 1");
        }
        if self.lambda_queries < 1 {
            return bad("lambda_queries must be >= 1");
        }
        Ok(())
    }
}

/// A calibrated total noise variance and its per-user split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibratedNoise {
    pub kind: MechanismKind,
    pub total_variance: f64,
    pub per_user_variance: f64,
}

/// 1 - cosh(x) + x*sinh(x), switching to the series x^2/2 + x^4/8 + x^6/144
/// for small x where the direct form cancels catastrophically.
fn calibration_denominator(x: f64) -> f64 {
    if x.abs() < 1e-3 {
        let x2 = x * x;
        x2 / 2.0 + x2 * x2 / 8.0 + x2 * x2 * x2 / 144.0
    } else {
        1.0 - x.cosh() + x * x.sinh()
    }
}

/// Total Skellam variance mu preserving (epsilon, delta)-DP at sensitivity S:
/// mu = (log(1/delta) + epsilon) / (1 - cosh(eps/S) + (eps/S)*sinh(eps/S)).
pub fn calibrate_skellam_variance(p: &MechanismParams) -> Result<f64, MechanismError> {
    p.validate()?;
    let x = p.epsilon / p.sensitivity as f64;
    let denom = calibration_denominator(x);
    if !(denom > 0.0) {
        return Err(MechanismError::DegenerateCalibration);
    }
    Ok(((1.0 / p.delta).ln() + p.epsilon) / denom)
}

/// The closed-form upper bound 2 (S/eps)^2 (log(1/delta) + eps) on the
/// calibrated variance.
pub fn skellam_variance_upper_bound(p: &MechanismParams) -> Result<f64, MechanismError> {
    p.validate()?;
    let s_over_eps = p.sensitivity as f64 / p.epsilon;
    Ok(2.0 * s_over_eps * s_over_eps * ((1.0 / p.delta).ln() + p.epsilon))
}

/// Split a total variance across the gamma*n uncompromised users:
/// mu_user = mu / (gamma * n).
pub fn split_per_user(
    kind: MechanismKind,
    mu: f64,
    gamma: f64,
    n: u64,
) -> Result<CalibratedNoise, MechanismError> {
    if !(mu > 0.0) {
        return Err(MechanismError::InvalidParameter(
            "total variance must be > 0".into(),
        ));
    }
    if !(gamma > 0.0 && gamma <= 1.0) || n < 1 {
        return Err(MechanismError::InvalidParameter(
            "gamma must be in (0,1] and n >= 1".into(),
        ));
    }
    Ok(CalibratedNoise {
        kind,
        total_variance: mu,
        per_user_variance: mu / (gamma * n as f64),
    })
}

/// The accuracy theorem's alpha:
/// alpha = S/eps * (1/gamma * (log(1/delta) + eps) + log(2/beta)).
pub fn accuracy_alpha(p: &MechanismParams) -> Result<f64, MechanismError> {
    p.validate()?;
    let s_over_eps = p.sensitivity as f64 / p.epsilon;
    Ok(s_over_eps * ((1.0 / p.delta).ln() + p.epsilon) / p.gamma + s_over_eps * (2.0 / p.beta).ln())
}

/// Sequential composition over lambda queries scales a single-query variance
/// to lambda^2 * mu'.
pub fn compose_over_queries(mu_single: f64, lambda: u64) -> Result<f64, MechanismError> {
    if lambda < 1 {
        return Err(MechanismError::InvalidParameter("lambda must be >= 1".into()));
    }
    Ok(lambda as f64 * lambda as f64 * mu_single)
}

/// The epsilon implied by the security-driven noise level, with its sandwich
/// bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonBounds {
    pub epsilon: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Solve 2 (w*lambda/eps)^2 (log(1/delta) + eps) = 4 gamma n lambda^2 kappa s^2
/// for eps:
/// eps = (w^2 + sqrt(w^4 + 8 w^2 log(1/delta) gamma n kappa s^2)) / (4 gamma n kappa s^2),
/// bounded below by sqrt(w^2 log(1/delta) / (2 gamma n kappa s^2)) and above
/// by that plus w^2 / (2 gamma n kappa s^2).
pub fn epsilon_from_security(
    w: u64,
    gamma: f64,
    n: u64,
    kappa: u64,
    slack_s: u64,
    delta: f64,
) -> Result<EpsilonBounds, MechanismError> {
    if w < 1 || n < 1 || kappa < 1 || slack_s < 1 {
        return Err(MechanismError::InvalidParameter(
            "w, n, kappa, s must be positive".into(),
        ));
    }
    if !(gamma > 0.0 && gamma <= 1.0) || !(delta > 0.0 && delta < 1.0) {
        return Err(MechanismError::InvalidParameter(
            "gamma in (0,1], delta in (0,1)".into(),
        ));
    }
    let w2 = (w * w) as f64;
    let log_inv_delta = (1.0 / delta).ln();
    let gnks2 = gamma * n as f64 * kappa as f64 * (slack_s * slack_s) as f64;
    let epsilon = (w2 + (w2 * w2 + 8.0 * w2 * log_inv_delta * gnks2).sqrt()) / (4.0 * gnks2);
    let lower = (w2 * log_inv_delta / (2.0 * gnks2)).sqrt();
    let upper = lower + w2 / (2.0 * gnks2);
    debug_assert!(lower <= epsilon * (1.0 + 1e-12) && epsilon <= upper * (1.0 + 1e-12));
    Ok(EpsilonBounds {
        epsilon,
        lower,
        upper,
    })
}

/// Binomial mechanism total trial count: N = ceil(64 S^2 log(2/delta) / eps^2).
/// The constant follows the classical binomial-mechanism bound.
pub fn binomial_total_trials(p: &MechanismParams) -> Result<u64, MechanismError> {
    p.validate()?;
    let s2 = (p.sensitivity * p.sensitivity) as f64;
    Ok((64.0 * s2 * (2.0 / p.delta).ln() / (p.epsilon * p.epsilon)).ceil() as u64)
}

fn ceil_to_even(x: f64) -> u64 {
    let c = x.ceil() as u64;
    let c = c.max(2);
    if c % 2 == 0 {
        c
    } else {
        c + 1
    }
}

/// Build the per-user noise specification for a mechanism.
///
/// Skellam: each uncompromised user adds Sk(mu/(gamma n)).
/// Geometric: with activation probability min(1, log(1/delta)/(gamma n)) a
/// user emits one full Geom(e^{-eps/S}) draw, else 0.
/// Binomial: each user adds a centered Binomial(N_user, 1/2) with
/// N_user = ceil-to-even(N_total / (gamma n)).
pub fn per_user_noise_spec(
    kind: MechanismKind,
    p: &MechanismParams,
) -> Result<NoiseSpec, MechanismError> {
    p.validate()?;
    let gamma_n = p.gamma * p.n_users as f64;
    match kind {
        MechanismKind::Skellam => {
            let mu = calibrate_skellam_variance(p)?;
            Ok(NoiseSpec::Skellam(SkellamParams::new(mu / gamma_n)?))
        }
        MechanismKind::Geometric => {
            let alpha = (-p.epsilon / p.sensitivity as f64).exp();
            let activation = ((1.0 / p.delta).ln() / gamma_n).min(1.0);
            Ok(NoiseSpec::Geometric { alpha, activation })
        }
        MechanismKind::Binomial => {
            let n_total = binomial_total_trials(p)?;
            Ok(NoiseSpec::Binomial {
                n_user: ceil_to_even(n_total as f64 / gamma_n),
            })
        }
        MechanismKind::None => Ok(NoiseSpec::None),
    }
}

/// Draw one user's noise contribution for the given mechanism.
pub fn distributed_noise_share<R: Rng>(
    kind: MechanismKind,
    p: &MechanismParams,
    rng: &mut R,
) -> Result<i64, MechanismError> {
    let spec = per_user_noise_spec(kind, p)?;
    Ok(spec.sample(rng)?)
}
