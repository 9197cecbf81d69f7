//! Data-generating environments.
//!
//! Each environment hands out one [`IndividualState`] per participant. The
//! trial engine asks the state for the algorithm features at a decision time,
//! then for the outcome and reward once an action has been chosen.

pub mod oralytics;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

pub use oralytics::{
    burden_criterion, exp_average_weights, oralytics_cost, oralytics_outcome, sample_population,
    CostParams, ExpWindow, IndividualParams, OralyticsEnv, OralyticsState, PopulationSource,
    Responsivity, SyntheticPrior, VectorPrior,
};

/// Environment parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvKind {
    /// Two-period multi-armed environment whose treatment effect drifts.
    NonstationaryMab { mu0: f64, delta1: f64, delta2: f64 },
    /// Scalar covariate `x ~ U[0,1]`, reward linear in `[1, x, x^2]`.
    MisspecifiedLinear { alpha0: [f64; 3], alpha1: [f64; 3] },
    /// Reward driven by an exponentially discounted treatment dosage with AR(1) noise.
    SyntheticDosage {
        alpha0: f64,
        alpha1: f64,
        alpha2: f64,
        gamma: f64,
        rho: f64,
    },
    /// Zero-inflated Poisson brushing-quality simulator.
    OralyticsZip(OralyticsEnv),
}

impl EnvKind {
    pub fn nonstationary_default() -> Self {
        EnvKind::NonstationaryMab {
            mu0: 0.0,
            delta1: 0.0,
            delta2: -0.25,
        }
    }

    pub fn misspecified_default() -> Self {
        EnvKind::MisspecifiedLinear {
            alpha0: MISSPEC_ALPHA0,
            alpha1: MISSPEC_ALPHA1,
        }
    }

    pub fn synthetic_default() -> Self {
        EnvKind::SyntheticDosage {
            alpha0: 0.0,
            alpha1: 1.0,
            alpha2: 0.0,
            gamma: 0.95,
            rho: 0.5f64.sqrt(),
        }
    }

    /// Dimension of the algorithm feature vector `phi(x)`.
    pub fn feature_dim(&self) -> usize {
        match self {
            EnvKind::NonstationaryMab { .. } => 0,
            EnvKind::MisspecifiedLinear { .. } | EnvKind::SyntheticDosage { .. } => 2,
            EnvKind::OralyticsZip(_) => oralytics::ALG_FEATURES,
        }
    }

    pub fn validate(&self, horizon: usize) -> Result<()> {
        let finite = |xs: &[f64]| xs.iter().all(|x| x.is_finite());
        match self {
            EnvKind::NonstationaryMab { mu0, delta1, delta2 } => {
                if !finite(&[*mu0, *delta1, *delta2]) {
                    return Err(Error::config("nonstationary parameters must be finite"));
                }
                if horizon > 2 {
                    return Err(Error::config(format!(
                        "nonstationary environment defines two decision times, horizon is {horizon}"
                    )));
                }
            }
            EnvKind::MisspecifiedLinear { alpha0, alpha1 } => {
                if !finite(alpha0) || !finite(alpha1) {
                    return Err(Error::config("misspecified coefficients must be finite"));
                }
            }
            EnvKind::SyntheticDosage {
                alpha0,
                alpha1,
                alpha2,
                gamma,
                rho,
            } => {
                if !finite(&[*alpha0, *alpha1, *alpha2]) {
                    return Err(Error::config("dosage coefficients must be finite"));
                }
                if !(0.0..1.0).contains(gamma) {
                    return Err(Error::config(format!("gamma must lie in [0, 1), got {gamma}")));
                }
                rng::check_ar1(*rho, 1.0)?;
            }
            EnvKind::OralyticsZip(env) => env.validate(horizon)?,
        }
        Ok(())
    }

    /// Replace file-backed or generated populations with their inline contents.
    pub fn resolved(&self) -> Result<Self> {
        match self {
            EnvKind::OralyticsZip(env) => Ok(EnvKind::OralyticsZip(env.resolved()?)),
            other => Ok(other.clone()),
        }
    }

    /// Fresh per-individual state. `recruit` is that individual's own stream.
    pub fn init_individual(&self, horizon: usize, recruit: &mut Stream) -> Result<IndividualState> {
        Ok(match self {
            EnvKind::NonstationaryMab { .. } => IndividualState::Nonstationary,
            EnvKind::MisspecifiedLinear { .. } => IndividualState::Misspecified { x: 0.0 },
            EnvKind::SyntheticDosage { .. } => IndividualState::Synthetic(SyntheticState::default()),
            EnvKind::OralyticsZip(env) => {
                IndividualState::Oralytics(Box::new(env.init_individual(horizon, recruit)?))
            }
        })
    }
}

pub const MISSPEC_ALPHA0: [f64; 3] = [0.1, 0.1, 0.0];
pub const MISSPEC_ALPHA1: [f64; 3] = [1.0 / 3.0, -2.0, 2.0];

/// State of the dosage environment for one individual.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SyntheticState {
    pub dosage: f64,
    /// Previous reward; the covariate at the next decision time.
    pub prev_reward: f64,
    pub prev_noise: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum IndividualState {
    Nonstationary,
    Misspecified { x: f64 },
    Synthetic(SyntheticState),
    Oralytics(Box<OralyticsState>),
}

impl IndividualState {
    /// Draw (or read) the context at decision time `t` (1-based) and write the
    /// algorithm features into `phi`.
    pub fn observe(&mut self, env: &EnvKind, t: usize, stream: &mut Stream, phi: &mut [f64]) {
        match (self, env) {
            (IndividualState::Nonstationary, _) => {}
            (IndividualState::Misspecified { x }, _) => {
                *x = stream.uniform01();
                phi[0] = 1.0;
                phi[1] = *x;
            }
            (IndividualState::Synthetic(s), _) => {
                phi[0] = 1.0;
                phi[1] = s.prev_reward;
            }
            (IndividualState::Oralytics(s), EnvKind::OralyticsZip(env)) => {
                s.algorithm_features(env, t, phi);
            }
            _ => unreachable!("state built from a different environment"),
        }
    }

    /// Realize the outcome of `action` at decision time `t`; returns `(outcome, reward)`.
    pub fn step(
        &mut self,
        env: &EnvKind,
        t: usize,
        action: bool,
        stream: &mut Stream,
    ) -> Result<(f64, f64)> {
        match (self, env) {
            (IndividualState::Nonstationary, EnvKind::NonstationaryMab { mu0, delta1, delta2 }) => {
                let r = nonstationary_reward_with(*mu0, *delta1, *delta2, action, t, stream.standard_normal())?;
                Ok((r, r))
            }
            (IndividualState::Misspecified { x }, EnvKind::MisspecifiedLinear { alpha0, alpha1 }) => {
                let r = linear_reward(alpha0, alpha1, *x, action, stream.standard_normal());
                Ok((r, r))
            }
            (
                IndividualState::Synthetic(s),
                EnvKind::SyntheticDosage {
                    alpha0,
                    alpha1,
                    alpha2,
                    gamma,
                    rho,
                },
            ) => {
                let noise = rng::ar1_step(s.prev_noise, *rho, 1.0, stream.standard_normal());
                let y = alpha0 + alpha1 * s.dosage + alpha2 * f64::from(u8::from(action)) + noise;
                s.prev_noise = Some(noise);
                s.dosage = dosage_advance(s.dosage, action, *gamma);
                s.prev_reward = y;
                Ok((y, y))
            }
            (IndividualState::Oralytics(s), EnvKind::OralyticsZip(env)) => {
                Ok(s.step(env, t, action, stream))
            }
            _ => unreachable!("state built from a different environment"),
        }
    }
}

fn nonstationary_reward_with(
    mu0: f64,
    delta1: f64,
    delta2: f64,
    action: bool,
    t: usize,
    noise: f64,
) -> Result<f64> {
    let delta = match t {
        1 => delta1,
        2 => delta2,
        _ => return Err(Error::domain(format!("nonstationary decision time must be 1 or 2, got {t}"))),
    };
    Ok(mu0 + delta * f64::from(u8::from(action)) + noise)
}

/// Reward of the default two-period environment (`mu0 = 0`, `delta = (0, -0.25)`).
pub fn nonstationary_reward(action: bool, t: usize, noise: f64) -> Result<f64> {
    nonstationary_reward_with(0.0, 0.0, -0.25, action, t, noise)
}

fn linear_reward(alpha0: &[f64; 3], alpha1: &[f64; 3], x: f64, action: bool, noise: f64) -> f64 {
    let basis = [1.0, x, x * x];
    let base: f64 = basis.iter().zip(alpha0).map(|(b, a)| b * a).sum();
    let adv: f64 = basis.iter().zip(alpha1).map(|(b, a)| b * a).sum();
    base + if action { adv } else { 0.0 } + noise
}

/// Reward of the default misspecified environment at covariate `x`.
pub fn misspecified_reward(x: f64, action: bool, noise: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::domain(format!("covariate must lie in [0, 1], got {x}")));
    }
    Ok(linear_reward(&MISSPEC_ALPHA0, &MISSPEC_ALPHA1, x, action, noise))
}

/// `gamma * dosage + (1 - gamma) * action`: the normalized discounted treatment count.
#[inline]
pub fn dosage_advance(dosage: f64, action: bool, gamma: f64) -> f64 {
    gamma * dosage + (1.0 - gamma) * f64::from(u8::from(action))
}

/// Reward of the default dosage environment (`alpha = (0, 1, 0)`).
pub fn synthetic_reward(dosage: f64, action: bool, noise: f64) -> f64 {
    let _ = action;
    dosage + noise
}

/// Closed-form mean of `(1/T) sum_t Y_t` in the dosage environment when every
/// action is an independent Bernoulli(`p`) draw.
pub fn synthetic_baseline_mean(alpha0: f64, alpha1: f64, alpha2: f64, gamma: f64, p: f64, horizon: usize) -> f64 {
    // E[dosage_t] = p (1 - gamma^(t-1)).
    let t = horizon as f64;
    let mean_dosage = p * (1.0 - (1.0 - gamma.powf(t)) / (t * (1.0 - gamma)));
    alpha0 + alpha1 * mean_dosage + alpha2 * p
}
