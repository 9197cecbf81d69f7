//! Bandit algorithms: algorithm statistics, action probabilities and their gradients.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::linalg::Gram;
use crate::rng::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicyKind {
    /// Arm-mean difference, thresholded at zero.
    MabEpsilonGreedy { epsilon: f64 },
    /// Conjugate Gaussian posterior per arm; treats with `P(mu1 > mu0)`.
    GaussianThompson {
        prior_mean: f64,
        prior_var: f64,
        noise_var: f64,
    },
    /// Ridge fit of `[phi, a phi]`, thresholded on the advantage.
    ContextualEpsilonGreedy { epsilon: f64, lambda: f64 },
    /// Ridge fit of `[phi, a phi]`, clipped logistic in the advantage.
    Boltzmann { pi_min: f64, steepness: f64, lambda: f64 },
    /// Non-adaptive randomization.
    Fixed { prob: f64 },
}

impl PolicyKind {
    pub fn thompson_default() -> Self {
        PolicyKind::GaussianThompson {
            prior_mean: 0.0,
            prior_var: 1.0,
            noise_var: 1.0,
        }
    }

    pub fn validate(&self, feature_dim: usize) -> Result<()> {
        let linear = |lambda: f64| -> Result<()> {
            if !(lambda >= 0.0 && lambda.is_finite()) {
                return Err(Error::config(format!("ridge lambda must be >= 0, got {lambda}")));
            }
            if feature_dim == 0 {
                return Err(Error::config(
                    "contextual policy needs an environment with context features",
                ));
            }
            Ok(())
        };
        match *self {
            PolicyKind::MabEpsilonGreedy { epsilon } => check_epsilon(epsilon),
            PolicyKind::ContextualEpsilonGreedy { epsilon, lambda } => {
                check_epsilon(epsilon)?;
                linear(lambda)
            }
            PolicyKind::GaussianThompson {
                prior_mean,
                prior_var,
                noise_var,
            } => {
                if !(prior_mean.is_finite() && prior_var > 0.0 && noise_var > 0.0) {
                    return Err(Error::config("thompson prior needs finite mean and positive variances"));
                }
                Ok(())
            }
            PolicyKind::Boltzmann {
                pi_min,
                steepness,
                lambda,
            } => {
                if !(pi_min > 0.0 && pi_min < 0.5) {
                    return Err(Error::config(format!("pi_min must lie in (0, 0.5), got {pi_min}")));
                }
                if !(steepness > 0.0 && steepness.is_finite()) {
                    return Err(Error::config(format!("steepness must be positive, got {steepness}")));
                }
                linear(lambda)
            }
            PolicyKind::Fixed { prob } => {
                if !(0.0..=1.0).contains(&prob) {
                    return Err(Error::config(format!("fixed probability must lie in [0, 1], got {prob}")));
                }
                Ok(())
            }
        }
    }

    /// Whether the policy is a fitted linear model on `[phi, a phi]`.
    pub fn is_linear(&self) -> bool {
        matches!(
            self,
            PolicyKind::ContextualEpsilonGreedy { .. } | PolicyKind::Boltzmann { .. }
        )
    }

    /// Whether `pi(x, a; beta)` is differentiable in `beta`.
    pub fn is_differentiable(&self) -> bool {
        matches!(self, PolicyKind::Boltzmann { .. } | PolicyKind::Fixed { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::MabEpsilonGreedy { .. } => "mab_epsilon_greedy",
            PolicyKind::GaussianThompson { .. } => "gaussian_thompson",
            PolicyKind::ContextualEpsilonGreedy { .. } => "contextual_epsilon_greedy",
            PolicyKind::Boltzmann { .. } => "boltzmann",
            PolicyKind::Fixed { .. } => "fixed",
        }
    }

    pub fn learner(&self, feature_dim: usize) -> Learner {
        Learner::new(*self, feature_dim)
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::config(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    Ok(())
}

/// Fitted algorithm statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stat", rename_all = "snake_case")]
pub enum Statistic {
    /// Before any data: every algorithm randomizes with probability 1/2.
    Initial,
    Mab {
        beta_hat: f64,
        counts: [u64; 2],
        sums: [f64; 2],
    },
    Thompson {
        mean: [f64; 2],
        var: [f64; 2],
    },
    /// Stacked `[beta0, beta1]` and the unregularized Gram `sum phi~ phi~^T`
    /// (row-major) it was solved from.
    Linear { beta: Vec<f64>, gram: Vec<f64> },
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySnapshot {
    pub update_time: usize,
    pub statistic: Statistic,
}

impl PolicySnapshot {
    pub fn initial(kind: &PolicyKind) -> Self {
        PolicySnapshot {
            update_time: 0,
            statistic: match kind {
                PolicyKind::Fixed { .. } => Statistic::Fixed,
                _ => Statistic::Initial,
            },
        }
    }

    /// Advantage block `beta1` of a linear statistic.
    pub fn beta1(&self) -> Option<&[f64]> {
        match &self.statistic {
            Statistic::Linear { beta, .. } => Some(&beta[beta.len() / 2..]),
            _ => None,
        }
    }

    /// `pi(x, 1; beta_hat)` at algorithm features `phi`.
    pub fn prob_treat(&self, kind: &PolicyKind, phi: &[f64]) -> f64 {
        match (&self.statistic, kind) {
            (Statistic::Fixed, PolicyKind::Fixed { prob }) => *prob,
            (Statistic::Initial, _) => 0.5,
            (Statistic::Mab { beta_hat, .. }, PolicyKind::MabEpsilonGreedy { epsilon }) => {
                mab_epsilon_greedy_prob(*beta_hat, *epsilon)
            }
            (Statistic::Thompson { mean, var }, PolicyKind::GaussianThompson { .. }) => {
                ts_prob_superior(&Posterior { mean: *mean, var: *var })
            }
            (Statistic::Linear { .. }, PolicyKind::ContextualEpsilonGreedy { epsilon, .. }) => {
                threshold_prob(dot(phi, self.beta1().unwrap_or_default()), *epsilon)
            }
            (
                Statistic::Linear { .. },
                PolicyKind::Boltzmann {
                    pi_min, steepness, ..
                },
            ) => boltzmann_from_index(dot(phi, self.beta1().unwrap_or_default()), *pi_min, *steepness),
            (stat, kind) => unreachable!("statistic {stat:?} does not belong to {kind:?}"),
        }
    }

    /// `pi(x, a; beta_hat)`.
    pub fn prob(&self, kind: &PolicyKind, phi: &[f64], action: bool) -> f64 {
        let p = self.prob_treat(kind, phi);
        if action {
            p
        } else {
            1.0 - p
        }
    }

    /// Gradient of `pi(x, 1; beta)` with respect to the stacked statistic,
    /// written into `out` (length `2 * phi.len()`). Snapshots that do not
    /// depend on a fitted statistic have zero gradient.
    pub fn gradient_treat(&self, kind: &PolicyKind, phi: &[f64], out: &mut [f64]) -> Result<()> {
        match (&self.statistic, kind) {
            (Statistic::Initial | Statistic::Fixed, _) => {
                out.fill(0.0);
                Ok(())
            }
            (
                Statistic::Linear { .. },
                PolicyKind::Boltzmann {
                    pi_min, steepness, ..
                },
            ) => {
                let beta1 = self.beta1().unwrap_or_default();
                let d = phi.len();
                out[..d].fill(0.0);
                boltzmann_prob_gradient(phi, beta1, *pi_min, *steepness, &mut out[d..])
            }
            (_, kind) => Err(Error::NotDifferentiable(format!(
                "{} has a discontinuous action probability",
                kind.name()
            ))),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Arm-1 mean minus arm-0 mean; an arm without data has mean 0.
pub fn mab_diff_statistic(history: &[(bool, f64)]) -> f64 {
    let mut counts = [0u64; 2];
    let mut sums = [0.0; 2];
    for (a, r) in history {
        counts[usize::from(*a)] += 1;
        sums[usize::from(*a)] += r;
    }
    arm_diff(&counts, &sums)
}

fn arm_diff(counts: &[u64; 2], sums: &[f64; 2]) -> f64 {
    let mean = |k: usize| if counts[k] == 0 { 0.0 } else { sums[k] / counts[k] as f64 };
    mean(1) - mean(0)
}

fn threshold_prob(index: f64, epsilon: f64) -> f64 {
    if index > 0.0 {
        1.0 - epsilon / 2.0
    } else {
        epsilon / 2.0
    }
}

pub fn mab_epsilon_greedy_prob(beta_hat: f64, epsilon: f64) -> f64 {
    threshold_prob(beta_hat, epsilon)
}

/// Per-arm Gaussian posterior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posterior {
    pub mean: [f64; 2],
    pub var: [f64; 2],
}

fn posterior_from(counts: &[u64; 2], sums: &[f64; 2], prior_mean: f64, prior_var: f64, noise_var: f64) -> Posterior {
    let mut post = Posterior {
        mean: [0.0; 2],
        var: [0.0; 2],
    };
    for a in 0..2 {
        let var = 1.0 / (1.0 / prior_var + counts[a] as f64 / noise_var);
        post.var[a] = var;
        post.mean[a] = var * (prior_mean / prior_var + sums[a] / noise_var);
    }
    post
}

/// Conjugate update with prior `N(0, 1)` and unit noise variance.
pub fn gaussian_ts_posterior(history: &[(bool, f64)]) -> Posterior {
    let mut counts = [0u64; 2];
    let mut sums = [0.0; 2];
    for (a, r) in history {
        counts[usize::from(*a)] += 1;
        sums[usize::from(*a)] += r;
    }
    posterior_from(&counts, &sums, 0.0, 1.0, 1.0)
}

/// `P(mu1 > mu0)` under independent Gaussian posteriors.
pub fn ts_prob_superior(post: &Posterior) -> f64 {
    normal_cdf((post.mean[1] - post.mean[0]) / (post.var[1] + post.var[0]).sqrt())
}

/// Ridge fit of `r` on the stacked features `[phi, a phi]`.
pub fn ridge_ls_update(rows: &[(Vec<f64>, bool, f64)], lambda: f64, update_time: usize) -> Result<PolicySnapshot> {
    let d = rows.first().map_or(0, |r| r.0.len());
    let mut gram = Gram::new(2 * d);
    let mut stacked = vec![0.0; 2 * d];
    for (phi, a, r) in rows {
        if phi.len() != d {
            return Err(Error::domain("feature rows have inconsistent lengths"));
        }
        stack_features(phi, *a, &mut stacked);
        gram.add(&stacked, *r);
    }
    linear_snapshot(&gram, lambda, update_time)
}

fn linear_snapshot(gram: &Gram, lambda: f64, update_time: usize) -> Result<PolicySnapshot> {
    let beta = gram.solve_ridge(lambda)?;
    Ok(PolicySnapshot {
        update_time,
        statistic: Statistic::Linear {
            beta: beta.iter().cloned().collect(),
            gram: gram.matrix().transpose().iter().cloned().collect(),
        },
    })
}

/// `[phi, a phi]`.
#[inline]
pub fn stack_features(phi: &[f64], action: bool, out: &mut [f64]) {
    let d = phi.len();
    out[..d].copy_from_slice(phi);
    if action {
        out[d..].copy_from_slice(phi);
    } else {
        out[d..].fill(0.0);
    }
}

pub fn contextual_eps_greedy_prob(phi: &[f64], beta1: &[f64], epsilon: f64) -> Result<f64> {
    if phi.len() != beta1.len() {
        return Err(Error::domain(format!(
            "features have length {} but the advantage has length {}",
            phi.len(),
            beta1.len()
        )));
    }
    Ok(threshold_prob(dot(phi, beta1), epsilon))
}

fn boltzmann_from_index(index: f64, pi_min: f64, steepness: f64) -> f64 {
    pi_min + (1.0 - 2.0 * pi_min) * sigmoid(steepness * index)
}

pub fn boltzmann_prob(phi: &[f64], beta1: &[f64], pi_min: f64, steepness: f64) -> f64 {
    boltzmann_from_index(dot(phi, beta1), pi_min, steepness)
}

/// `d pi(x, 1; beta) / d beta1`; the action-0 gradient is its negative.
pub fn boltzmann_prob_gradient(phi: &[f64], beta1: &[f64], pi_min: f64, steepness: f64, out: &mut [f64]) -> Result<()> {
    if phi.len() != beta1.len() || out.len() != phi.len() {
        return Err(Error::domain("gradient dimensions do not match the features"));
    }
    let sig = sigmoid(steepness * dot(phi, beta1));
    let scale = (1.0 - 2.0 * pi_min) * steepness * sig * (1.0 - sig);
    for (o, p) in out.iter_mut().zip(phi) {
        *o = scale * p;
    }
    Ok(())
}

/// Draw an action; returns it with the probability of the realized action.
pub fn select_action(prob: f64, stream: &mut Stream) -> (bool, f64) {
    let action = stream.bernoulli(prob);
    (action, if action { prob } else { 1.0 - prob })
}

/// Accumulates pooled data and emits snapshots at update times.
#[derive(Debug, Clone)]
pub struct Learner {
    kind: PolicyKind,
    counts: [u64; 2],
    sums: [f64; 2],
    gram: Gram,
    stacked: Vec<f64>,
}

impl Learner {
    pub fn new(kind: PolicyKind, feature_dim: usize) -> Self {
        let dim = if kind.is_linear() { 2 * feature_dim } else { 0 };
        Learner {
            kind,
            counts: [0; 2],
            sums: [0.0; 2],
            gram: Gram::new(dim),
            stacked: vec![0.0; dim],
        }
    }

    pub fn observe(&mut self, phi: &[f64], action: bool, reward: f64) {
        if self.kind.is_linear() {
            stack_features(phi, action, &mut self.stacked);
            self.gram.add(&self.stacked, reward);
        } else {
            self.counts[usize::from(action)] += 1;
            self.sums[usize::from(action)] += reward;
        }
    }

    pub fn snapshot(&self, update_time: usize) -> Result<PolicySnapshot> {
        let statistic = match self.kind {
            PolicyKind::MabEpsilonGreedy { .. } => Statistic::Mab {
                beta_hat: arm_diff(&self.counts, &self.sums),
                counts: self.counts,
                sums: self.sums,
            },
            PolicyKind::GaussianThompson {
                prior_mean,
                prior_var,
                noise_var,
            } => {
                let p = posterior_from(&self.counts, &self.sums, prior_mean, prior_var, noise_var);
                Statistic::Thompson { mean: p.mean, var: p.var }
            }
            PolicyKind::ContextualEpsilonGreedy { lambda, .. } | PolicyKind::Boltzmann { lambda, .. } => {
                return linear_snapshot(&self.gram, lambda, update_time);
            }
            PolicyKind::Fixed { .. } => Statistic::Fixed,
        };
        Ok(PolicySnapshot { update_time, statistic })
    }
}
