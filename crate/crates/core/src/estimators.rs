//! Post-trial inference: least-squares M-estimators with standard and
//! adaptive sandwich variances, confidence intervals, the replicability
//! metric and analytic targets.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::env::{synthetic_baseline_mean, EnvKind};
use crate::error::{Error, Result};
use crate::linalg::{inverse_spd, solve_spd, symmetrize};
use crate::policy::{stack_features, PolicyKind, PolicySnapshot, Statistic};
use crate::rng::{derive_stream, SeedSpec};
use crate::trial::TrajectorySet;

/// Design used by the analyst's regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Featurization {
    /// Intercept only.
    Constant,
    /// The algorithm features `phi(x)`.
    Context,
    /// `[phi(x), a phi(x)]`.
    Stacked,
}

/// Which recorded column is regressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Response {
    #[default]
    Outcome,
    Reward,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EstimandKind {
    /// `(1/n) sum_i (1/T) sum_t Y_it`.
    AverageReward {
        #[serde(default)]
        response: Response,
    },
    LeastSquares {
        featurization: Featurization,
        #[serde(default)]
        response: Response,
    },
}

fn default_level() -> f64 {
    0.95
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimandSpec {
    pub estimator: EstimandKind,
    #[serde(default = "default_level")]
    pub level: f64,
    /// Coordinate of `theta` that intervals and coverage refer to.
    #[serde(default)]
    pub target_index: usize,
}

impl EstimandSpec {
    pub fn average() -> Self {
        EstimandSpec {
            estimator: EstimandKind::AverageReward {
                response: Response::Outcome,
            },
            level: 0.95,
            target_index: 0,
        }
    }

    pub fn validate(&self, feature_dim: usize) -> Result<()> {
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::config(format!("confidence level must lie in (0, 1), got {}", self.level)));
        }
        let dim = self.dim(feature_dim);
        if dim == 0 {
            return Err(Error::config("estimand featurization has no columns for this environment"));
        }
        if self.target_index >= dim {
            return Err(Error::config(format!(
                "target_index {} out of range for a {dim}-dimensional estimand",
                self.target_index
            )));
        }
        Ok(())
    }

    pub fn dim(&self, feature_dim: usize) -> usize {
        match self.estimator {
            EstimandKind::AverageReward { .. } => 1,
            EstimandKind::LeastSquares { featurization, .. } => match featurization {
                Featurization::Constant => 1,
                Featurization::Context => feature_dim,
                Featurization::Stacked => 2 * feature_dim,
            },
        }
    }

    fn parts(&self) -> (Featurization, Response) {
        match self.estimator {
            EstimandKind::AverageReward { response } => (Featurization::Constant, response),
            EstimandKind::LeastSquares {
                featurization,
                response,
            } => (featurization, response),
        }
    }
}

/// `z_it` and `y_it` for every cell.
struct Design<'a> {
    trajs: &'a TrajectorySet,
    featurization: Featurization,
    response: Response,
    dim: usize,
}

impl<'a> Design<'a> {
    fn new(trajs: &'a TrajectorySet, spec: &EstimandSpec) -> Self {
        let (featurization, response) = spec.parts();
        Design {
            trajs,
            featurization,
            response,
            dim: spec.dim(trajs.feature_dim),
        }
    }

    fn z(&self, i: usize, t: usize, out: &mut [f64]) {
        match self.featurization {
            Featurization::Constant => out[0] = 1.0,
            Featurization::Context => out.copy_from_slice(self.trajs.context(i, t)),
            Featurization::Stacked => {
                let cell = self.trajs.cell(i, t);
                stack_features(self.trajs.context(i, t), self.trajs.actions[cell], out)
            }
        }
    }

    fn y(&self, cell: usize) -> f64 {
        match self.response {
            Response::Outcome => self.trajs.outcomes[cell],
            Response::Reward => self.trajs.rewards[cell],
        }
    }
}

/// Pieces shared by the point estimate and both sandwich variances.
#[derive(Debug, Clone)]
pub struct MEstimate {
    pub theta: DVector<f64>,
    /// `(1/n) sum_i sum_t z z^T`.
    pub bread: DMatrix<f64>,
    /// Per-individual score `sum_t z (y - z^T theta)`.
    pub scores: Vec<DVector<f64>>,
}

pub fn m_estimate(trajs: &TrajectorySet, spec: &EstimandSpec) -> Result<MEstimate> {
    spec.validate(trajs.feature_dim)?;
    let design = Design::new(trajs, spec);
    let p = design.dim;
    let n = trajs.n as f64;
    let mut zz = DMatrix::<f64>::zeros(p, p);
    let mut zy = DVector::<f64>::zeros(p);
    let mut z = vec![0.0; p];
    for i in 0..trajs.n {
        for t in 1..=trajs.horizon {
            design.z(i, t, &mut z);
            let y = design.y(trajs.cell(i, t));
            let zv = DVector::from_column_slice(&z);
            zz.ger(1.0, &zv, &zv, 1.0);
            zy.axpy(y, &zv, 1.0);
        }
    }
    let theta = solve_spd(&zz, &zy)?;
    let scores = (0..trajs.n)
        .map(|i| {
            let mut s = DVector::<f64>::zeros(p);
            let mut z = vec![0.0; p];
            for t in 1..=trajs.horizon {
                design.z(i, t, &mut z);
                let zv = DVector::from_column_slice(&z);
                let resid = design.y(trajs.cell(i, t)) - zv.dot(&theta);
                s.axpy(resid, &zv, 1.0);
            }
            s
        })
        .collect();
    Ok(MEstimate {
        theta,
        bread: zz / n,
        scores,
    })
}

pub fn average_reward_estimate(trajs: &TrajectorySet) -> f64 {
    let n = trajs.n as f64;
    trajs
        .rewards
        .chunks(trajs.horizon)
        .map(|row| row.iter().sum::<f64>() / trajs.horizon as f64)
        .sum::<f64>()
        / n
}

pub fn least_squares_estimate(trajs: &TrajectorySet, spec: &EstimandSpec) -> Result<Vec<f64>> {
    Ok(m_estimate(trajs, spec)?.theta.iter().cloned().collect())
}

fn sandwich(bread: &DMatrix<f64>, vectors: &[DVector<f64>]) -> Result<DMatrix<f64>> {
    let p = bread.nrows();
    let mut meat = DMatrix::<f64>::zeros(p, p);
    for v in vectors {
        meat.ger(1.0, v, v, 1.0);
    }
    meat /= vectors.len() as f64;
    let inv = inverse_spd(bread)?;
    Ok(symmetrize(&(&inv * meat * &inv)))
}

/// Asymptotic-scale covariance of `sqrt(n) (theta_hat - theta)`; divide by `n`
/// for the variance of `theta_hat` itself.
pub fn standard_sandwich_variance(est: &MEstimate) -> Result<DMatrix<f64>> {
    sandwich(&est.bread, &est.scores)
}

/// Influence vectors of one refit of a linear algorithm statistic.
#[derive(Debug, Clone)]
pub struct InfluenceBlock {
    pub snapshot_index: usize,
    pub update_time: usize,
    /// One vector per individual.
    pub psi: Vec<DVector<f64>>,
}

fn policy_lambda(kind: &PolicyKind) -> f64 {
    match *kind {
        PolicyKind::ContextualEpsilonGreedy { lambda, .. } | PolicyKind::Boltzmann { lambda, .. } => lambda,
        _ => 0.0,
    }
}

/// `psi_i = M^{-1} (sum_{t <= u} phi~ (R - phi~^T beta) - (lambda / n) beta)` with
/// `M = (G_u + lambda I) / n`, for every fitted linear snapshot. The ridge
/// term keeps `sum_i psi_i = 0` exact at the fitted statistic.
pub fn psi_influence(trajs: &TrajectorySet) -> Result<Vec<InfluenceBlock>> {
    let d = trajs.feature_dim;
    let p = 2 * d;
    let lambda = policy_lambda(&trajs.policy);
    let n = trajs.n;
    let targets: Vec<(usize, &PolicySnapshot)> = trajs
        .snapshots
        .iter()
        .enumerate()
        .filter(|(_, s)| matches!(s.statistic, Statistic::Linear { .. }))
        .collect();
    if targets.is_empty() {
        return Ok(Vec::new());
    }
    let mut g_i = vec![DMatrix::<f64>::zeros(p, p); n];
    let mut b_i = vec![DVector::<f64>::zeros(p); n];
    let mut stacked = vec![0.0; p];
    let mut blocks = Vec::with_capacity(targets.len());
    let mut next = 0;
    for t in 1..=trajs.horizon {
        for i in 0..n {
            let cell = trajs.cell(i, t);
            stack_features(trajs.context(i, t), trajs.actions[cell], &mut stacked);
            let x = DVector::from_column_slice(&stacked);
            g_i[i].ger(1.0, &x, &x, 1.0);
            b_i[i].axpy(trajs.rewards[cell], &x, 1.0);
        }
        while next < targets.len() && targets[next].1.update_time == t {
            let (k, snap) = targets[next];
            let Statistic::Linear { beta, .. } = &snap.statistic else { unreachable!() };
            let beta = DVector::from_column_slice(beta);
            let mut m = g_i.iter().fold(DMatrix::<f64>::zeros(p, p), |acc, g| acc + g);
            for j in 0..p {
                m[(j, j)] += lambda;
            }
            m /= n as f64;
            let m_inv = inverse_spd(&m)?;
            let shrink = &beta * (lambda / n as f64);
            let psi = (0..n)
                .map(|i| &m_inv * (&b_i[i] - &g_i[i] * &beta - &shrink))
                .collect();
            blocks.push(InfluenceBlock {
                snapshot_index: k,
                update_time: t,
                psi,
            });
            next += 1;
        }
    }
    Ok(blocks)
}

/// Plug-in adaptive sandwich: the meat uses `s_i + sum_tau Q_tau psi_tau,i`
/// with `Q_tau = (1/n) sum_i s_i sum_{t: tau(t) = tau} (d pi / d beta)^T / pi`.
pub fn adaptive_sandwich_variance(trajs: &TrajectorySet, est: &MEstimate) -> Result<DMatrix<f64>> {
    if !trajs.policy.is_differentiable() {
        return Err(Error::NotDifferentiable(format!(
            "{} has a discontinuous action probability",
            trajs.policy.name()
        )));
    }
    let blocks = psi_influence(trajs)?;
    let n = trajs.n;
    let p = 2 * trajs.feature_dim;
    let mut corrected = est.scores.clone();
    let mut grad = vec![0.0; p];
    for block in &blocks {
        let snap = &trajs.snapshots[block.snapshot_index];
        // Per-individual sum of d log pi over the decision times this snapshot drove.
        let last = trajs
            .snapshots
            .get(block.snapshot_index + 1)
            .map_or(trajs.horizon, |s| s.update_time);
        let mut q = DMatrix::<f64>::zeros(est.theta.len(), p);
        for i in 0..n {
            let mut w = DVector::<f64>::zeros(p);
            for t in block.update_time + 1..=last {
                let cell = trajs.cell(i, t);
                snap.gradient_treat(&trajs.policy, trajs.context(i, t), &mut grad)?;
                let sign = if trajs.actions[cell] { 1.0 } else { -1.0 };
                w.axpy(sign / trajs.propensities[cell], &DVector::from_column_slice(&grad), 1.0);
            }
            q.ger(1.0, &est.scores[i], &w, 1.0);
        }
        q /= n as f64;
        for (c, psi) in corrected.iter_mut().zip(&block.psi) {
            *c += &q * psi;
        }
    }
    sandwich(&est.bread, &corrected)
}

pub fn normal_quantile(level: f64) -> f64 {
    Normal::standard().inverse_cdf(0.5 + level / 2.0)
}

/// `theta +- z sqrt(variance / n)`; `variance` is on the asymptotic scale.
pub fn confidence_interval(theta: f64, variance: f64, n: usize, level: f64) -> Result<[f64; 2]> {
    if !(variance >= 0.0) {
        return Err(Error::domain(format!("variance must be nonnegative, got {variance}")));
    }
    let half = normal_quantile(level) * (variance / n as f64).sqrt();
    Ok([theta - half, theta + half])
}

pub fn covers(interval: [f64; 2], theta_star: f64) -> bool {
    interval[0] <= theta_star && theta_star <= interval[1]
}

/// A variance that may be unavailable, serialized as `{"na": reason}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VarianceEstimate {
    Value(Vec<Vec<f64>>),
    Na { na: String },
}

impl VarianceEstimate {
    pub fn value(&self) -> Option<&Vec<Vec<f64>>> {
        match self {
            VarianceEstimate::Value(v) => Some(v),
            VarianceEstimate::Na { .. } => None,
        }
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().cloned().collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub n: usize,
    pub target_index: usize,
    pub level: f64,
    pub theta_hat: Vec<f64>,
    /// Asymptotic scale: the variance of `theta_hat` is this divided by `n`.
    pub var_standard: Vec<Vec<f64>>,
    pub var_adaptive: VarianceEstimate,
    pub ci_standard: Vec<[f64; 2]>,
    pub ci_adaptive: Option<Vec<[f64; 2]>>,
    pub theta_star: Option<f64>,
    pub covered_standard: Option<bool>,
    pub covered_adaptive: Option<bool>,
}

impl EstimateReport {
    pub fn target(&self) -> f64 {
        self.theta_hat[self.target_index]
    }

    /// Variance of the target coordinate of `theta_hat` (not asymptotic scale).
    pub fn target_var_standard(&self) -> f64 {
        self.var_standard[self.target_index][self.target_index] / self.n as f64
    }

    pub fn target_var_adaptive(&self) -> Option<f64> {
        self.var_adaptive
            .value()
            .map(|v| v[self.target_index][self.target_index] / self.n as f64)
    }
}

pub fn estimate(trajs: &TrajectorySet, spec: &EstimandSpec, theta_star: Option<f64>) -> Result<EstimateReport> {
    let est = m_estimate(trajs, spec)?;
    let standard = standard_sandwich_variance(&est)?;
    let adaptive = match adaptive_sandwich_variance(trajs, &est) {
        Ok(v) => Some(v),
        Err(e @ Error::NotDifferentiable(_)) => {
            log::debug!("adaptive variance unavailable: {e}");
            None
        }
        Err(e) => return Err(e),
    };
    let n = trajs.n;
    let intervals = |v: &DMatrix<f64>| -> Result<Vec<[f64; 2]>> {
        (0..est.theta.len())
            .map(|k| confidence_interval(est.theta[k], v[(k, k)].max(0.0), n, spec.level))
            .collect()
    };
    let ci_standard = intervals(&standard)?;
    let ci_adaptive = adaptive.as_ref().map(intervals).transpose()?;
    let k = spec.target_index;
    Ok(EstimateReport {
        n,
        target_index: k,
        level: spec.level,
        theta_hat: est.theta.iter().cloned().collect(),
        var_standard: rows(&standard),
        var_adaptive: match &adaptive {
            Some(v) => VarianceEstimate::Value(rows(v)),
            None => VarianceEstimate::Na {
                na: "not_differentiable".into(),
            },
        },
        covered_standard: theta_star.map(|s| covers(ci_standard[k], s)),
        covered_adaptive: theta_star.and_then(|s| ci_adaptive.as_ref().map(|ci| covers(ci[k], s))),
        ci_standard,
        ci_adaptive,
        theta_star,
    })
}

/// Contexts over which two learned policies are compared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ContextGrid {
    /// `phi = [1, x]` with `x` on an equally spaced grid.
    Scalar { low: f64, high: f64, points: usize },
    /// Five Oralytics features: intercept, two binary and two in `[-1, 1]`.
    OralyticsHypercube { points: usize, seed: u64 },
    /// Context-free policies.
    Empty,
}

impl ContextGrid {
    pub fn contexts(&self) -> Result<Vec<Vec<f64>>> {
        match *self {
            ContextGrid::Empty => Ok(vec![Vec::new()]),
            ContextGrid::Scalar { low, high, points } => {
                if points == 0 || !(low <= high) {
                    return Err(Error::config("scalar grid needs points >= 1 and low <= high"));
                }
                if points == 1 {
                    return Ok(vec![vec![1.0, low]]);
                }
                let step = (high - low) / (points - 1) as f64;
                Ok((0..points).map(|k| vec![1.0, low + step * k as f64]).collect())
            }
            ContextGrid::OralyticsHypercube { points, seed } => {
                if points == 0 {
                    return Err(Error::config("hypercube grid needs at least one point"));
                }
                Ok(latin_hypercube(points, 4, seed)
                    .into_iter()
                    .map(|u| {
                        vec![
                            1.0,
                            f64::from(u8::from(u[0] >= 0.5)),
                            2.0 * u[1] - 1.0,
                            2.0 * u[2] - 1.0,
                            f64::from(u8::from(u[3] >= 0.5)),
                        ]
                    })
                    .collect())
            }
        }
    }
}

/// Latin hypercube sample of `points` rows in `[0, 1)^dims`.
pub fn latin_hypercube(points: usize, dims: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut s = derive_stream(&SeedSpec::new(seed, 0, "latin-hypercube"));
    let mut out = vec![vec![0.0; dims]; points];
    let mut strata: Vec<usize> = (0..points).collect();
    for dim in 0..dims {
        // Fisher-Yates.
        for k in (1..points).rev() {
            strata.swap(k, s.below(k + 1));
        }
        for (row, stratum) in out.iter_mut().zip(&strata) {
            row[dim] = (*stratum as f64 + s.uniform01()) / points as f64;
        }
    }
    out
}

/// A learned policy: its kind and snapshot.
#[derive(Debug, Clone, Copy)]
pub struct PolicyAt<'a> {
    pub kind: &'a PolicyKind,
    pub snapshot: &'a PolicySnapshot,
}

/// Mean over pairs of `max_x |pi(x, 1; beta) - pi(x, 1; beta~)|` (the same
/// difference holds for action 0).
pub fn replicability_metric(pairs: &[(PolicyAt<'_>, PolicyAt<'_>)], grid: &[Vec<f64>]) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::domain("context grid is empty"));
    }
    if pairs.is_empty() {
        return Err(Error::domain("no replication pairs"));
    }
    let mut total = 0.0;
    for (a, b) in pairs {
        if a.kind != b.kind
            || std::mem::discriminant(&a.snapshot.statistic) != std::mem::discriminant(&b.snapshot.statistic)
        {
            return Err(Error::domain("paired policies are of different kinds"));
        }
        let sup = grid
            .iter()
            .map(|x| (a.snapshot.prob_treat(a.kind, x) - b.snapshot.prob_treat(b.kind, x)).abs())
            .fold(0.0, f64::max);
        total += sup;
    }
    Ok(total / pairs.len() as f64)
}

/// Limit of the average outcome where it has a closed form.
pub fn theta_star_analytic(env: &EnvKind, policy: &PolicyKind, horizon: usize) -> Result<f64> {
    match (env, policy) {
        (EnvKind::NonstationaryMab { mu0, delta1, delta2 }, _) => {
            // Second-period treatment probability in the limit.
            let pi2 = match *policy {
                PolicyKind::Fixed { prob } => prob,
                PolicyKind::MabEpsilonGreedy { epsilon } => {
                    if *delta1 > 0.0 {
                        1.0 - epsilon / 2.0
                    } else if *delta1 < 0.0 {
                        epsilon / 2.0
                    } else {
                        0.5
                    }
                }
                PolicyKind::GaussianThompson { .. } => {
                    if *delta1 > 0.0 {
                        1.0
                    } else if *delta1 < 0.0 {
                        0.0
                    } else {
                        0.5
                    }
                }
                _ => return Err(unavailable(env, policy)),
            };
            let pi1 = match *policy {
                PolicyKind::Fixed { prob } => prob,
                _ => 0.5,
            };
            if horizon != 2 {
                return Err(Error::OracleUnavailable("nonstationary target needs horizon 2".into()));
            }
            Ok(mu0 + (delta1 * pi1 + delta2 * pi2) / 2.0)
        }
        (
            EnvKind::SyntheticDosage {
                alpha0,
                alpha1,
                alpha2,
                gamma,
                ..
            },
            PolicyKind::Fixed { prob },
        ) => Ok(synthetic_baseline_mean(*alpha0, *alpha1, *alpha2, *gamma, *prob, horizon)),
        (EnvKind::MisspecifiedLinear { alpha0, alpha1 }, PolicyKind::Fixed { prob }) => {
            // E[1, x, x^2] = [1, 1/2, 1/3].
            let m = [1.0, 0.5, 1.0 / 3.0];
            let dot = |a: &[f64; 3]| a.iter().zip(&m).map(|(x, y)| x * y).sum::<f64>();
            Ok(dot(alpha0) + prob * dot(alpha1))
        }
        _ => Err(unavailable(env, policy)),
    }
}

fn unavailable(env: &EnvKind, policy: &PolicyKind) -> Error {
    let env_name = match env {
        EnvKind::NonstationaryMab { .. } => "nonstationary_mab",
        EnvKind::MisspecifiedLinear { .. } => "misspecified_linear",
        EnvKind::SyntheticDosage { .. } => "synthetic_dosage",
        EnvKind::OralyticsZip(_) => "oralytics_zip",
    };
    Error::OracleUnavailable(format!(
        "no closed form for {} in {env_name}; use a Monte Carlo target",
        policy.name()
    ))
}
