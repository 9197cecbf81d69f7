//! Monte Carlo replications, aggregate summaries, histograms and targets.

pub mod limit;

use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::env::EnvKind;
use crate::error::{Error, Result};
use crate::estimators::{
    estimate, m_estimate, replicability_metric, theta_star_analytic, EstimandKind, EstimateReport, Featurization,
    PolicyAt,
};
use crate::io::save_trajectories;
use crate::policy::{PolicyKind, PolicySnapshot};
use crate::rng::{derive_stream, SeedSpec};
use crate::trial::run_trial;

pub use limit::{
    compute_misspecified_s, ks_distance, limiting_law_sample, misspecified_sigma, LimitLawKind, MisspecifiedLimit,
    MISSPEC_B,
};

fn default_draws() -> usize {
    200_000
}

fn default_resolution() -> usize {
    10_000
}

/// Where the reference value for coverage comes from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum ThetaStarSource {
    /// Closed form if one exists, then the misspecified limit law, otherwise unavailable.
    #[default]
    Auto,
    Analytic,
    /// Mean of the estimator over `reps` trials of size `n` under `seed`.
    MonteCarlo { n: usize, reps: usize, seed: u64 },
    /// Expectation of the misspecified limit law.
    LimitLaw {
        #[serde(default = "default_draws")]
        draws: usize,
        seed: u64,
        #[serde(default = "default_resolution")]
        resolution: usize,
    },
    Value { value: f64 },
    None,
}

impl ThetaStarSource {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ThetaStarSource::MonteCarlo { n, reps, .. } if n == 0 || reps == 0 => {
                Err(Error::config("theta_star.n and theta_star.reps must be at least 1"))
            }
            ThetaStarSource::LimitLaw { draws, resolution, .. } if draws == 0 || resolution < limit::MIN_RESOLUTION => {
                Err(Error::config(format!(
                    "theta_star.draws must be >= 1 and theta_star.resolution >= {}",
                    limit::MIN_RESOLUTION
                )))
            }
            ThetaStarSource::Value { value } if !value.is_finite() => {
                Err(Error::config("theta_star.value must be finite"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaStar {
    pub value: Option<f64>,
    pub provenance: String,
    pub std_error: Option<f64>,
}

impl ThetaStar {
    fn known(value: f64, provenance: impl Into<String>, std_error: Option<f64>) -> Self {
        ThetaStar {
            value: Some(value),
            provenance: provenance.into(),
            std_error,
        }
    }

    fn unavailable(reason: impl std::fmt::Display) -> Self {
        ThetaStar {
            value: None,
            provenance: format!("unavailable: {reason}"),
            std_error: None,
        }
    }
}

fn is_average(exp: &ExperimentConfig) -> bool {
    match exp.estimand.estimator {
        EstimandKind::AverageReward { .. } => true,
        EstimandKind::LeastSquares { featurization, .. } => featurization == Featurization::Constant,
    }
}

pub fn resolve_theta_star(exp: &ExperimentConfig, threads: usize) -> Result<ThetaStar> {
    exp.theta_star.validate()?;
    match exp.theta_star {
        ThetaStarSource::None => Ok(ThetaStar {
            value: None,
            provenance: "none".into(),
            std_error: None,
        }),
        ThetaStarSource::Value { value } => Ok(ThetaStar::known(value, "configured value", None)),
        ThetaStarSource::Analytic => analytic(exp),
        ThetaStarSource::MonteCarlo { n, reps, seed } => monte_carlo_theta_star(exp, n, reps, seed, threads),
        ThetaStarSource::LimitLaw {
            draws,
            seed,
            resolution,
        } => limit_law_theta_star(exp, draws, seed, resolution),
        ThetaStarSource::Auto => match analytic(exp) {
            Ok(t) => Ok(t),
            Err(Error::OracleUnavailable(reason)) => {
                match limit_law_theta_star(exp, default_draws(), exp.master_seed, default_resolution()) {
                    Ok(t) => Ok(t),
                    Err(Error::OracleUnavailable(_)) => Ok(ThetaStar::unavailable(reason)),
                    Err(e) => Err(e),
                }
            }
            Err(e) => Err(e),
        },
    }
}

fn analytic(exp: &ExperimentConfig) -> Result<ThetaStar> {
    if !is_average(exp) {
        return Err(Error::OracleUnavailable("closed forms cover the average outcome only".into()));
    }
    let v = theta_star_analytic(&exp.env, &exp.policy, exp.horizon)?;
    Ok(ThetaStar::known(v, "analytic", None))
}

/// High-`n` Monte Carlo mean of the configured estimator, with its standard error.
pub fn monte_carlo_theta_star(
    exp: &ExperimentConfig,
    n: usize,
    reps: usize,
    seed: u64,
    threads: usize,
) -> Result<ThetaStar> {
    let mut big = exp.clone();
    big.n = n;
    big.master_seed = seed;
    let k = exp.estimand.target_index;
    let values = in_pool(threads, || {
        (0..reps as u64)
            .into_par_iter()
            .map(|rep| {
                let trajs = run_trial(&big.trial_config(rep)).map_err(|e| wrap(rep, e))?;
                Ok(m_estimate(&trajs, &big.estimand).map_err(|e| wrap(rep, e))?.theta[k])
            })
            .collect::<Result<Vec<f64>>>()
    })??;
    let (mean, var) = mean_and_variance(&values);
    Ok(ThetaStar::known(
        mean,
        format!("monte_carlo(n={n}, reps={reps}, seed={seed})"),
        Some((var / reps as f64).sqrt()),
    ))
}

fn limit_law_theta_star(exp: &ExperimentConfig, draws: usize, seed: u64, resolution: usize) -> Result<ThetaStar> {
    let (EnvKind::MisspecifiedLinear { alpha0, alpha1 }, PolicyKind::ContextualEpsilonGreedy { epsilon, .. }) =
        (&exp.env, &exp.policy)
    else {
        return Err(Error::OracleUnavailable(
            "the limit law covers epsilon-greedy in the misspecified environment".into(),
        ));
    };
    let stacked = matches!(
        exp.estimand.estimator,
        EstimandKind::LeastSquares {
            featurization: Featurization::Stacked,
            ..
        }
    );
    if !stacked || exp.horizon != 2 || exp.update_every != 1 {
        return Err(Error::OracleUnavailable(
            "the limit law needs a stacked least-squares estimand, horizon 2 and one refit".into(),
        ));
    }
    let s = compute_misspecified_s(*alpha0, *alpha1, resolution)?;
    let law = MisspecifiedLimit::new(*alpha0, *alpha1, *epsilon, resolution)?;
    let mut stream = derive_stream(&SeedSpec::new(seed, 0, "limit-law"));
    let theta = law.theta_star(s, draws, &mut stream)?;
    Ok(ThetaStar::known(
        theta[exp.estimand.target_index],
        format!("limit_law(draws={draws}, resolution={resolution}, seed={seed})"),
        None,
    ))
}

/// A scalar that may be unavailable, serialized as `{"na": reason}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MaybeNa {
    Value(f64),
    Na { na: String },
}

impl MaybeNa {
    pub fn value(&self) -> Option<f64> {
        match self {
            MaybeNa::Value(v) => Some(*v),
            MaybeNa::Na { .. } => None,
        }
    }

    fn na(reason: &str) -> Self {
        MaybeNa::Na { na: reason.into() }
    }
}

impl std::fmt::Display for MaybeNa {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MaybeNa::Value(v) => write!(f, "{v}"),
            MaybeNa::Na { .. } => f.write_str("NA"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicabilityReport {
    pub time: usize,
    pub pairs: usize,
    pub grid_points: usize,
    pub metric: f64,
}

/// Aggregates over replications. Variances are on the scale of the
/// estimator itself (already divided by `n`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSummary {
    pub name: String,
    pub policy: String,
    pub n: usize,
    pub horizon: usize,
    pub reps: usize,
    pub master_seed: u64,
    pub target_index: usize,
    pub mean_theta_hat: f64,
    /// Across replications, divisor `R`.
    pub empirical_variance: f64,
    pub mean_var_standard: f64,
    pub mean_var_adaptive: MaybeNa,
    pub coverage_standard: MaybeNa,
    pub coverage_adaptive: MaybeNa,
    pub theta_star: ThetaStar,
    pub replicability: Option<ReplicabilityReport>,
    pub theta_hat: Vec<f64>,
    #[serde(skip)]
    pub wall_time_secs: f64,
}

fn wrap(index: u64, e: Error) -> Error {
    Error::Replication {
        index,
        source: Box::new(e),
    }
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::config(format!("cannot start {threads} worker threads: {e}")))?;
    Ok(pool.install(f))
}

pub fn mean_and_variance(values: &[f64]) -> (f64, f64) {
    let r = values.len() as f64;
    let mean = values.iter().sum::<f64>() / r;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / r;
    (mean, var)
}

struct RepOutcome {
    report: EstimateReport,
    snapshot: Option<PolicySnapshot>,
}

/// Run `exp.reps` independent trials and aggregate. The result does not
/// depend on `threads` (0 means one per core).
pub fn run_replications(
    exp: &ExperimentConfig,
    theta_star: &ThetaStar,
    threads: usize,
    trajectory_dir: Option<&Path>,
) -> Result<ReplicationSummary> {
    exp.validate()?;
    let start = Instant::now();
    let time = exp.replicability.as_ref().map(|r| r.time);
    let outcomes = in_pool(threads, || {
        (0..exp.reps as u64)
            .into_par_iter()
            .map(|rep| -> Result<RepOutcome> {
                let trajs = run_trial(&exp.trial_config(rep)).map_err(|e| wrap(rep, e))?;
                if let Some(dir) = trajectory_dir {
                    save_trajectories(&trajs, &dir.join(format!("trajectories_{rep}.csv"))).map_err(|e| wrap(rep, e))?;
                }
                let report = estimate(&trajs, &exp.estimand, theta_star.value).map_err(|e| wrap(rep, e))?;
                Ok(RepOutcome {
                    report,
                    snapshot: time.map(|t| trajs.snapshot_for(t).clone()),
                })
            })
            .collect::<Result<Vec<_>>>()
    })??;

    let r = outcomes.len() as f64;
    let theta_hat: Vec<f64> = outcomes.iter().map(|o| o.report.target()).collect();
    let (mean_theta_hat, empirical_variance) = mean_and_variance(&theta_hat);
    let mean_var_standard = outcomes.iter().map(|o| o.report.target_var_standard()).sum::<f64>() / r;
    let adaptive: Option<Vec<f64>> = outcomes.iter().map(|o| o.report.target_var_adaptive()).collect();
    let rate = |flags: Option<Vec<bool>>| flags.map(|f| f.iter().filter(|x| **x).count() as f64 / r);
    let coverage_standard = match rate(outcomes.iter().map(|o| o.report.covered_standard).collect()) {
        Some(c) => MaybeNa::Value(c),
        None => MaybeNa::na("theta_star_unavailable"),
    };
    let coverage_adaptive = match (&adaptive, rate(outcomes.iter().map(|o| o.report.covered_adaptive).collect())) {
        (None, _) => MaybeNa::na("not_differentiable"),
        (Some(_), Some(c)) => MaybeNa::Value(c),
        (Some(_), None) => MaybeNa::na("theta_star_unavailable"),
    };

    let replicability = match &exp.replicability {
        None => None,
        Some(spec) => {
            let snaps: Vec<&PolicySnapshot> = outcomes.iter().filter_map(|o| o.snapshot.as_ref()).collect();
            let pairs: Vec<(PolicyAt<'_>, PolicyAt<'_>)> = replication_pairing(snaps.len())
                .into_iter()
                .map(|(a, b)| {
                    let at = |k: usize| PolicyAt {
                        kind: &exp.policy,
                        snapshot: snaps[k],
                    };
                    (at(a), at(b))
                })
                .collect();
            if pairs.is_empty() {
                log::warn!("replicability metric needs at least two replications; skipped");
                None
            } else {
                let grid = spec.grid.contexts()?;
                Some(ReplicabilityReport {
                    time: spec.time,
                    pairs: pairs.len(),
                    grid_points: grid.len(),
                    metric: replicability_metric(&pairs, &grid)?,
                })
            }
        }
    };

    let summary = ReplicationSummary {
        name: exp.name.clone(),
        policy: exp.policy.name().into(),
        n: exp.n,
        horizon: exp.horizon,
        reps: exp.reps,
        master_seed: exp.master_seed,
        target_index: exp.estimand.target_index,
        mean_theta_hat,
        empirical_variance,
        mean_var_standard,
        mean_var_adaptive: match adaptive {
            Some(v) => MaybeNa::Value(v.iter().sum::<f64>() / r),
            None => MaybeNa::na("not_differentiable"),
        },
        coverage_standard,
        coverage_adaptive,
        theta_star: theta_star.clone(),
        replicability,
        theta_hat,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    log::info!(
        "{}: {} replications in {:.1}s",
        summary.name,
        summary.reps,
        summary.wall_time_secs
    );
    Ok(summary)
}

/// Pairs `(2k, 2k + 1)`; an odd trailing replication is dropped.
pub fn replication_pairing(reps: usize) -> Vec<(usize, usize)> {
    if reps % 2 == 1 {
        log::warn!("odd number of replications ({reps}); the last one is left unpaired");
    }
    (0..reps / 2).map(|k| (2 * k, 2 * k + 1)).collect()
}

pub const SUMMARY_CSV_HEADER: [&str; 12] = [
    "name",
    "policy",
    "n",
    "reps",
    "expected_theta_hat",
    "empirical_variance",
    "estimated_variance_as",
    "estimated_variance_s",
    "coverage_as",
    "coverage_s",
    "theta_star",
    "theta_star_provenance",
];

pub fn write_summary_csv<W: Write>(summaries: &[ReplicationSummary], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_CSV_HEADER)?;
    for s in summaries {
        w.write_record([
            s.name.clone(),
            s.policy.clone(),
            s.n.to_string(),
            s.reps.to_string(),
            s.mean_theta_hat.to_string(),
            s.empirical_variance.to_string(),
            s.mean_var_adaptive.to_string(),
            s.mean_var_standard.to_string(),
            s.coverage_adaptive.to_string(),
            s.coverage_standard.to_string(),
            s.theta_star.value.map_or("NA".into(), |v| v.to_string()),
            s.theta_star.provenance.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_theta_csv<W: Write>(summary: &ReplicationSummary, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["rep", "theta_hat"])?;
    for (rep, v) in summary.theta_hat.iter().enumerate() {
        w.write_record([rep.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Read one numeric column: `column` if given, else `theta_hat`, else `value`.
pub fn read_values_csv<R: Read>(input: R, column: Option<&str>, origin: &str) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    let wanted: Vec<&str> = match column {
        Some(c) => vec![c],
        None => vec!["theta_hat", "value"],
    };
    let col = wanted
        .iter()
        .find_map(|w| headers.iter().position(|h| h == *w))
        .ok_or_else(|| Error::parse(format!("{origin}:1"), format!("no column named {}", wanted.join(" or "))))?;
    r.records()
        .enumerate()
        .map(|(k, rec)| {
            let line = k + 2;
            let rec = rec?;
            let field = rec
                .get(col)
                .ok_or_else(|| Error::parse(format!("{origin}:{line}"), "row is too short"))?;
            field
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::parse(format!("{origin}:{line}"), format!("{field:?}: {e}")))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` increasing edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

/// Equal-width bins over `range` or the data range. Values outside an
/// explicit range are counted in the nearest end bin so counts always sum to
/// the number of values. A degenerate data range is widened by 0.5 each way.
pub fn histogram_export(values: &[f64], bins: usize, range: Option<(f64, f64)>) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::config("bins must be at least 1"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("histogram input contains a non-finite value"));
    }
    let (mut lo, mut hi) = match range {
        Some((lo, hi)) => {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::config(format!("histogram range must satisfy low < high, got [{lo}, {hi}]")));
            }
            (lo, hi)
        }
        None if values.is_empty() => (0.0, 1.0),
        None => (
            values.iter().cloned().fold(f64::INFINITY, f64::min),
            values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        ),
    };
    if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;
    let mut edges: Vec<f64> = (0..bins).map(|k| lo + width * k as f64).collect();
    edges.push(hi);
    let mut counts = vec![0u64; bins];
    for v in values {
        let k = ((v - lo) / width).floor();
        let k = if k < 0.0 { 0 } else { (k as usize).min(bins - 1) };
        counts[k] += 1;
    }
    Ok(Histogram { edges, counts })
}

pub fn write_histogram_csv<W: Write>(h: &Histogram, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bin_left", "bin_right", "count"])?;
    for (k, c) in h.counts.iter().enumerate() {
        w.write_record([h.edges[k].to_string(), h.edges[k + 1].to_string(), c.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_oracle_csv<W: Write>(values: &[f64], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["draw", "value"])?;
    for (k, v) in values.iter().enumerate() {
        w.write_record([k.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
