//! Single-trial simulation with pooled policy updates.

use serde::{Deserialize, Serialize};

use crate::env::EnvKind;
use crate::error::{Error, Result};
use crate::policy::{select_action, PolicyKind, PolicySnapshot};
use crate::rng::{derive_indexed, spec_key, SeedSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub n: usize,
    pub horizon: usize,
    pub update_every: usize,
    pub env: EnvKind,
    pub policy: PolicyKind,
    pub master_seed: u64,
    pub replication_index: u64,
    /// Keep `pi(x, 1)` at every cell in addition to the realized propensity.
    pub record_full_probs: bool,
}

impl TrialConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::config("n must be at least 1"));
        }
        if self.horizon == 0 {
            return Err(Error::config("horizon must be at least 1"));
        }
        if self.update_every == 0 || self.update_every > self.horizon {
            return Err(Error::config(format!(
                "update_every must lie in [1, horizon = {}], got {}",
                self.horizon, self.update_every
            )));
        }
        self.env.validate(self.horizon)?;
        self.policy.validate(self.env.feature_dim())
    }

    /// Decision times after which the statistic is refit.
    pub fn update_times(&self) -> Vec<usize> {
        (1..self.horizon)
            .filter(|u| u % self.update_every == 0)
            .collect()
    }

    fn key(&self, role: &str) -> u64 {
        spec_key(&SeedSpec::new(self.master_seed, self.replication_index, role))
    }
}

/// Complete record of one trial. Cell `(i, t)` lives at `i * horizon + (t - 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySet {
    pub n: usize,
    pub horizon: usize,
    pub feature_dim: usize,
    pub replication_index: u64,
    pub policy: PolicyKind,
    /// Algorithm features, `feature_dim` per cell.
    pub contexts: Vec<f64>,
    pub actions: Vec<bool>,
    /// Probability of the realized action.
    pub propensities: Vec<f64>,
    pub outcomes: Vec<f64>,
    pub rewards: Vec<f64>,
    pub prob_treat: Option<Vec<f64>>,
    /// Ordered by update time; the first is the initial policy.
    pub snapshots: Vec<PolicySnapshot>,
}

impl TrajectorySet {
    #[inline]
    pub fn cell(&self, i: usize, t: usize) -> usize {
        i * self.horizon + (t - 1)
    }

    pub fn context(&self, i: usize, t: usize) -> &[f64] {
        let c = self.cell(i, t) * self.feature_dim;
        &self.contexts[c..c + self.feature_dim]
    }

    /// Index of the snapshot that decided time `t`: the last one fit on data
    /// through `t - 1` or earlier.
    pub fn snapshot_index(&self, t: usize) -> usize {
        self.snapshots
            .iter()
            .rposition(|s| s.update_time < t)
            .unwrap_or(0)
    }

    pub fn snapshot_for(&self, t: usize) -> &PolicySnapshot {
        &self.snapshots[self.snapshot_index(t)]
    }
}

pub fn run_trial(config: &TrialConfig) -> Result<TrajectorySet> {
    config.validate()?;
    let env = config.env.resolved()?;
    let (n, horizon, d) = (config.n, config.horizon, env.feature_dim());
    let cells = n * horizon;
    let (recruit_key, env_key, policy_key) = (config.key("recruit"), config.key("env"), config.key("policy"));

    let mut states = (0..n)
        .map(|i| env.init_individual(horizon, &mut derive_indexed(recruit_key, i as u64, 0)))
        .collect::<Result<Vec<_>>>()?;

    let mut trajs = TrajectorySet {
        n,
        horizon,
        feature_dim: d,
        replication_index: config.replication_index,
        policy: config.policy,
        contexts: vec![0.0; cells * d],
        actions: vec![false; cells],
        propensities: vec![0.0; cells],
        outcomes: vec![0.0; cells],
        rewards: vec![0.0; cells],
        prob_treat: config.record_full_probs.then(|| vec![0.0; cells]),
        snapshots: vec![PolicySnapshot::initial(&config.policy)],
    };
    let mut learner = config.policy.learner(d);
    let mut phi = vec![0.0; d];

    for t in 1..=horizon {
        let snapshot = trajs.snapshots.last().expect("initial snapshot").clone();
        for (i, state) in states.iter_mut().enumerate() {
            let cell = i * horizon + (t - 1);
            let mut env_stream = derive_indexed(env_key, i as u64, t as u64);
            let mut policy_stream = derive_indexed(policy_key, i as u64, t as u64);
            state.observe(&env, t, &mut env_stream, &mut phi);
            let p = snapshot.prob_treat(&config.policy, &phi);
            let (action, propensity) = select_action(p, &mut policy_stream);
            let (outcome, reward) = state.step(&env, t, action, &mut env_stream)?;
            learner.observe(&phi, action, reward);

            trajs.contexts[cell * d..(cell + 1) * d].copy_from_slice(&phi);
            trajs.actions[cell] = action;
            trajs.propensities[cell] = propensity;
            trajs.outcomes[cell] = outcome;
            trajs.rewards[cell] = reward;
            if let Some(probs) = trajs.prob_treat.as_mut() {
                probs[cell] = p;
            }
        }
        if t < horizon && t % config.update_every == 0 {
            trajs.snapshots.push(learner.snapshot(t)?);
        }
    }
    Ok(trajs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub mean_reward_per_individual: Vec<f64>,
    pub treat_frequency_per_time: Vec<f64>,
    pub mean_reward: f64,
    pub final_snapshot: PolicySnapshot,
}

pub fn summarize_trial(trajs: &TrajectorySet) -> TrialSummary {
    let (n, horizon) = (trajs.n, trajs.horizon);
    let per_individual: Vec<f64> = trajs
        .rewards
        .chunks(horizon)
        .map(|row| row.iter().sum::<f64>() / horizon as f64)
        .collect();
    let freq = (1..=horizon)
        .map(|t| (0..n).filter(|i| trajs.actions[trajs.cell(*i, t)]).count() as f64 / n as f64)
        .collect();
    TrialSummary {
        mean_reward: per_individual.iter().sum::<f64>() / n as f64,
        mean_reward_per_individual: per_individual,
        treat_frequency_per_time: freq,
        final_snapshot: trajs.snapshots.last().expect("initial snapshot").clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvKind;

    fn config(env: EnvKind, policy: PolicyKind, n: usize, horizon: usize) -> TrialConfig {
        TrialConfig {
            n,
            horizon,
            update_every: 1,
            env,
            policy,
            master_seed: 11,
            replication_index: 0,
            record_full_probs: true,
        }
    }

    #[test]
    fn single_cell_trial() {
        let c = config(EnvKind::misspecified_default(), PolicyKind::Boltzmann { pi_min: 0.1, steepness: 2.0, lambda: 1.0 }, 1, 1);
        let tr = run_trial(&c).unwrap();
        assert_eq!(tr.actions.len(), 1);
        assert_eq!(tr.propensities[0], 0.5);
        assert_eq!(tr.snapshots.len(), 1);
        assert_eq!(tr.context(0, 1)[0], 1.0);
    }

    #[test]
    fn deterministic_replay() {
        let c = config(EnvKind::synthetic_default(), PolicyKind::Boltzmann { pi_min: 0.1, steepness: 2.0, lambda: 1.0 }, 30, 10);
        assert_eq!(run_trial(&c).unwrap(), run_trial(&c).unwrap());
        let mut other = c.clone();
        other.replication_index = 1;
        assert_ne!(run_trial(&c).unwrap().rewards, run_trial(&other).unwrap().rewards);
    }

    #[test]
    fn propensity_matches_snapshot() {
        let c = config(EnvKind::synthetic_default(), PolicyKind::Boltzmann { pi_min: 0.1, steepness: 2.0, lambda: 1.0 }, 20, 8);
        let tr = run_trial(&c).unwrap();
        assert_eq!(tr.snapshots.len(), 8);
        for i in 0..20 {
            for t in 1..=8 {
                let cell = tr.cell(i, t);
                let p = tr.snapshot_for(t).prob(&tr.policy, tr.context(i, t), tr.actions[cell]);
                assert_eq!(p, tr.propensities[cell]);
                if t == 1 {
                    assert_eq!(p, 0.5);
                }
            }
        }
    }

    #[test]
    fn no_refit_means_uniform_propensities() {
        let mut c = config(EnvKind::synthetic_default(), PolicyKind::ContextualEpsilonGreedy { epsilon: 0.2, lambda: 1.0 }, 25, 6);
        c.update_every = 6;
        let tr = run_trial(&c).unwrap();
        assert_eq!(tr.snapshots.len(), 1);
        assert!(tr.propensities.iter().all(|p| *p == 0.5));
    }

    #[test]
    fn growing_n_extends_existing_individuals_at_first_time() {
        let c = config(EnvKind::synthetic_default(), PolicyKind::Boltzmann { pi_min: 0.1, steepness: 2.0, lambda: 1.0 }, 10, 3);
        let mut big = c.clone();
        big.n = 40;
        let (a, b) = (run_trial(&c).unwrap(), run_trial(&big).unwrap());
        for i in 0..10 {
            assert_eq!(a.rewards[a.cell(i, 1)], b.rewards[b.cell(i, 1)]);
        }
    }

    #[test]
    fn forced_treatment_and_zero_rewards() {
        let c = config(EnvKind::nonstationary_default(), PolicyKind::Fixed { prob: 1.0 }, 50, 2);
        let tr = run_trial(&c).unwrap();
        let s = summarize_trial(&tr);
        assert_eq!(s.treat_frequency_per_time, vec![1.0, 1.0]);

        let mut zero = tr.clone();
        zero.rewards.iter_mut().for_each(|r| *r = 0.0);
        assert_eq!(summarize_trial(&zero).mean_reward, 0.0);
    }

    #[test]
    fn invalid_configs_fail_before_simulation() {
        let mut c = config(EnvKind::nonstationary_default(), PolicyKind::ContextualEpsilonGreedy { epsilon: 0.2, lambda: 1.0 }, 5, 2);
        assert!(matches!(run_trial(&c), Err(Error::Config(_))));
        c.policy = PolicyKind::MabEpsilonGreedy { epsilon: 0.1 };
        c.update_every = 3;
        assert!(run_trial(&c).is_err());
        c.update_every = 1;
        c.n = 0;
        assert!(run_trial(&c).is_err());
    }

    #[test]
    fn update_times_follow_cadence() {
        let mut c = config(EnvKind::synthetic_default(), PolicyKind::Fixed { prob: 0.5 }, 1, 140);
        c.update_every = 14;
        assert_eq!(c.update_times(), (1..10).map(|k| 14 * k).collect::<Vec<_>>());
        c.horizon = 2;
        c.update_every = 1;
        assert_eq!(c.update_times(), vec![1]);
    }
}
