//! Experiment configuration: JSON schema, compiled-in presets and
//! `key=value` overrides.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::env::{EnvKind, OralyticsEnv};
use crate::error::{Error, Result};
use crate::estimators::{ContextGrid, EstimandKind, EstimandSpec, Featurization, Response};
use crate::harness::ThetaStarSource;
use crate::policy::PolicyKind;
use crate::trial::TrialConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplicabilitySpec {
    /// Compare the policies that made decision `time`.
    pub time: usize,
    pub grid: ContextGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    pub n: usize,
    pub horizon: usize,
    pub update_every: usize,
    pub reps: usize,
    pub master_seed: u64,
    pub env: EnvKind,
    pub policy: PolicyKind,
    pub estimand: EstimandSpec,
    #[serde(default)]
    pub theta_star: ThetaStarSource,
    #[serde(default)]
    pub replicability: Option<ReplicabilitySpec>,
    #[serde(default)]
    pub record_full_probs: bool,
}

impl ExperimentConfig {
    pub fn trial_config(&self, replication_index: u64) -> TrialConfig {
        TrialConfig {
            n: self.n,
            horizon: self.horizon,
            update_every: self.update_every,
            env: self.env.clone(),
            policy: self.policy,
            master_seed: self.master_seed,
            replication_index,
            record_full_probs: self.record_full_probs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(format!(
                "schema_version: expected {SCHEMA_VERSION}, got {}",
                self.schema_version
            )));
        }
        if self.reps == 0 {
            return Err(Error::config("reps must be at least 1"));
        }
        self.trial_config(0).validate()?;
        let d = self.env.feature_dim();
        self.estimand.validate(d)?;
        self.theta_star.validate()?;
        if let Some(r) = &self.replicability {
            if r.time == 0 || r.time > self.horizon {
                return Err(Error::config(format!(
                    "replicability.time must lie in [1, horizon = {}], got {}",
                    self.horizon, r.time
                )));
            }
            let grid_dim = match r.grid {
                ContextGrid::Scalar { .. } => 2,
                ContextGrid::OralyticsHypercube { .. } => 5,
                ContextGrid::Empty => 0,
            };
            if grid_dim != d {
                return Err(Error::config(format!(
                    "replicability.grid has {grid_dim} features but the environment has {d}"
                )));
            }
        }
        Ok(())
    }
}

/// Compiled-in presets and one-line descriptions.
pub const PRESETS: [(&str, &str); 7] = [
    ("fig2-epsgreedy", "two-period bandit with a shifting effect; epsilon-greedy (eps 0.1); n 1e5, R 500"),
    ("fig2-ts", "two-period bandit with a shifting effect; Gaussian Thompson sampling; n 1e5, R 1000"),
    ("fig3", "misspecified linear model; contextual epsilon-greedy (eps 0.1); stacked least squares; n 1e5, R 500"),
    ("table1-boltzmann", "dosage environment; Boltzmann (pi_min 0.1, s 2, lambda 1); T 50; n 1000, R 1000"),
    ("table1-epsgreedy", "dosage environment; epsilon-greedy (eps 0.2, lambda 1); T 50; n 1000, R 1000"),
    ("table2-boltzmann", "Oralytics simulator; Boltzmann (pi_min 0.2, s 0.05, lambda 3838); T 140, refit every 14; n 100, R 1000"),
    ("table2-epsgreedy", "Oralytics simulator; epsilon-greedy (eps 0.4, lambda 3838); T 140, refit every 14; n 100, R 1000"),
];

fn base(name: &str, n: usize, horizon: usize, reps: usize, env: EnvKind, policy: PolicyKind) -> ExperimentConfig {
    ExperimentConfig {
        schema_version: SCHEMA_VERSION,
        name: name.into(),
        n,
        horizon,
        update_every: 1,
        reps,
        master_seed: 20_240_601,
        env,
        policy,
        estimand: EstimandSpec::average(),
        theta_star: ThetaStarSource::Auto,
        replicability: None,
        record_full_probs: false,
    }
}

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let scalar = |low, high| ContextGrid::Scalar { low, high, points: 201 };
    let cfg = match name {
        "fig2-epsgreedy" | "fig2-ts" => {
            let (policy, reps) = if name == "fig2-ts" {
                (PolicyKind::thompson_default(), 1000)
            } else {
                (PolicyKind::MabEpsilonGreedy { epsilon: 0.1 }, 500)
            };
            ExperimentConfig {
                theta_star: ThetaStarSource::Analytic,
                replicability: Some(ReplicabilitySpec {
                    time: 2,
                    grid: ContextGrid::Empty,
                }),
                ..base(name, 100_000, 2, reps, EnvKind::nonstationary_default(), policy)
            }
        }
        "fig3" => ExperimentConfig {
            estimand: EstimandSpec {
                estimator: EstimandKind::LeastSquares {
                    featurization: Featurization::Stacked,
                    response: Response::Outcome,
                },
                level: 0.95,
                target_index: 2,
            },
            theta_star: ThetaStarSource::LimitLaw {
                draws: 200_000,
                seed: 31,
                resolution: 10_000,
            },
            replicability: Some(ReplicabilitySpec {
                time: 2,
                grid: scalar(0.0, 1.0),
            }),
            ..base(
                name,
                100_000,
                2,
                500,
                EnvKind::misspecified_default(),
                PolicyKind::ContextualEpsilonGreedy {
                    epsilon: 0.1,
                    lambda: 1.0,
                },
            )
        },
        "table1-boltzmann" | "table1-epsgreedy" => {
            let policy = if name == "table1-boltzmann" {
                PolicyKind::Boltzmann {
                    pi_min: 0.1,
                    steepness: 2.0,
                    lambda: 1.0,
                }
            } else {
                PolicyKind::ContextualEpsilonGreedy {
                    epsilon: 0.2,
                    lambda: 1.0,
                }
            };
            ExperimentConfig {
                theta_star: ThetaStarSource::MonteCarlo {
                    n: 4000,
                    reps: 2000,
                    seed: 41,
                },
                replicability: Some(ReplicabilitySpec {
                    time: 25,
                    grid: scalar(-3.0, 3.0),
                }),
                ..base(name, 1000, 50, 1000, EnvKind::synthetic_default(), policy)
            }
        }
        "table2-boltzmann" | "table2-epsgreedy" => {
            let policy = if name == "table2-boltzmann" {
                PolicyKind::Boltzmann {
                    pi_min: 0.2,
                    steepness: 0.05,
                    lambda: 3838.0,
                }
            } else {
                PolicyKind::ContextualEpsilonGreedy {
                    epsilon: 0.4,
                    lambda: 3838.0,
                }
            };
            ExperimentConfig {
                update_every: 14,
                theta_star: ThetaStarSource::MonteCarlo {
                    n: 1000,
                    reps: 400,
                    seed: 43,
                },
                replicability: Some(ReplicabilitySpec {
                    time: 70,
                    grid: ContextGrid::OralyticsHypercube {
                        points: 10_000,
                        seed: 47,
                    },
                }),
                ..base(name, 100, 140, 1000, EnvKind::OralyticsZip(OralyticsEnv::default()), policy)
            }
        }
        other => {
            let names: Vec<&str> = PRESETS.iter().map(|p| p.0).collect();
            return Err(Error::config(format!(
                "unknown preset {other:?}; known presets: {}",
                names.join(", ")
            )));
        }
    };
    Ok(cfg)
}

fn typed(value: Value, origin: &str) -> Result<ExperimentConfig> {
    serde_path_to_error::deserialize::<_, ExperimentConfig>(value).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path == "." {
            Error::config(format!("{origin}: {inner}"))
        } else {
            Error::config(format!("{origin}: {path}: {inner}"))
        }
    })
}

/// Parse a JSON config; errors name the offending key.
pub fn parse_config(text: &str, origin: &str) -> Result<ExperimentConfig> {
    let value: Value = serde_json::from_str(text).map_err(|e| {
        Error::parse(format!("{origin}:{}:{}", e.line(), e.column()), e.to_string())
    })?;
    let cfg = typed(value, origin)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Apply `key.path=value` overrides. Keys must already exist in the resolved
/// config; values are read as JSON, falling back to a bare string.
pub fn apply_overrides(cfg: &ExperimentConfig, overrides: &[String]) -> Result<ExperimentConfig> {
    if overrides.is_empty() {
        return Ok(cfg.clone());
    }
    let mut root = serde_json::to_value(cfg)?;
    for ov in overrides {
        let (key, raw) = ov
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override {ov:?} is not of the form key=value")))?;
        let key = key.trim();
        let value = serde_json::from_str::<Value>(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut slot = &mut root;
        for part in key.split('.') {
            slot = match slot {
                Value::Object(map) => map.get_mut(part),
                Value::Array(items) => part.parse::<usize>().ok().and_then(|k| items.get_mut(k)),
                _ => None,
            }
            .ok_or_else(|| Error::config(format!("unknown key {key:?} in override")))?;
        }
        *slot = value;
    }
    let out = typed(root, "override")?;
    out.validate()?;
    Ok(out)
}

/// Pretty JSON with a trailing newline.
pub fn to_json(cfg: &ExperimentConfig) -> Result<String> {
    Ok(serde_json::to_string_pretty(cfg)? + "\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for (name, _) in PRESETS {
            let cfg = preset(name).unwrap();
            cfg.validate().unwrap();
            let text = to_json(&cfg).unwrap();
            assert_eq!(parse_config(&text, name).unwrap(), cfg, "{name}");
        }
    }

    #[test]
    fn table1_boltzmann_parameters() {
        let cfg = preset("table1-boltzmann").unwrap();
        assert_eq!(
            cfg.policy,
            PolicyKind::Boltzmann {
                pi_min: 0.1,
                steepness: 2.0,
                lambda: 1.0
            }
        );
        assert_eq!((cfg.horizon, cfg.update_every), (50, 1));
        let eg = preset("table2-epsgreedy").unwrap();
        // eps = 2 pi_min.
        assert_eq!(
            eg.policy,
            PolicyKind::ContextualEpsilonGreedy {
                epsilon: 0.4,
                lambda: 3838.0
            }
        );
        assert_eq!((eg.horizon, eg.update_every), (140, 14));
    }

    #[test]
    fn overrides_apply_and_name_bad_keys() {
        let cfg = preset("fig2-ts").unwrap();
        let out = apply_overrides(&cfg, &["n=100000".into(), "policy.prior_var=2".into()]).unwrap();
        assert_eq!(out.n, 100_000);
        assert!(matches!(out.policy, PolicyKind::GaussianThompson { prior_var, .. } if prior_var == 2.0));

        let err = apply_overrides(&cfg, &["bogus=1".into()]).unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");
        let err = apply_overrides(&cfg, &["n=lots".into()]).unwrap_err().to_string();
        assert!(err.contains("n:") && err.contains("invalid type"), "{err}");
        let err = apply_overrides(&cfg, &["update_every=5".into()]).unwrap_err().to_string();
        assert!(err.contains("update_every"), "{err}");
        assert!(apply_overrides(&cfg, &["n".into()]).is_err());
    }

    #[test]
    fn unknown_fields_and_versions_are_rejected() {
        let mut v = serde_json::to_value(preset("fig3").unwrap()).unwrap();
        v["extra"] = Value::from(1);
        let err = parse_config(&v.to_string(), "cfg.json").unwrap_err().to_string();
        assert!(err.contains("extra"), "{err}");

        let mut v = serde_json::to_value(preset("fig3").unwrap()).unwrap();
        v["schema_version"] = Value::from(2);
        assert!(parse_config(&v.to_string(), "cfg.json").unwrap_err().to_string().contains("schema_version"));

        let mut v = serde_json::to_value(preset("fig3").unwrap()).unwrap();
        v["policy"]["epsilon"] = Value::from("x");
        let err = parse_config(&v.to_string(), "cfg.json").unwrap_err().to_string();
        assert!(err.contains("policy"), "{err}");

        assert!(matches!(parse_config("{", "cfg.json"), Err(Error::Parse { .. })));
        assert!(preset("fig9").unwrap_err().to_string().contains("table2-epsgreedy"));
    }
}
