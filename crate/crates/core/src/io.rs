//! Trajectory CSV and snapshot sidecar.
//!
//! Floats are written with Rust's shortest round-trip formatting, so reading a
//! file back reproduces every value bit for bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{PolicyKind, PolicySnapshot};
use crate::trial::TrajectorySet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub replication_index: u64,
    pub n: usize,
    pub horizon: usize,
    pub feature_dim: usize,
    pub policy: PolicyKind,
    pub snapshots: Vec<PolicySnapshot>,
}

/// `trajectories.csv` becomes `trajectories.snapshots.json`.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("snapshots.json")
}

fn header(feature_dim: usize, full_probs: bool) -> Vec<String> {
    let mut h: Vec<String> = ["rep", "i", "t"].iter().map(|s| s.to_string()).collect();
    h.extend((0..feature_dim).map(|k| format!("ctx_{k}")));
    h.extend(["action", "propensity", "outcome", "reward"].iter().map(|s| s.to_string()));
    if full_probs {
        h.push("prob_treat".into());
    }
    h
}

pub fn write_trajectories_csv<W: Write>(trajs: &TrajectorySet, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(trajs.feature_dim, trajs.prob_treat.is_some()))?;
    let mut row: Vec<String> = Vec::new();
    for i in 0..trajs.n {
        for t in 1..=trajs.horizon {
            let cell = trajs.cell(i, t);
            row.clear();
            row.push(trajs.replication_index.to_string());
            row.push(i.to_string());
            row.push(t.to_string());
            row.extend(trajs.context(i, t).iter().map(|x| x.to_string()));
            row.push(u8::from(trajs.actions[cell]).to_string());
            row.push(trajs.propensities[cell].to_string());
            row.push(trajs.outcomes[cell].to_string());
            row.push(trajs.rewards[cell].to_string());
            if let Some(p) = &trajs.prob_treat {
                row.push(p[cell].to_string());
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn sidecar_of(trajs: &TrajectorySet) -> Sidecar {
    Sidecar {
        replication_index: trajs.replication_index,
        n: trajs.n,
        horizon: trajs.horizon,
        feature_dim: trajs.feature_dim,
        policy: trajs.policy,
        snapshots: trajs.snapshots.clone(),
    }
}

/// Write `csv_path` and its sidecar.
pub fn save_trajectories(trajs: &TrajectorySet, csv_path: &Path) -> Result<()> {
    write_trajectories_csv(trajs, BufWriter::new(File::create(csv_path)?))?;
    let mut side = BufWriter::new(File::create(sidecar_path(csv_path))?);
    serde_json::to_writer_pretty(&mut side, &sidecar_of(trajs))?;
    side.write_all(b"\n")?;
    side.flush()?;
    Ok(())
}

pub fn load_trajectories(csv_path: &Path) -> Result<TrajectorySet> {
    let side_path = sidecar_path(csv_path);
    let side: Sidecar = serde_json::from_reader(BufReader::new(File::open(&side_path)?)).map_err(|e| {
        Error::parse(
            format!("{}:{}:{}", side_path.display(), e.line(), e.column()),
            e.to_string(),
        )
    })?;
    read_trajectories_csv(File::open(csv_path)?, side, &csv_path.display().to_string())
}

pub fn read_trajectories_csv<R: Read>(input: R, side: Sidecar, origin: &str) -> Result<TrajectorySet> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    let full_probs = headers.iter().last() == Some("prob_treat");
    let expected = header(side.feature_dim, full_probs);
    if headers.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::parse(
            format!("{origin}:1"),
            format!("expected columns {}", expected.join(",")),
        ));
    }
    let (n, horizon, d) = (side.n, side.horizon, side.feature_dim);
    let cells = n * horizon;
    let mut trajs = TrajectorySet {
        n,
        horizon,
        feature_dim: d,
        replication_index: side.replication_index,
        policy: side.policy,
        contexts: vec![0.0; cells * d],
        actions: vec![false; cells],
        propensities: vec![0.0; cells],
        outcomes: vec![0.0; cells],
        rewards: vec![0.0; cells],
        prob_treat: full_probs.then(|| vec![0.0; cells]),
        snapshots: side.snapshots,
    };
    let mut seen = vec![false; cells];
    for (k, rec) in r.records().enumerate() {
        let line = k + 2;
        let rec = rec?;
        let field = |col: usize| -> Result<&str> {
            rec.get(col)
                .ok_or_else(|| Error::parse(format!("{origin}:{line}"), format!("missing column {}", expected[col])))
        };
        let num = |col: usize| -> Result<f64> {
            field(col)?.parse::<f64>().map_err(|e| {
                Error::parse(format!("{origin}:{line}"), format!("column {}: {e}", expected[col]))
            })
        };
        let idx = |col: usize| -> Result<usize> {
            field(col)?.parse::<usize>().map_err(|e| {
                Error::parse(format!("{origin}:{line}"), format!("column {}: {e}", expected[col]))
            })
        };
        let (i, t) = (idx(1)?, idx(2)?);
        if i >= n || t == 0 || t > horizon {
            return Err(Error::parse(format!("{origin}:{line}"), format!("cell ({i}, {t}) out of range")));
        }
        let cell = trajs.cell(i, t);
        if std::mem::replace(&mut seen[cell], true) {
            return Err(Error::parse(format!("{origin}:{line}"), format!("duplicate cell ({i}, {t})")));
        }
        for c in 0..d {
            trajs.contexts[cell * d + c] = num(3 + c)?;
        }
        trajs.actions[cell] = match field(3 + d)? {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::parse(format!("{origin}:{line}"), format!("action must be 0 or 1, got {other}")));
            }
        };
        trajs.propensities[cell] = num(4 + d)?;
        trajs.outcomes[cell] = num(5 + d)?;
        trajs.rewards[cell] = num(6 + d)?;
        if let Some(p) = trajs.prob_treat.as_mut() {
            p[cell] = num(7 + d)?;
        }
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::parse(
            origin.to_string(),
            format!("missing cell ({}, {})", missing / horizon, missing % horizon + 1),
        ));
    }
    Ok(trajs)
}
