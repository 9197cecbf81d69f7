//! Command-line front end.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

use crate::config::{apply_overrides, parse_config, preset, to_json, ExperimentConfig, PRESETS};
use crate::env::{MISSPEC_ALPHA0, MISSPEC_ALPHA1};
use crate::error::{Error, Result};
use crate::estimators::estimate;
use crate::harness::{
    compute_misspecified_s, histogram_export, limiting_law_sample, read_values_csv, resolve_theta_star,
    run_replications, write_histogram_csv, write_oracle_csv, write_summary_csv, write_theta_csv, LimitLawKind,
    ReplicationSummary, ThetaStar,
};
use crate::io::{save_trajectories, sidecar_path};
use crate::rng::{derive_stream, SeedSpec};
use crate::trial::run_trial;

#[derive(Debug, Parser)]
#[command(name = "replibandit", version, about = "Simulate bandit-driven trials and run post-trial inference")]
pub struct Cli {
    /// Log progress to stderr.
    #[arg(long, short, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one trial and write its trajectories and estimate.
    Run(RunArgs),
    /// Run many independent trials and aggregate.
    Replicate(ReplicateArgs),
    /// Merge summary.json files into one table.
    Report(ReportArgs),
    /// Bin a column of numbers into a histogram CSV.
    Hist(HistArgs),
    /// Draw from a limiting law.
    Oracle(OracleArgs),
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false, id = "source")]
pub struct ConfigSource {
    /// Compiled-in experiment (see the list below).
    #[arg(long, group = "source")]
    pub preset: Option<String>,
    /// JSON experiment file.
    #[arg(long, group = "source")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[command(flatten)]
    pub source: ConfigSource,
    /// Override a key, e.g. `--set n=100000` or `--set policy.epsilon=0.2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let base = match (&self.source.preset, &self.source.config) {
            (Some(name), _) => preset(name)?,
            (None, Some(path)) => parse_config(&fs::read_to_string(path)?, &path.display().to_string())?,
            (None, None) => return Err(Error::config("one of --preset or --config is required")),
        };
        let mut cfg = apply_overrides(&base, &self.overrides)?;
        if let Some(seed) = self.seed {
            cfg.master_seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Replication index of the trial.
    #[arg(long, default_value_t = 0)]
    pub rep: u64,
    /// Resolve the target value and report coverage flags.
    #[arg(long)]
    pub theta_star: bool,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplicateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Number of replications (overrides the config).
    #[arg(long)]
    pub reps: Option<usize>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    /// Also write every trial's trajectories.
    #[arg(long)]
    pub save_trajectories: bool,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// summary.json files.
    #[arg(required = true)]
    pub summaries: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
    /// Output file; stdout if absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct HistArgs {
    /// CSV with a `theta_hat` or `value` column.
    pub input: PathBuf,
    #[arg(long, default_value_t = 40)]
    pub bins: usize,
    /// Bin range as `LOW,HIGH`; the data range if absent.
    #[arg(long, value_parser = parse_range, allow_hyphen_values = true)]
    pub range: Option<(f64, f64)>,
    /// Column to bin.
    #[arg(long)]
    pub column: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OracleKind {
    TwoPoint,
    ScaledUniform,
    MisspecifiedG,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long, value_enum)]
    pub kind: OracleKind,
    #[arg(long, default_value_t = 100_000)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f64,
    #[arg(long, default_value_t = -0.125, allow_hyphen_values = true)]
    pub scale: f64,
    /// Quadrature points for the misspecified law.
    #[arg(long, default_value_t = 10_000)]
    pub resolution: usize,
    /// Use S = 0 for the misspecified law (a point mass).
    #[arg(long)]
    pub degenerate: bool,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_range(s: &str) -> std::result::Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected LOW,HIGH")?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("{lo}: {e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("{hi}: {e}"))?;
    Ok((lo, hi))
}

fn preset_help() -> String {
    let mut s = String::from("Presets:\n");
    for (name, about) in PRESETS {
        s.push_str(&format!("  {name:<18} {about}\n"));
    }
    s
}

pub fn command() -> clap::Command {
    Cli::command().after_help(preset_help())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Returns the files written.
pub fn cmd_run(args: &RunArgs) -> Result<Vec<PathBuf>> {
    let cfg = args.config.resolve()?;
    let star = if args.theta_star {
        resolve_theta_star(&cfg, 0)?
    } else {
        ThetaStar {
            value: None,
            provenance: "not requested".into(),
            std_error: None,
        }
    };
    fs::create_dir_all(&args.out)?;
    let trajs = run_trial(&cfg.trial_config(args.rep))?;
    let csv = args.out.join("trajectories.csv");
    save_trajectories(&trajs, &csv)?;
    let report = estimate(&trajs, &cfg.estimand, star.value)?;
    let est = args.out.join("estimate.json");
    write_json(&est, &report)?;
    Ok(vec![sidecar_path(&csv), csv, est])
}

pub fn cmd_replicate(args: &ReplicateArgs) -> Result<Vec<PathBuf>> {
    let mut cfg = args.config.resolve()?;
    if let Some(r) = args.reps {
        cfg.reps = r;
        cfg.validate()?;
    }
    fs::create_dir_all(&args.out)?;
    let config_path = args.out.join("config.json");
    create(&config_path)?.write_all(to_json(&cfg)?.as_bytes())?;
    let star = resolve_theta_star(&cfg, args.threads)?;
    let traj_dir = args.out.join("trajectories");
    if args.save_trajectories {
        fs::create_dir_all(&traj_dir)?;
    }
    let summary = run_replications(&cfg, &star, args.threads, args.save_trajectories.then_some(traj_dir.as_path()))?;
    eprintln!(
        "{}: {} replications in {:.1}s",
        cfg.name, summary.reps, summary.wall_time_secs
    );
    let json = args.out.join("summary.json");
    write_json(&json, &summary)?;
    let csv = args.out.join("summary.csv");
    write_summary_csv(std::slice::from_ref(&summary), create(&csv)?)?;
    let theta = args.out.join("theta.csv");
    write_theta_csv(&summary, create(&theta)?)?;
    let mut files = vec![config_path, json, csv, theta];
    if args.save_trajectories {
        files.push(traj_dir);
    }
    Ok(files)
}

pub fn cmd_report(args: &ReportArgs) -> Result<()> {
    let summaries = args
        .summaries
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p)?;
            serde_json::from_str::<ReplicationSummary>(&text)
                .map_err(|e| Error::parse(format!("{}:{}:{}", p.display(), e.line(), e.column()), e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let out: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    match args.format {
        Format::Csv => write_summary_csv(&summaries, out),
        Format::Json => {
            let mut out = out;
            serde_json::to_writer_pretty(&mut out, &summaries)?;
            out.write_all(b"\n")?;
            out.flush()?;
            Ok(())
        }
    }
}

pub fn cmd_hist(args: &HistArgs) -> Result<()> {
    let origin = args.input.display().to_string();
    let values = read_values_csv(File::open(&args.input)?, args.column.as_deref(), &origin)?;
    let h = histogram_export(&values, args.bins, args.range)?;
    write_histogram_csv(&h, create(&args.out)?)
}

pub fn cmd_oracle(args: &OracleArgs) -> Result<()> {
    let kind = match args.kind {
        OracleKind::TwoPoint => LimitLawKind::TwoPoint {
            epsilon: args.epsilon,
            scale: args.scale,
        },
        OracleKind::ScaledUniform => LimitLawKind::ScaledUniform { scale: args.scale },
        OracleKind::MisspecifiedG => LimitLawKind::MisspecifiedG {
            s: if args.degenerate {
                [[0.0; 2]; 2]
            } else {
                compute_misspecified_s(MISSPEC_ALPHA0, MISSPEC_ALPHA1, args.resolution)?
            },
            epsilon: args.epsilon,
            resolution: args.resolution,
            coordinate: 2,
        },
    };
    let mut stream = derive_stream(&SeedSpec::new(args.seed, 0, "oracle"));
    let values = limiting_law_sample(&kind, args.count, &mut stream)?;
    write_oracle_csv(&values, create(&args.out)?)
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Run(a) => cmd_run(a).map(|_| ()),
        Command::Replicate(a) => cmd_replicate(a).map(|_| ()),
        Command::Report(a) => cmd_report(a),
        Command::Hist(a) => cmd_hist(a),
        Command::Oracle(a) => cmd_oracle(a),
    }
}

/// Parse arguments, run, and map errors to a one-line message and exit code.
pub fn main_entry() -> std::process::ExitCode {
    let matches = command().get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(&cli) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.kind());
            let code = match e.kind() {
                "config" | "parse" => 2,
                _ => 1,
            };
            std::process::ExitCode::from(code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        command().debug_assert();
    }

    #[test]
    fn help_lists_every_preset() {
        let help = command().render_long_help().to_string();
        for (name, _) in PRESETS {
            assert!(help.contains(name), "{name}");
        }
    }

    #[test]
    fn range_parsing() {
        assert_eq!(parse_range("-0.2,0.1").unwrap(), (-0.2, 0.1));
        assert!(parse_range("1").is_err());
    }
}
