//! Acceptance criteria P1-P3, T1-T3, D1, O1, O2. One PASS/FAIL line each;
//! exits nonzero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use replibandit::config::{preset, ExperimentConfig};
use replibandit::env::{EnvKind, MISSPEC_ALPHA0, MISSPEC_ALPHA1};
use replibandit::estimators::{
    adaptive_sandwich_variance, least_squares_estimate, m_estimate, standard_sandwich_variance, EstimandKind,
    EstimandSpec, Featurization, Response,
};
use replibandit::harness::{
    compute_misspecified_s, ks_distance, limiting_law_sample, resolve_theta_star, run_replications, LimitLawKind,
    MaybeNa, ReplicationSummary, ThetaStar, ThetaStarSource,
};
use replibandit::linalg::min_eigenvalue;
use replibandit::policy::{boltzmann_prob, boltzmann_prob_gradient, PolicyKind};
use replibandit::rng::{derive_stream, SeedSpec, Stream};
use replibandit::trial::{run_trial, TrialConfig};

const ORACLE_DRAWS: usize = 100_000;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(checks: &[(bool, String)]) -> Verdict {
    Verdict {
        pass: checks.iter().all(|c| c.0),
        detail: checks
            .iter()
            .map(|(ok, s)| if *ok { s.clone() } else { format!("{s} [miss]") })
            .collect::<Vec<_>>()
            .join("; "),
    }
}

fn replicate(cfg: &ExperimentConfig, threads: usize) -> ReplicationSummary {
    let star = resolve_theta_star(cfg, threads).expect("theta*");
    run_replications(cfg, &star, threads, None).expect("replications")
}

fn stream(tag: &str) -> Stream {
    derive_stream(&SeedSpec::new(2024, 0, tag))
}

fn frac(values: &[f64], pred: impl Fn(f64) -> bool) -> f64 {
    values.iter().filter(|v| pred(**v)).count() as f64 / values.len() as f64
}

fn variance(values: &[f64]) -> f64 {
    let m = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64
}

fn p1() -> Verdict {
    let s = replicate(&preset("fig2-epsgreedy").unwrap(), 0);
    let low = frac(&s.theta_hat, |v| (v + 0.00625).abs() <= 0.02);
    let high = frac(&s.theta_hat, |v| (v + 0.11875).abs() <= 0.02);
    let law = LimitLawKind::TwoPoint {
        epsilon: 0.1,
        scale: -0.125,
    };
    let oracle = limiting_law_sample(&law, ORACLE_DRAWS, &mut stream("p1")).unwrap();
    let ks = ks_distance(&s.theta_hat, &oracle).unwrap();
    verdict(&[
        (low >= 0.45, format!("share near -0.00625 = {low:.3} (>= 0.45)")),
        (high >= 0.45, format!("share near -0.11875 = {high:.3} (>= 0.45)")),
        (
            (s.mean_theta_hat + 0.0625).abs() <= 0.005,
            format!("mean = {:.5} (-0.0625 +- 0.005)", s.mean_theta_hat),
        ),
        (ks < 0.08, format!("KS = {ks:.4} (< 0.08)")),
    ])
}

fn p2() -> Verdict {
    let s = replicate(&preset("fig2-ts").unwrap(), 0);
    let oracle =
        limiting_law_sample(&LimitLawKind::ScaledUniform { scale: -0.125 }, ORACLE_DRAWS, &mut stream("p2")).unwrap();
    let ks = ks_distance(&s.theta_hat, &oracle).unwrap();
    verdict(&[
        (ks < 0.06, format!("KS = {ks:.4} (< 0.06)")),
        (
            (s.mean_theta_hat + 0.0625).abs() <= 0.004,
            format!("mean = {:.5} (-0.0625 +- 0.004)", s.mean_theta_hat),
        ),
    ])
}

fn p3() -> Verdict {
    let cfg = preset("fig3").unwrap();
    let s = replicate(&cfg, 0);
    let above = frac(&s.theta_hat, |v| v > 0.02);
    let below = frac(&s.theta_hat, |v| v < -0.02);
    let law = LimitLawKind::MisspecifiedG {
        s: compute_misspecified_s(MISSPEC_ALPHA0, MISSPEC_ALPHA1, 10_000).unwrap(),
        epsilon: 0.1,
        resolution: 10_000,
        coordinate: 2,
    };
    let oracle = limiting_law_sample(&law, ORACLE_DRAWS, &mut stream("p3")).unwrap();
    let ks = ks_distance(&s.theta_hat, &oracle).unwrap();

    let mut big = cfg.clone();
    big.n = 1_000_000;
    big.reps = 200;
    let sb = run_replications(
        &big,
        &ThetaStar {
            value: None,
            provenance: "none".into(),
            std_error: None,
        },
        0,
        None,
    )
    .unwrap();
    let (v5, v6) = (variance(&s.theta_hat), variance(&sb.theta_hat));
    verdict(&[
        (above > 0.1, format!("P(> 0.02) = {above:.3} (> 0.1)")),
        (below > 0.1, format!("P(< -0.02) = {below:.3} (> 0.1)")),
        (ks < 0.10, format!("KS = {ks:.4} (< 0.10)")),
        (
            v6 > 0.5 * v5,
            format!("var n=1e5 {v5:.3e}, n=1e6 {v6:.3e}, drop {:.1}% (< 50%)", 100.0 * (1.0 - v6 / v5)),
        ),
    ])
}

fn t1() -> Verdict {
    let s = replicate(&preset("table1-boltzmann").unwrap(), 0);
    let as_var = s.mean_var_adaptive.value().unwrap_or(f64::NAN);
    let ratio = as_var / s.empirical_variance;
    let cov = s.coverage_adaptive.value().unwrap_or(f64::NAN);
    verdict(&[
        (
            (s.mean_theta_hat - 0.213).abs() <= 0.015,
            format!("mean = {:.4} (0.213 +- 0.015)", s.mean_theta_hat),
        ),
        (
            (0.7..=1.3).contains(&ratio),
            format!(
                "AS/empirical = {as_var:.3e}/{:.3e} = {ratio:.3} ([0.7, 1.3])",
                s.empirical_variance
            ),
        ),
        (
            (0.93..=0.975).contains(&cov),
            format!("AS coverage = {cov:.3} ([0.93, 0.975]; theta* {})", fmt_star(&s.theta_star)),
        ),
    ])
}

fn fmt_star(t: &ThetaStar) -> String {
    match (t.value, t.std_error) {
        (Some(v), Some(se)) => format!("{v:.5} +- {se:.5}"),
        (Some(v), None) => format!("{v:.5}"),
        _ => t.provenance.clone(),
    }
}

fn t2() -> Verdict {
    let s = replicate(&preset("table1-epsgreedy").unwrap(), 0);
    let under = s.empirical_variance / s.mean_var_standard;
    let cov = s.coverage_standard.value().unwrap_or(f64::NAN);
    let na = MaybeNa::Na {
        na: "not_differentiable".into(),
    };
    verdict(&[
        (
            under >= 5.0,
            format!(
                "empirical/S = {:.3e}/{:.3e} = {under:.1} (>= 5)",
                s.empirical_variance, s.mean_var_standard
            ),
        ),
        (cov <= 0.5, format!("S coverage = {cov:.3} (<= 0.5)")),
        (
            s.mean_var_adaptive == na && s.coverage_adaptive == na,
            format!("AS = {:?}", s.mean_var_adaptive),
        ),
    ])
}

fn t3() -> Verdict {
    let s = replicate(&preset("table2-boltzmann").unwrap(), 0);
    let as_var = s.mean_var_adaptive.value().unwrap_or(f64::NAN);
    let ratio = as_var / s.empirical_variance;
    let cov = s.coverage_adaptive.value().unwrap_or(f64::NAN);
    verdict(&[
        (
            (0.925..=0.975).contains(&cov),
            format!(
                "AS coverage = {cov:.3} ([0.925, 0.975]; mean {:.3}, theta* {})",
                s.mean_theta_hat,
                fmt_star(&s.theta_star)
            ),
        ),
        (
            (0.6..=1.4).contains(&ratio),
            format!(
                "AS/empirical = {as_var:.3}/{:.3} = {ratio:.3} ([0.6, 1.4])",
                s.empirical_variance
            ),
        ),
    ])
}

fn metric(name: &str, n: usize, reps: usize) -> f64 {
    let mut cfg = preset(name).unwrap();
    cfg.n = n;
    cfg.reps = reps;
    cfg.theta_star = ThetaStarSource::None;
    replicate(&cfg, 0).replicability.expect("replicability").metric
}

fn d1() -> Verdict {
    let small = metric("table1-boltzmann", 1000, 200);
    let large = metric("table1-boltzmann", 4000, 200);
    let eg: Vec<(usize, f64)> = [1_000, 10_000, 100_000]
        .iter()
        .map(|n| (*n, metric("fig2-epsgreedy", *n, 200)))
        .collect();
    let mut checks = vec![(
        small / large >= 1.6,
        format!(
            "Boltzmann t=25: n=1000 {small:.4}, n=4000 {large:.4}, ratio {:.2} (>= 1.6)",
            small / large
        ),
    )];
    for (n, m) in eg {
        checks.push((m >= 0.3, format!("eps-greedy t=2 n={n}: {m:.3} (>= 0.3)")));
    }
    verdict(&checks)
}

/// Gaussian elimination with partial pivoting on a dense copy.
fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let d = b.len();
    for col in 0..d {
        let piv = (col..d).max_by(|x, y| a[*x][col].abs().total_cmp(&a[*y][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..d {
            let f = a[r][col] / a[col][col];
            for c in col..d {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; d];
    for r in (0..d).rev() {
        let s: f64 = (r + 1..d).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

fn small_trial(policy: PolicyKind, rep: u64, s: &mut Stream) -> TrialConfig {
    TrialConfig {
        n: 6 + s.below(10),
        horizon: 2 + s.below(4),
        update_every: 1,
        env: EnvKind::synthetic_default(),
        policy,
        master_seed: 77,
        replication_index: rep,
        record_full_probs: false,
    }
}

fn o1() -> Verdict {
    let mut s = stream("o1");
    let stacked = EstimandSpec {
        estimator: EstimandKind::LeastSquares {
            featurization: Featurization::Stacked,
            response: Response::Outcome,
        },
        level: 0.95,
        target_index: 2,
    };
    let boltz = PolicyKind::Boltzmann {
        pi_min: 0.1,
        steepness: 2.0,
        lambda: 1.0,
    };

    let mut ls_err: f64 = 0.0;
    let mut psd_min: f64 = f64::INFINITY;
    let mut instances = 0;
    let mut rep = 0;
    while instances < 100 {
        rep += 1;
        let tr = run_trial(&small_trial(boltz, rep, &mut s)).unwrap();
        let Ok(theta) = least_squares_estimate(&tr, &stacked) else {
            continue;
        };
        instances += 1;
        let mut a = vec![vec![0.0; 4]; 4];
        let mut b = vec![0.0; 4];
        for i in 0..tr.n {
            for t in 1..=tr.horizon {
                let x = tr.context(i, t);
                let act = if tr.actions[tr.cell(i, t)] { 1.0 } else { 0.0 };
                let z = [x[0], x[1], act * x[0], act * x[1]];
                for r in 0..4 {
                    for c in 0..4 {
                        a[r][c] += z[r] * z[c];
                    }
                    b[r] += z[r] * tr.outcomes[tr.cell(i, t)];
                }
            }
        }
        let oracle = dense_solve(a, b);
        let scale = oracle.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
        for k in 0..4 {
            ls_err = ls_err.max((theta[k] - oracle[k]).abs() / scale);
        }
        let est = m_estimate(&tr, &stacked).unwrap();
        for v in [
            standard_sandwich_variance(&est).unwrap(),
            adaptive_sandwich_variance(&tr, &est).unwrap(),
        ] {
            psd_min = psd_min.min(min_eigenvalue(&v) / v.abs().max().max(1e-300));
        }
    }

    let mut fd_err: f64 = 0.0;
    for _ in 0..100 {
        let phi = [1.0, s.standard_normal(), s.standard_normal()];
        let beta = [s.standard_normal(), s.standard_normal(), s.standard_normal()];
        let mut g = [0.0; 3];
        boltzmann_prob_gradient(&phi, &beta, 0.1, 2.0, &mut g).unwrap();
        for k in 0..3 {
            let h = 1e-6;
            let (mut up, mut dn) = (beta, beta);
            up[k] += h;
            dn[k] -= h;
            let fd = (boltzmann_prob(&phi, &up, 0.1, 2.0) - boltzmann_prob(&phi, &dn, 0.1, 2.0)) / (2.0 * h);
            // Relative error, with the central-difference rounding floor eps/h.
            fd_err = fd_err.max((fd - g[k]).abs() / g[k].abs().max(1e-3));
        }
    }

    let mut identical = true;
    for rep in 0..20 {
        let tr = run_trial(&small_trial(PolicyKind::Fixed { prob: 0.4 }, rep, &mut s)).unwrap();
        for spec in [EstimandSpec::average(), stacked] {
            if let Ok(est) = m_estimate(&tr, &spec) {
                let (a, b) = (
                    standard_sandwich_variance(&est).unwrap(),
                    adaptive_sandwich_variance(&tr, &est).unwrap(),
                );
                identical &= a == b;
                psd_min = psd_min.min(min_eigenvalue(&a) / a.abs().max().max(1e-300));
            }
        }
    }
    verdict(&[
        (
            ls_err <= 1e-10,
            format!("LS vs dense oracle max rel err {ls_err:.2e} over {instances} instances (<= 1e-10)"),
        ),
        (fd_err <= 1e-6, format!("gradient vs central differences max rel err {fd_err:.2e} (<= 1e-6)")),
        (identical, "AS == S under fixed policies".to_string()),
        (
            psd_min >= -1e-12,
            format!("sandwich min eigenvalue / scale {psd_min:.2e} (PSD)"),
        ),
    ])
}

fn o2() -> Verdict {
    let mut checks = Vec::new();
    let mut t1 = preset("table1-boltzmann").unwrap();
    t1.reps = 100;
    t1.theta_star = ThetaStarSource::Value { value: 0.3 };
    for cfg in [preset("fig2-epsgreedy").unwrap(), t1] {
        let a = serde_json::to_string_pretty(&replicate(&cfg, 1)).unwrap();
        let b = serde_json::to_string_pretty(&replicate(&cfg, 8)).unwrap();
        let c = serde_json::to_string_pretty(&replicate(&cfg, 1)).unwrap();
        checks.push((
            a == b && a == c,
            format!("{}: summary.json identical at 1 and 8 threads ({} bytes)", cfg.name, a.len()),
        ));
    }
    verdict(&checks)
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Verdict); 9] = [
        ("P1", p1),
        ("P2", p2),
        ("P3", p3),
        ("T1", t1),
        ("T2", t2),
        ("T3", t3),
        ("D1", d1),
        ("O1", o1),
        ("O2", o2),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (id, check) in criteria {
        if !only.is_empty() && !only.iter().any(|o| o == id) {
            continue;
        }
        let start = Instant::now();
        let v = check();
        let secs = start.elapsed().as_secs_f64();
        println!("{} {id} {} ({secs:.1}s)", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.pass);
    }
    if failed > 0 {
        println!("acceptance: {failed} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    }
}
