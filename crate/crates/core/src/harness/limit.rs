//! Limiting laws of the average and least-squares estimators for the two
//! non-replicable examples, and the two-sample KS distance used to compare
//! them with simulated estimates.

use nalgebra::{Matrix2, Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::env::{MISSPEC_ALPHA0, MISSPEC_ALPHA1};
use crate::error::{Error, Result};
use crate::rng::Stream;

/// Second moment of the stacked features `[1, x, a, a x]` with
/// `x ~ U[0, 1]` and `a ~ Bernoulli(1/2)`.
pub const MISSPEC_B: [[f64; 4]; 4] = [
    [1.0, 0.5, 0.5, 0.25],
    [0.5, 1.0 / 3.0, 0.25, 1.0 / 6.0],
    [0.5, 0.25, 0.5, 0.25],
    [0.25, 1.0 / 6.0, 0.25, 1.0 / 6.0],
];

pub const MIN_RESOLUTION: usize = 100;

fn default_scale() -> f64 {
    -0.125
}

fn default_resolution() -> usize {
    10_000
}

fn default_coordinate() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LimitLawKind {
    /// `scale * Z` with `Z` equal to `eps/2` or `1 - eps/2`, each w.p. 1/2.
    TwoPoint {
        epsilon: f64,
        #[serde(default = "default_scale")]
        scale: f64,
    },
    /// `scale * U[0, 1]`.
    ScaledUniform {
        #[serde(default = "default_scale")]
        scale: f64,
    },
    /// One coordinate of `(B + g0(b))^{-1} (v + g1(b))`, `b ~ N(0, S)`.
    MisspecifiedG {
        s: [[f64; 2]; 2],
        epsilon: f64,
        #[serde(default = "default_resolution")]
        resolution: usize,
        #[serde(default = "default_coordinate")]
        coordinate: usize,
    },
}

impl LimitLawKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LimitLawKind::TwoPoint { epsilon, .. } | LimitLawKind::MisspecifiedG { epsilon, .. }
                if !(0.0..=1.0).contains(&epsilon) =>
            {
                Err(Error::config(format!("epsilon must lie in [0, 1], got {epsilon}")))
            }
            LimitLawKind::MisspecifiedG { resolution, .. } if resolution < MIN_RESOLUTION => Err(Error::config(
                format!("quadrature resolution must be at least {MIN_RESOLUTION}, got {resolution}"),
            )),
            LimitLawKind::MisspecifiedG { coordinate, .. } if coordinate >= 4 => {
                Err(Error::config(format!("coordinate must lie in 0..4, got {coordinate}")))
            }
            LimitLawKind::MisspecifiedG { s, .. } => {
                let sym = s[0][1] == s[1][0];
                let psd = s[0][0] >= 0.0 && s[1][1] >= 0.0 && s[0][0] * s[1][1] - s[0][1] * s[1][0] >= -1e-12;
                if sym && psd {
                    Ok(())
                } else {
                    Err(Error::config("S must be symmetric positive semidefinite"))
                }
            }
            _ => Ok(()),
        }
    }
}

pub fn limiting_law_sample(kind: &LimitLawKind, count: usize, stream: &mut Stream) -> Result<Vec<f64>> {
    kind.validate()?;
    match *kind {
        LimitLawKind::TwoPoint { epsilon, scale } => Ok((0..count)
            .map(|_| {
                let z = if stream.bernoulli(0.5) { 1.0 - epsilon / 2.0 } else { epsilon / 2.0 };
                scale * z
            })
            .collect()),
        LimitLawKind::ScaledUniform { scale } => Ok((0..count).map(|_| scale * stream.uniform01()).collect()),
        LimitLawKind::MisspecifiedG {
            s,
            epsilon,
            resolution,
            coordinate,
        } => {
            let law = MisspecifiedLimit::new(MISSPEC_ALPHA0, MISSPEC_ALPHA1, epsilon, resolution)?;
            let chol = cholesky2(s);
            (0..count)
                .map(|_| {
                    let beta = gaussian2(&chol, stream);
                    Ok(law.theta(beta)?[coordinate])
                })
                .collect()
        }
    }
}

/// Lower-triangular factor of a PSD 2x2 matrix; zero variances give zero columns.
fn cholesky2(s: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let l11 = s[0][0].max(0.0).sqrt();
    let l21 = if l11 > 0.0 { s[1][0] / l11 } else { 0.0 };
    let l22 = (s[1][1] - l21 * l21).max(0.0).sqrt();
    [[l11, 0.0], [l21, l22]]
}

fn gaussian2(l: &[[f64; 2]; 2], stream: &mut Stream) -> [f64; 2] {
    let (z1, z2) = (stream.standard_normal(), stream.standard_normal());
    [l[0][0] * z1, l[1][0] * z1 + l[1][1] * z2]
}

/// Integrand pieces for one action: `phi~ phi~^T` and `phi~ mu_a(x)`.
#[derive(Clone, Copy)]
struct Moments {
    m: Matrix4<f64>,
    v: Vector4<f64>,
}

impl Moments {
    fn zero() -> Self {
        Moments {
            m: Matrix4::zeros(),
            v: Vector4::zeros(),
        }
    }

    fn at(alpha0: &[f64; 3], alpha1: &[f64; 3], x: f64, action: bool) -> Self {
        let a = f64::from(u8::from(action));
        let f = Vector4::new(1.0, x, a, a * x);
        let quad = |c: &[f64; 3]| c[0] + c[1] * x + c[2] * x * x;
        let mu = quad(alpha0) + a * quad(alpha1);
        Moments {
            m: f * f.transpose(),
            v: f * mu,
        }
    }

    fn axpy(&mut self, w: f64, other: &Moments) {
        self.m += other.m * w;
        self.v += other.v * w;
    }
}

/// Limit of the pooled least-squares fit over both periods when the
/// second-period policy is epsilon-greedy on the sign of `[1, x]^T b`.
/// Integrals over `x` use a composite midpoint rule refined at the
/// indicator's threshold.
pub struct MisspecifiedLimit {
    epsilon: f64,
    resolution: usize,
    alpha0: [f64; 3],
    alpha1: [f64; 3],
    b: Matrix4<f64>,
    v: Vector4<f64>,
    base: Moments,
    /// `prefix[k]` integrates `F_1 - F_0` over the first `k` cells.
    prefix: Vec<Moments>,
}

impl MisspecifiedLimit {
    pub fn new(alpha0: [f64; 3], alpha1: [f64; 3], epsilon: f64, resolution: usize) -> Result<Self> {
        if resolution < MIN_RESOLUTION {
            return Err(Error::config(format!(
                "quadrature resolution must be at least {MIN_RESOLUTION}, got {resolution}"
            )));
        }
        let h = 1.0 / resolution as f64;
        let mut a0 = Moments::zero();
        let mut a1 = Moments::zero();
        let mut prefix = Vec::with_capacity(resolution + 1);
        let mut acc = Moments::zero();
        prefix.push(acc);
        for j in 0..resolution {
            let x = (j as f64 + 0.5) * h;
            let f0 = Moments::at(&alpha0, &alpha1, x, false);
            let f1 = Moments::at(&alpha0, &alpha1, x, true);
            a0.axpy(h, &f0);
            a1.axpy(h, &f1);
            acc.axpy(h, &f1);
            acc.axpy(-h, &f0);
            prefix.push(acc);
        }
        let mut half = Moments::zero();
        half.axpy(0.5, &a0);
        half.axpy(0.5, &a1);
        let mut base = Moments::zero();
        base.axpy(epsilon / 2.0, &a1);
        base.axpy(1.0 - epsilon / 2.0, &a0);
        Ok(MisspecifiedLimit {
            epsilon,
            resolution,
            alpha0,
            alpha1,
            b: Matrix4::from_fn(|r, c| MISSPEC_B[r][c]),
            v: half.v,
            base,
            prefix,
        })
    }

    pub fn b(&self) -> &Matrix4<f64> {
        &self.b
    }

    pub fn v(&self) -> &Vector4<f64> {
        &self.v
    }

    /// `beta* = B^{-1} v`, the first-period fit's limit.
    pub fn beta_star(&self) -> Vector4<f64> {
        self.b.lu().solve(&self.v).expect("B is nonsingular")
    }

    /// Integral of `F_1 - F_0` over `[0, c]`.
    fn partial(&self, c: f64) -> Moments {
        let c = c.clamp(0.0, 1.0);
        let h = 1.0 / self.resolution as f64;
        let k = ((c / h).floor() as usize).min(self.resolution);
        let mut out = self.prefix[k];
        let left = k as f64 * h;
        let width = c - left;
        if width > 0.0 {
            let mid = left + width / 2.0;
            out.axpy(width, &Moments::at(&self.alpha0, &self.alpha1, mid, true));
            out.axpy(-width, &Moments::at(&self.alpha0, &self.alpha1, mid, false));
        }
        out
    }

    /// `(g0(b), g1(b))`.
    pub fn g(&self, beta: [f64; 2]) -> (Matrix4<f64>, Vector4<f64>) {
        let total = self.prefix[self.resolution];
        let [b0, b1] = beta;
        let region = if b1 == 0.0 {
            if b0 > 0.0 {
                total
            } else {
                Moments::zero()
            }
        } else {
            let cut = -b0 / b1;
            let below = self.partial(cut);
            if b1 > 0.0 {
                // Treated where x > cut.
                let mut m = total;
                m.axpy(-1.0, &below);
                m
            } else {
                below
            }
        };
        let mut g = self.base;
        g.axpy(1.0 - self.epsilon, &region);
        (g.m, g.v)
    }

    pub fn theta(&self, beta: [f64; 2]) -> Result<Vector4<f64>> {
        let (g0, g1) = self.g(beta);
        (self.b + g0)
            .lu()
            .solve(&(self.v + g1))
            .ok_or_else(|| Error::Singular("limit normal equations".into()))
    }

    /// `(B + E g0)^{-1} (v + E g1)` with the expectation over `b ~ N(0, S)`
    /// taken by Monte Carlo.
    pub fn theta_star(&self, s: [[f64; 2]; 2], draws: usize, stream: &mut Stream) -> Result<Vector4<f64>> {
        if draws == 0 {
            return Err(Error::config("theta* needs at least one draw"));
        }
        let chol = cholesky2(s);
        let mut m = Matrix4::zeros();
        let mut v = Vector4::zeros();
        for _ in 0..draws {
            let (g0, g1) = self.g(gaussian2(&chol, stream));
            m += g0;
            v += g1;
        }
        let k = draws as f64;
        (self.b + m / k)
            .lu()
            .solve(&(self.v + v / k))
            .ok_or_else(|| Error::Singular("limit normal equations".into()))
    }
}

/// `E[(R - phi~^T beta*)^2 phi~ phi~^T]` under uniform randomization and unit noise variance.
pub fn misspecified_sigma(alpha0: [f64; 3], alpha1: [f64; 3], resolution: usize) -> Result<Matrix4<f64>> {
    let law = MisspecifiedLimit::new(alpha0, alpha1, 0.0, resolution)?;
    let beta = law.beta_star();
    let h = 1.0 / resolution as f64;
    let mut sigma = Matrix4::<f64>::zeros();
    for j in 0..resolution {
        let x = (j as f64 + 0.5) * h;
        for action in [false, true] {
            let f = Moments::at(&alpha0, &alpha1, x, action);
            let a = f64::from(u8::from(action));
            let feat = Vector4::new(1.0, x, a, a * x);
            // f.v[0] is mu_a(x) since the first feature is 1.
            let bias = f.v[0] - feat.dot(&beta);
            sigma += f.m * (0.5 * h * (1.0 + bias * bias));
        }
    }
    Ok(sigma)
}

/// Asymptotic covariance of the advantage block of the first-period fit:
/// the lower-right 2x2 of `B^{-1} Sigma B^{-1}`.
pub fn compute_misspecified_s(alpha0: [f64; 3], alpha1: [f64; 3], resolution: usize) -> Result<[[f64; 2]; 2]> {
    let sigma = misspecified_sigma(alpha0, alpha1, resolution)?;
    let b_inv = Matrix4::from_fn(|r, c| MISSPEC_B[r][c])
        .try_inverse()
        .expect("B is nonsingular");
    let full = b_inv * sigma * b_inv;
    let block: Matrix2<f64> = full.fixed_view::<2, 2>(2, 2).into_owned();
    let off = 0.5 * (block[(0, 1)] + block[(1, 0)]);
    Ok([[block[(0, 0)], off], [off, block[(1, 1)]]])
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::domain("KS distance needs two nonempty samples"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{derive_stream, SeedSpec};

    fn stream(tag: &str) -> Stream {
        derive_stream(&SeedSpec::new(17, 0, tag))
    }

    #[test]
    fn two_point_mean_and_support() {
        let draws = limiting_law_sample(
            &LimitLawKind::TwoPoint {
                epsilon: 0.1,
                scale: -0.125,
            },
            1_000_000,
            &mut stream("tp"),
        )
        .unwrap();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((mean + 0.0625).abs() < 0.001);
        assert!(draws.iter().all(|x| *x == -0.125 * 0.05 || *x == -0.125 * 0.95));
    }

    #[test]
    fn scaled_uniform_is_uniform() {
        let draws = limiting_law_sample(&LimitLawKind::ScaledUniform { scale: -0.125 }, 1_000_000, &mut stream("su"))
            .unwrap();
        let mut sorted = draws.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        // One-sample KS against the exact CDF of U[-0.125, 0].
        let ks = sorted
            .iter()
            .enumerate()
            .map(|(k, x)| {
                let cdf = (x + 0.125) / 0.125;
                (cdf - k as f64 / n).abs().max(((k + 1) as f64 / n - cdf).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.003, "ks {ks}");
        assert!(draws.iter().all(|x| (-0.125..=0.0).contains(x)));
    }

    #[test]
    fn printed_b_matches_quadrature_and_beta_star() {
        let law = MisspecifiedLimit::new(MISSPEC_ALPHA0, MISSPEC_ALPHA1, 0.1, 10_000).unwrap();
        assert_eq!(MISSPEC_B[0][1], 0.5);
        assert_eq!(MISSPEC_B[1][1], 1.0 / 3.0);
        let beta = law.beta_star();
        for (k, want) in [0.1, 0.1, 0.0, 0.0].iter().enumerate() {
            assert!((beta[k] - want).abs() < 1e-8, "beta* {beta}");
        }
    }

    /// Exact interval integrals of `x^k` for the moment matrices.
    fn exact_region(lo: f64, hi: f64) -> (Matrix4<f64>, Vector4<f64>) {
        let m = |k: i32| (hi.powi(k + 1) - lo.powi(k + 1)) / (k + 1) as f64;
        // F_1 - F_0 with alpha0 = [0, 0, 0.3]... expanded symbolically below.
        let mut dm = Matrix4::zeros();
        // phi1 phi1^T - phi0 phi0^T: only entries touching the action coordinates.
        let rows = [[0, 0, 0, 1], [0, 0, 1, 2], [0, 1, 0, 1], [1, 2, 1, 2]];
        for r in 0..4 {
            for c in 0..4 {
                if r >= 2 || c >= 2 {
                    dm[(r, c)] = m(rows[r][c]);
                }
            }
        }
        // mu1 phi1 - mu0 phi0 with mu0 = a0 . [1, x, x^2], mu1 = mu0 + a1 . [1, x, x^2].
        let (a0, a1) = (MISSPEC_ALPHA0, MISSPEC_ALPHA1);
        let poly = |c: &[f64; 3], shift: i32| c[0] * m(shift) + c[1] * m(shift + 1) + c[2] * m(shift + 2);
        let mu1 = [a0[0] + a1[0], a0[1] + a1[1], a0[2] + a1[2]];
        let dv = Vector4::new(poly(&a1, 0), poly(&a1, 1), poly(&mu1, 0), poly(&mu1, 1));
        (dm, dv)
    }

    #[test]
    fn g_matches_exact_polynomial_integrals() {
        let law = MisspecifiedLimit::new(MISSPEC_ALPHA0, MISSPEC_ALPHA1, 0.1, 10_000).unwrap();
        let (base, basev) = law.g([-1.0, 0.0]);
        for (beta, lo, hi) in [([-0.3, 1.0], 0.3, 1.0), ([0.7, -1.0], 0.0, 0.7), ([1.0, 0.0], 0.0, 1.0)] {
            let (g0, g1) = law.g(beta);
            let (dm, dv) = exact_region(lo, hi);
            assert!((g0 - base - dm * 0.9).abs().max() < 1e-8, "{beta:?}");
            assert!((g1 - basev - dv * 0.9).abs().max() < 1e-8, "{beta:?}");
        }
    }

    #[test]
    fn degenerate_s_is_a_point_mass() {
        let kind = LimitLawKind::MisspecifiedG {
            s: [[0.0, 0.0], [0.0, 0.0]],
            epsilon: 0.1,
            resolution: 1000,
            coordinate: 2,
        };
        let draws = limiting_law_sample(&kind, 50, &mut stream("deg")).unwrap();
        let law = MisspecifiedLimit::new(MISSPEC_ALPHA0, MISSPEC_ALPHA1, 0.1, 1000).unwrap();
        let want = law.theta([0.0, 0.0]).unwrap()[2];
        assert!(draws.iter().all(|x| *x == want));
        let coarse = LimitLawKind::MisspecifiedG {
            s: [[0.0, 0.0], [0.0, 0.0]],
            epsilon: 0.1,
            resolution: 99,
            coordinate: 2,
        };
        assert!(matches!(limiting_law_sample(&coarse, 1, &mut stream("x")), Err(Error::Config(_))));
    }

    #[test]
    fn s_is_converged_symmetric_psd() {
        let coarse = misspecified_sigma(MISSPEC_ALPHA0, MISSPEC_ALPHA1, 1_000).unwrap();
        let fine = misspecified_sigma(MISSPEC_ALPHA0, MISSPEC_ALPHA1, 100_000).unwrap();
        assert!((coarse - fine).abs().max() < 1e-6, "{}", (coarse - fine).abs().max());
        let s = compute_misspecified_s(MISSPEC_ALPHA0, MISSPEC_ALPHA1, 10_000).unwrap();
        assert_eq!(s[0][1], s[1][0]);
        assert!(s[0][0] > 0.0 && s[0][0] * s[1][1] - s[0][1] * s[0][1] > 0.0);
        assert!((s[0][0] - 16.25).abs() < 0.05 && (s[0][1] + 24.42).abs() < 0.05, "{s:?}");
    }

    #[test]
    fn ks_examples() {
        assert_eq!(ks_distance(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(ks_distance(&[1.0, 2.0], &[5.0, 6.0, 7.0]).unwrap(), 1.0);
        let mut s = stream("ks");
        let a: Vec<f64> = (0..100_000).map(|_| s.uniform01()).collect();
        let b: Vec<f64> = (0..100_000).map(|_| s.uniform01()).collect();
        assert!(ks_distance(&a, &b).unwrap() < 0.01);
        assert!(ks_distance(&[], &b).is_err());
        // Ties across samples.
        assert_eq!(ks_distance(&[0.0, 1.0], &[0.0, 0.0]).unwrap(), 0.5);
    }
}
