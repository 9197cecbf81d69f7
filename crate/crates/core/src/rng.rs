//! Deterministic, splittable random streams.
//!
//! Every stream is derived by hashing `(master_seed, replication_index,
//! role_tag, path...)`, so the draws a consumer sees never depend on the
//! order in which replications, individuals or threads are scheduled.

use rand::{Rng, RngCore, SeedableRng};
use rand_distr::{Distribution, Poisson, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
fn absorb(state: u64, word: u64) -> u64 {
    mix64(state.wrapping_add(GOLDEN_GAMMA) ^ mix64(word.wrapping_add(GOLDEN_GAMMA)))
}

fn hash_tag(tag: &str) -> u64 {
    // FNV-1a, then mixed; tags are short ASCII labels.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    mix64(h)
}

/// Identifies one random stream.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub replication_index: u64,
    pub role_tag: String,
    /// Sub-indices (individual, decision time, ...) appended by [`SeedSpec::child`].
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub path: Vec<u64>,
}

impl SeedSpec {
    pub fn new(master_seed: u64, replication_index: u64, role_tag: impl Into<String>) -> Self {
        Self {
            master_seed,
            replication_index,
            role_tag: role_tag.into(),
            path: Vec::new(),
        }
    }

    pub fn child(&self, index: u64) -> Self {
        let mut next = self.clone();
        next.path.push(index);
        next
    }

    pub fn with_role(&self, role_tag: impl Into<String>) -> Self {
        Self::new(self.master_seed, self.replication_index, role_tag)
    }

    fn key(&self) -> u64 {
        let mut h = absorb(mix64(self.master_seed), self.replication_index);
        h = absorb(h, hash_tag(&self.role_tag));
        for (depth, idx) in self.path.iter().enumerate() {
            h = absorb(h, (*idx).rotate_left(17 * (depth as u32 + 1)));
        }
        h
    }
}

/// A value-like random stream. Move it between threads freely, never share it.
#[derive(Debug, Clone)]
pub struct Stream(Xoshiro256PlusPlus);

pub fn derive_stream(spec: &SeedSpec) -> Stream {
    Stream(Xoshiro256PlusPlus::seed_from_u64(spec.key()))
}

/// Hot-path derivation that avoids building a [`SeedSpec`] per draw site.
pub(crate) fn derive_indexed(base_key: u64, a: u64, b: u64) -> Stream {
    let h = absorb(absorb(base_key, a.rotate_left(17)), b.rotate_left(34));
    Stream(Xoshiro256PlusPlus::seed_from_u64(h))
}

pub(crate) fn spec_key(spec: &SeedSpec) -> u64 {
    spec.key()
}

impl RngCore for Stream {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}

impl Stream {
    /// Uniform on [0, 1).
    #[inline]
    pub fn uniform01(&mut self) -> f64 {
        self.0.random::<f64>()
    }

    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.0)
    }

    #[inline]
    pub fn bernoulli(&mut self, p: f64) -> bool {
        // p = 1 must always succeed and p = 0 never.
        self.uniform01() < p
    }

    pub fn poisson(&mut self, lambda: f64) -> u64 {
        if lambda <= 0.0 {
            return 0;
        }
        // rand_distr rejects lambda above ~1.8e19; rates here are far below.
        let dist = Poisson::new(lambda).expect("finite positive rate");
        dist.sample(&mut self.0) as u64
    }

    pub fn below(&mut self, upper: usize) -> usize {
        self.0.random_range(0..upper)
    }
}

/// Distributions available through [`draw`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum DistSpec {
    Normal { mean: f64, sd: f64 },
    Bernoulli { p: f64 },
    Poisson { lambda: f64 },
    Uniform { low: f64, high: f64 },
}

impl DistSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            DistSpec::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && sd >= 0.0,
            DistSpec::Bernoulli { p } => (0.0..=1.0).contains(&p),
            DistSpec::Poisson { lambda } => lambda.is_finite() && lambda >= 0.0,
            DistSpec::Uniform { low, high } => low.is_finite() && high.is_finite() && low <= high,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("distribution parameters out of range: {self:?}")))
        }
    }
}

pub fn draw(stream: &mut Stream, dist: &DistSpec) -> Result<f64> {
    dist.validate()?;
    Ok(match *dist {
        DistSpec::Normal { mean, sd } => mean + sd * stream.standard_normal(),
        DistSpec::Bernoulli { p } => f64::from(u8::from(stream.bernoulli(p))),
        DistSpec::Poisson { lambda } => stream.poisson(lambda) as f64,
        DistSpec::Uniform { low, high } => low + (high - low) * stream.uniform01(),
    })
}

/// A stationary Gaussian AR(1) path with `Corr(v[t], v[s]) = rho^|t-s|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ar1NoisePath {
    pub values: Vec<f64>,
    pub rho: f64,
    pub marginal_sd: f64,
}

pub fn check_ar1(rho: f64, marginal_sd: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::config(format!("AR(1) coefficient must lie in [0, 1), got {rho}")));
    }
    if !(marginal_sd.is_finite() && marginal_sd > 0.0) {
        return Err(Error::config(format!("marginal sd must be positive, got {marginal_sd}")));
    }
    Ok(())
}

/// One step of the stationary recursion, given the previous value (`None` at the start).
#[inline]
pub fn ar1_step(prev: Option<f64>, rho: f64, marginal_sd: f64, innovation: f64) -> f64 {
    match prev {
        None => marginal_sd * innovation,
        Some(p) => rho * p + (1.0 - rho * rho).sqrt() * marginal_sd * innovation,
    }
}

pub fn sample_ar1_noise(
    stream: &mut Stream,
    len: usize,
    rho: f64,
    marginal_sd: f64,
) -> Result<Ar1NoisePath> {
    check_ar1(rho, marginal_sd)?;
    if len == 0 {
        return Err(Error::config("AR(1) path needs at least one entry"));
    }
    let mut values = Vec::with_capacity(len);
    let mut prev = None;
    for _ in 0..len {
        let v = ar1_step(prev, rho, marginal_sd, stream.standard_normal());
        values.push(v);
        prev = Some(v);
    }
    Ok(Ar1NoisePath {
        values,
        rho,
        marginal_sd,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let mut sab = 0.0;
        let mut saa = 0.0;
        let mut sbb = 0.0;
        for (x, y) in a.iter().zip(b) {
            sab += (x - ma) * (y - mb);
            saa += (x - ma) * (x - ma);
            sbb += (y - mb) * (y - mb);
        }
        sab / (saa * sbb).sqrt()
    }

    fn uniforms(spec: &SeedSpec, count: usize) -> Vec<f64> {
        let mut s = derive_stream(spec);
        (0..count).map(|_| s.uniform01()).collect()
    }

    #[test]
    fn same_spec_same_draws() {
        let spec = SeedSpec::new(42, 0, "env");
        assert_eq!(uniforms(&spec, 100), uniforms(&spec, 100));
    }

    #[test]
    fn replication_streams_uncorrelated() {
        let a = uniforms(&SeedSpec::new(42, 0, "env"), 1_000_000);
        let b = uniforms(&SeedSpec::new(42, 1, "env"), 1_000_000);
        assert!(corr(&a, &b).abs() < 0.01);
    }

    #[test]
    fn role_streams_uncorrelated() {
        let a = uniforms(&SeedSpec::new(42, 0, "env"), 1_000_000);
        let b = uniforms(&SeedSpec::new(42, 0, "policy"), 1_000_000);
        assert!(corr(&a, &b).abs() < 0.01);
        let c = uniforms(&SeedSpec::new(42, 0, "env").child(3), 1_000_000);
        assert!(corr(&a, &c).abs() < 0.01);
    }

    #[test]
    fn degenerate_bernoulli() {
        let mut s = derive_stream(&SeedSpec::new(1, 0, "x"));
        for _ in 0..1000 {
            assert_eq!(draw(&mut s, &DistSpec::Bernoulli { p: 0.0 }).unwrap(), 0.0);
            assert_eq!(draw(&mut s, &DistSpec::Bernoulli { p: 1.0 }).unwrap(), 1.0);
        }
    }

    #[test]
    fn normal_moments() {
        let mut s = derive_stream(&SeedSpec::new(7, 0, "moments"));
        let d = DistSpec::Normal { mean: 0.0, sd: 1.0 };
        let xs: Vec<f64> = (0..1_000_000).map(|_| draw(&mut s, &d).unwrap()).collect();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt();
        assert!(m.abs() < 0.005, "mean {m}");
        assert!((sd - 1.0).abs() < 0.005, "sd {sd}");
    }

    #[test]
    fn poisson_mean() {
        let mut s = derive_stream(&SeedSpec::new(7, 0, "poisson"));
        let d = DistSpec::Poisson { lambda: 3.0 };
        let m = (0..1_000_000).map(|_| draw(&mut s, &d).unwrap()).sum::<f64>() / 1e6;
        assert!((m - 3.0).abs() < 0.01, "mean {m}");
    }

    #[test]
    fn rejects_bad_parameters() {
        let mut s = derive_stream(&SeedSpec::new(7, 0, "bad"));
        for d in [
            DistSpec::Normal { mean: 0.0, sd: -1.0 },
            DistSpec::Bernoulli { p: 1.5 },
            DistSpec::Poisson { lambda: -0.1 },
            DistSpec::Uniform { low: 1.0, high: 0.0 },
        ] {
            assert!(matches!(draw(&mut s, &d), Err(Error::Config(_))));
        }
        assert!(sample_ar1_noise(&mut s, 5, 1.0, 1.0).is_err());
        assert!(sample_ar1_noise(&mut s, 0, 0.5, 1.0).is_err());
    }

    #[test]
    fn ar1_single_entry_and_zero_rho() {
        let mut a = derive_stream(&SeedSpec::new(3, 0, "ar"));
        let mut b = a.clone();
        let p = sample_ar1_noise(&mut a, 1, 0.7, 2.0).unwrap();
        assert_eq!(p.values, vec![2.0 * b.standard_normal()]);

        // rho = 0 reduces to iid scaled normals.
        let mut a = derive_stream(&SeedSpec::new(3, 1, "ar"));
        let mut b = a.clone();
        let p = sample_ar1_noise(&mut a, 5, 0.0, 1.5).unwrap();
        let iid: Vec<f64> = (0..5).map(|_| 1.5 * b.standard_normal()).collect();
        for (x, y) in p.values.iter().zip(&iid) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn ar1_lag_correlations() {
        let rho = 0.5f64.sqrt();
        let mut s = derive_stream(&SeedSpec::new(11, 0, "ar1"));
        let p = sample_ar1_noise(&mut s, 1_000_002, rho, 1.0).unwrap();
        let v = &p.values;
        let lag1 = corr(&v[..v.len() - 1], &v[1..]);
        let lag2 = corr(&v[..v.len() - 2], &v[2..]);
        assert!((lag1 - rho).abs() < 0.005, "lag1 {lag1}");
        assert!((lag2 - 0.5).abs() < 0.005, "lag2 {lag2}");
    }

    #[test]
    fn ar1_stationary_variance() {
        // Variance at t = 0, 5, 29 across independent paths, within 3 standard errors.
        let reps = 40_000;
        let sd = 1.7;
        let mut acc = [0.0f64; 3];
        for r in 0..reps {
            let mut s = derive_stream(&SeedSpec::new(5, r, "ar1var"));
            let p = sample_ar1_noise(&mut s, 30, 0.8, sd).unwrap();
            for (k, t) in [0usize, 5, 29].iter().enumerate() {
                acc[k] += p.values[*t].powi(2);
            }
        }
        let target = sd * sd;
        let se = target * (2.0 / reps as f64).sqrt();
        for a in acc {
            let v = a / reps as f64;
            assert!((v - target).abs() < 3.0 * se, "variance {v}");
        }
    }
}
