//! Zero-inflated Poisson brushing simulator.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_stream, SeedSpec, Stream};

/// Length of the environment feature vector `g(x)`.
pub const ENV_FEATURES: usize = 7;
/// Length of the algorithm feature vector `phi(x)`.
pub const ALG_FEATURES: usize = 5;
/// Decision points per exponential-average window (one week).
pub const WINDOW: usize = 14;

pub type Weights = [f64; ENV_FEATURES];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndividualParams {
    pub w_b: Weights,
    pub w_p: Weights,
    #[serde(rename = "delta_B")]
    pub delta_b: Weights,
    #[serde(rename = "delta_N")]
    pub delta_n: Weights,
    pub p_app: f64,
}

impl IndividualParams {
    pub fn validate(&self) -> Result<()> {
        let vectors = [("w_b", &self.w_b), ("w_p", &self.w_p), ("delta_B", &self.delta_b), ("delta_N", &self.delta_n)];
        for (name, v) in vectors {
            if let Some(k) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::config(format!("{name}[{k}] is not finite")));
            }
        }
        if !(0.0..=1.0).contains(&self.p_app) {
            return Err(Error::config(format!("p_app must lie in [0, 1], got {}", self.p_app)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostParams {
    pub xi1: f64,
    pub xi2: f64,
    pub b: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams {
            xi1: 100.0,
            xi2: 100.0,
            b: 111.0,
            a1: 0.5,
            a2: 0.8,
        }
    }
}

/// Normal prior for one weight vector: the intercept has its own mean and
/// scale, the remaining six coordinates are centred at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VectorPrior {
    pub intercept_mean: f64,
    pub intercept_sd: f64,
    pub slope_sd: f64,
}

impl VectorPrior {
    fn sample(&self, stream: &mut Stream) -> Weights {
        let mut w = [0.0; ENV_FEATURES];
        w[0] = self.intercept_mean + self.intercept_sd * stream.standard_normal();
        for x in &mut w[1..] {
            *x = self.slope_sd * stream.standard_normal();
        }
        w
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !self.intercept_mean.is_finite()
            || !(self.intercept_sd >= 0.0 && self.intercept_sd.is_finite())
            || !(self.slope_sd >= 0.0 && self.slope_sd.is_finite())
        {
            return Err(Error::config(format!("prior for {name} needs a finite mean and nonnegative scales")));
        }
        Ok(())
    }
}

/// Generator for a synthetic pool of individual models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticPrior {
    pub pool_size: usize,
    pub seed: u64,
    pub w_b: VectorPrior,
    pub w_p: VectorPrior,
    #[serde(rename = "delta_B")]
    pub delta_b: VectorPrior,
    #[serde(rename = "delta_N")]
    pub delta_n: VectorPrior,
    /// `p_app ~ U[p_app_low, p_app_high]`.
    pub p_app_low: f64,
    pub p_app_high: f64,
}

impl Default for SyntheticPrior {
    fn default() -> Self {
        SyntheticPrior {
            pool_size: 9,
            seed: 20_230_301,
            // Brushes on roughly 73% of occasions at baseline.
            w_b: VectorPrior {
                intercept_mean: -1.0,
                intercept_sd: 0.5,
                slope_sd: 0.5,
            },
            // Typical brushing session of about 130 seconds.
            w_p: VectorPrior {
                intercept_mean: 130f64.ln(),
                intercept_sd: 0.2,
                slope_sd: 0.1,
            },
            delta_b: VectorPrior {
                intercept_mean: 0.3,
                intercept_sd: 0.1,
                slope_sd: 0.1,
            },
            delta_n: VectorPrior {
                intercept_mean: 0.1,
                intercept_sd: 0.05,
                slope_sd: 0.05,
            },
            p_app_low: 0.0,
            p_app_high: 1.0,
        }
    }
}

impl SyntheticPrior {
    pub fn validate(&self) -> Result<()> {
        if self.pool_size == 0 {
            return Err(Error::config("synthetic pool_size must be at least 1"));
        }
        self.w_b.validate("w_b")?;
        self.w_p.validate("w_p")?;
        self.delta_b.validate("delta_B")?;
        self.delta_n.validate("delta_N")?;
        if !(0.0 <= self.p_app_low && self.p_app_low <= self.p_app_high && self.p_app_high <= 1.0) {
            return Err(Error::config("p_app range must satisfy 0 <= low <= high <= 1"));
        }
        Ok(())
    }

    /// Deterministic pool of `pool_size` individual models.
    pub fn generate(&self) -> Result<Vec<IndividualParams>> {
        self.validate()?;
        let base = SeedSpec::new(self.seed, 0, "population-prior");
        Ok((0..self.pool_size as u64)
            .map(|k| {
                let mut s = derive_stream(&base.child(k));
                let w_b = self.w_b.sample(&mut s);
                let w_p = self.w_p.sample(&mut s);
                let delta_b = self.delta_b.sample(&mut s);
                let delta_n = self.delta_n.sample(&mut s);
                let p_app = self.p_app_low + (self.p_app_high - self.p_app_low) * s.uniform01();
                IndividualParams {
                    w_b,
                    w_p,
                    delta_b,
                    delta_n,
                    p_app,
                }
            })
            .collect())
    }
}

/// Where the pool of individual models comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum PopulationSource {
    Inline { individuals: Vec<IndividualParams> },
    File { path: PathBuf },
    Synthetic(SyntheticPrior),
}

impl Default for PopulationSource {
    fn default() -> Self {
        PopulationSource::Synthetic(SyntheticPrior::default())
    }
}

impl PopulationSource {
    /// The pool the individuals are drawn from.
    pub fn pool(&self) -> Result<Vec<IndividualParams>> {
        let pool = match self {
            PopulationSource::Inline { individuals } => individuals.clone(),
            PopulationSource::File { path } => load_population_file(path)?,
            PopulationSource::Synthetic(prior) => prior.generate()?,
        };
        if pool.is_empty() {
            return Err(Error::config("population pool is empty"));
        }
        for (k, p) in pool.iter().enumerate() {
            p.validate().map_err(|e| Error::config(format!("individual {k}: {e}")))?;
        }
        Ok(pool)
    }
}

/// Read a JSON array of individual models.
pub fn load_population_file(path: &Path) -> Result<Vec<IndividualParams>> {
    let text = std::fs::read_to_string(path)?;
    parse_population(&text, &path.display().to_string())
}

pub(crate) fn parse_population(text: &str, origin: &str) -> Result<Vec<IndividualParams>> {
    serde_json::from_str(text).map_err(|e| {
        Error::parse(
            format!("{origin}:{}:{}", e.line(), e.column()),
            e.to_string(),
        )
    })
}

/// Draw `n` individual models with replacement from the source's pool.
pub fn sample_population(source: &PopulationSource, n: usize, stream: &mut Stream) -> Result<Vec<IndividualParams>> {
    if n == 0 {
        return Err(Error::config("population size must be at least 1"));
    }
    let pool = source.pool()?;
    Ok((0..n).map(|_| pool[stream.below(pool.len())].clone()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OralyticsEnv {
    pub population: PopulationSource,
    /// Discount of the weekly exponential averages.
    pub gamma: f64,
    pub cost: CostParams,
    pub shrink_factor: f64,
    pub shrink_check_interval: usize,
    pub decisions_per_day: usize,
    /// Upper truncation of brushing quality, in seconds.
    pub quality_cap: f64,
}

impl Default for OralyticsEnv {
    fn default() -> Self {
        OralyticsEnv {
            population: PopulationSource::default(),
            gamma: 13.0 / 14.0,
            cost: CostParams::default(),
            shrink_factor: 0.5,
            shrink_check_interval: WINDOW,
            decisions_per_day: 2,
            quality_cap: 180.0,
        }
    }
}

impl OralyticsEnv {
    pub fn validate(&self, horizon: usize) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::config(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if !(self.shrink_factor > 0.0 && self.shrink_factor <= 1.0) {
            return Err(Error::config(format!(
                "shrink_factor must lie in (0, 1], got {}",
                self.shrink_factor
            )));
        }
        if self.shrink_check_interval == 0 {
            return Err(Error::config("shrink_check_interval must be at least 1"));
        }
        if self.decisions_per_day == 0 {
            return Err(Error::config("decisions_per_day must be at least 1"));
        }
        if !(self.quality_cap > 0.0 && self.quality_cap.is_finite()) {
            return Err(Error::config("quality_cap must be positive"));
        }
        let c = &self.cost;
        if !(c.a1 < c.a2) {
            return Err(Error::config(format!("cost thresholds need a1 < a2, got {} and {}", c.a1, c.a2)));
        }
        if !(c.xi1 >= 0.0 && c.xi2 >= 0.0 && c.b >= 0.0) {
            return Err(Error::config("cost weights and brushing threshold must be nonnegative"));
        }
        if horizon == 0 {
            return Err(Error::config("horizon must be at least 1"));
        }
        match &self.population {
            PopulationSource::Synthetic(p) => p.validate(),
            PopulationSource::Inline { individuals } => {
                if individuals.is_empty() {
                    return Err(Error::config("population pool is empty"));
                }
                individuals.iter().try_for_each(IndividualParams::validate)
            }
            PopulationSource::File { .. } => Ok(()),
        }
    }

    /// Same environment with the pool materialized inline.
    pub fn resolved(&self) -> Result<Self> {
        Ok(OralyticsEnv {
            population: PopulationSource::Inline {
                individuals: self.population.pool()?,
            },
            ..self.clone()
        })
    }

    pub(crate) fn init_individual(&self, horizon: usize, recruit: &mut Stream) -> Result<OralyticsState> {
        let params = match &self.population {
            PopulationSource::Inline { individuals } if !individuals.is_empty() => {
                individuals[recruit.below(individuals.len())].clone()
            }
            other => {
                let pool = other.pool()?;
                pool[recruit.below(pool.len())].clone()
            }
        };
        Ok(OralyticsState {
            params,
            days: horizon.div_ceil(self.decisions_per_day),
            bar_b: ExpWindow::new(self.gamma),
            bar_a: ExpWindow::new(self.gamma),
            responsivity: Responsivity::default(),
            prior_day_app: false,
        })
    }
}

/// Weights `c_gamma * gamma^(j-1)`, `j = 1..=WINDOW`; they sum to one.
pub fn exp_average_weights(gamma: f64) -> [f64; WINDOW] {
    let c = (1.0 - gamma) / (1.0 - gamma.powi(WINDOW as i32));
    let mut w = [0.0; WINDOW];
    let mut g = 1.0;
    for x in &mut w {
        *x = c * g;
        g *= gamma;
    }
    w
}

/// Discounted average over the last 14 values, most recent weighted highest.
/// Missing history counts as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpWindow {
    weights: [f64; WINDOW],
    ring: [f64; WINDOW],
    /// Slot of the most recent value.
    head: usize,
}

impl ExpWindow {
    pub fn new(gamma: f64) -> Self {
        ExpWindow {
            weights: exp_average_weights(gamma),
            ring: [0.0; WINDOW],
            head: WINDOW - 1,
        }
    }

    pub fn push(&mut self, value: f64) {
        self.head = (self.head + 1) % WINDOW;
        self.ring[self.head] = value;
    }

    pub fn value(&self) -> f64 {
        (0..WINDOW)
            .map(|j| self.weights[j] * self.ring[(self.head + WINDOW - j) % WINDOW])
            .sum()
    }
}

/// Whether the individual counts as over-prompted.
pub fn burden_criterion(bar_b: f64, bar_a: f64, cost: &CostParams) -> bool {
    (bar_b > cost.b && bar_a > cost.a1) || bar_a > cost.a2
}

pub fn oralytics_cost(bar_b: f64, bar_a: f64, action: bool, cost: &CostParams) -> f64 {
    if !action {
        return 0.0;
    }
    let mut c = 0.0;
    if bar_b > cost.b && bar_a > cost.a1 {
        c += cost.xi1;
    }
    if bar_a > cost.a2 {
        c += cost.xi2;
    }
    c
}

/// Weekly responsivity shrinkage.
///
/// Until the criterion first fires it is checked at every decision point;
/// afterwards only every `interval` points. A hit deepens the shrinkage by one
/// power of `E`, a miss restores the original effect size.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Responsivity {
    pub exponent: u32,
    pub next_check: Option<usize>,
}

impl Responsivity {
    pub fn step(&mut self, t: usize, criterion: bool, interval: usize) {
        match self.next_check {
            None => {
                if criterion {
                    self.exponent = 1;
                    self.next_check = Some(t + interval);
                }
            }
            Some(check) if t == check => {
                if criterion {
                    self.exponent += 1;
                } else {
                    self.exponent = 0;
                }
                self.next_check = Some(t + interval);
            }
            Some(_) => {}
        }
    }

    pub fn shrink(&self, factor: f64) -> f64 {
        factor.powi(self.exponent as i32)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One zero-inflated Poisson draw of brushing quality (uncapped).
pub fn oralytics_outcome(params: &IndividualParams, g: &[f64; ENV_FEATURES], action: bool, shrink: f64, stream: &mut Stream) -> u64 {
    let (mut logit, mut log_rate) = (dot(g, &params.w_b), dot(g, &params.w_p));
    if action {
        logit -= (shrink * dot(&params.delta_b, g)).max(0.0);
        log_rate += (shrink * dot(&params.delta_n, g)).max(0.0);
    }
    let z = stream.bernoulli(1.0 - sigmoid(logit));
    let s = stream.poisson(log_rate.exp());
    if z {
        s
    } else {
        0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OralyticsState {
    pub params: IndividualParams,
    pub days: usize,
    pub bar_b: ExpWindow,
    pub bar_a: ExpWindow,
    pub responsivity: Responsivity,
    pub prior_day_app: bool,
}

impl OralyticsState {
    /// `g(x)` at decision time `t` (1-based).
    pub fn env_features(&self, env: &OralyticsEnv, t: usize) -> [f64; ENV_FEATURES] {
        let per_day = env.decisions_per_day;
        let day = (t - 1) / per_day + 1;
        let tod = ((t - 1) % per_day) as f64 / (per_day.max(2) - 1) as f64;
        let b_norm = 2.0 * self.bar_b.value() / env.quality_cap - 1.0;
        let a_norm = 2.0 * self.bar_a.value() - 1.0;
        let weekend = matches!((day - 1) % 7, 5 | 6);
        let day_norm = if self.days > 1 {
            2.0 * (day - 1) as f64 / (self.days - 1) as f64 - 1.0
        } else {
            -1.0
        };
        [
            1.0,
            tod,
            b_norm,
            a_norm,
            f64::from(u8::from(self.prior_day_app)),
            f64::from(u8::from(weekend)),
            day_norm,
        ]
    }

    pub fn algorithm_features(&self, env: &OralyticsEnv, t: usize, phi: &mut [f64]) {
        let g = self.env_features(env, t);
        phi.copy_from_slice(&g[..ALG_FEATURES]);
    }

    pub fn step(&mut self, env: &OralyticsEnv, t: usize, action: bool, stream: &mut Stream) -> (f64, f64) {
        let g = self.env_features(env, t);
        let (bar_b, bar_a) = (self.bar_b.value(), self.bar_a.value());
        let shrink = self.responsivity.shrink(env.shrink_factor);
        let quality = (oralytics_outcome(&self.params, &g, action, shrink, stream) as f64).min(env.quality_cap);
        let reward = quality - oralytics_cost(bar_b, bar_a, action, &env.cost);

        self.responsivity
            .step(t, burden_criterion(bar_b, bar_a, &env.cost), env.shrink_check_interval);
        self.bar_b.push(quality);
        self.bar_a.push(f64::from(u8::from(action)));
        if t % env.decisions_per_day == 0 {
            self.prior_day_app = stream.bernoulli(self.params.p_app);
        }
        (quality, reward)
    }
}
