//! Continuous-time Monte Carlo for ASEP on ℤ.
//!
//! Dynamics are uniformized: a global clock of rate `n` (the particle
//! count), a uniformly chosen particle, a right attempt with probability `p`
//! and a left attempt otherwise; attempts onto occupied sites are dropped.
//! Every trial draws from its own ChaCha8 stream `(seed, trial)`, so
//! results do not depend on scheduling.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{AsepError, Result};
use crate::kernel::SiteProfile;
use crate::oracle::trial_rng;
use crate::quadrature::InitialData;
use crate::scalar::{rational_to_f64, HopRates, SiteSet};

/// Doublings of `L` tried when a sample has fewer than `l_max` particles.
pub const MAX_HORIZON_RETRIES: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub rates: HopRates,
    pub t: f64,
    pub initial: InitialData,
    /// Sites `1..=L` are sampled; `None` picks the default.
    pub horizon: Option<usize>,
    pub trials: u64,
    pub seed: u64,
    pub l_max: usize,
    pub x_min: i64,
    pub x_max: i64,
}

impl SimConfig {
    pub fn new(
        rates: HopRates,
        t: f64,
        initial: InitialData,
        l_max: usize,
        x_min: i64,
        x_max: i64,
    ) -> Self {
        SimConfig {
            rates,
            t,
            initial,
            horizon: None,
            trials: 10_000,
            seed: 0,
            l_max,
            x_min,
            x_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t >= 0.0 && self.t.is_finite()) {
            return Err(AsepError::InvalidParameter(format!(
                "time must be finite and >= 0, got {}",
                self.t
            )));
        }
        if self.trials == 0 {
            return Err(AsepError::InvalidParameter("trials must be >= 1".into()));
        }
        if self.l_max == 0 {
            return Err(AsepError::InvalidParameter("l_max must be >= 1".into()));
        }
        if self.x_min > self.x_max {
            return Err(AsepError::InvalidParameter(format!(
                "empty x window {}..={}",
                self.x_min, self.x_max
            )));
        }
        if self.horizon == Some(0) {
            return Err(AsepError::InvalidParameter("horizon must be >= 1".into()));
        }
        let capacity = match &self.initial {
            InitialData::Periodic(_) => None,
            InitialData::General(rho) => Some(
                rho.values()
                    .iter()
                    .filter(|v| rational_to_f64(v) > 0.0)
                    .count(),
            ),
            InitialData::Deterministic(y) => Some(y.len()),
        };
        if let Some(n) = capacity {
            if n < self.l_max {
                return Err(AsepError::Resource(format!(
                    "initial data can hold at most {n} particles, l_max = {}",
                    self.l_max
                )));
            }
        }
        Ok(())
    }

    /// Particles needed in expectation: `l_max + 10 + ⌈3t⌉`.
    pub fn required_particles(&self) -> f64 {
        (self.l_max + 10) as f64 + (3.0 * self.t).ceil()
    }

    pub fn expected_particles(&self, horizon: usize) -> f64 {
        (1..=horizon as i64)
            .map(|n| occupation_probability(&self.initial, n))
            .sum()
    }

    /// Explicit horizon, or for periodic data
    /// `max(x_max, 0) + l_max·m + ⌈5t⌉ + 20` grown until enough particles are
    /// expected. General and deterministic data use their full support.
    pub fn effective_horizon(&self) -> usize {
        if let Some(l) = self.horizon {
            return l;
        }
        match &self.initial {
            InitialData::Periodic(rho) => {
                let m = rho.period();
                let mut l = self.x_max.max(0) as usize
                    + self.l_max * m
                    + (5.0 * self.t).ceil() as usize
                    + 20;
                let need = self.required_particles();
                while self.expected_particles(l) < need {
                    l += m;
                }
                l
            }
            InitialData::General(rho) => rho.horizon(),
            InitialData::Deterministic(y) => y.max().unwrap_or(1) as usize,
        }
    }

    /// Set when the horizon leaves fewer particles than
    /// [`SimConfig::required_particles`] in expectation.
    pub fn horizon_warning(&self) -> Option<String> {
        if !matches!(self.initial, InitialData::Periodic(_)) {
            return None;
        }
        let l = self.effective_horizon();
        let expected = self.expected_particles(l);
        let need = self.required_particles();
        (expected < need).then(|| {
            format!("horizon L = {l} holds {expected:.1} particles in expectation, below the {need} recommended")
        })
    }
}

fn occupation_probability(initial: &InitialData, site: i64) -> f64 {
    match initial {
        InitialData::Periodic(rho) => rational_to_f64(&rho.rho(site)),
        InitialData::General(rho) => rational_to_f64(&rho.rho(site)),
        InitialData::Deterministic(y) => {
            if y.contains(site) {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Includes each site of `[1, L]` independently with its occupation probability.
pub fn sample_initial<R: Rng>(initial: &InitialData, horizon: usize, rng: &mut R) -> SiteSet {
    let sites = match initial {
        InitialData::Deterministic(y) => y.iter().filter(|&s| s <= horizon as i64).collect(),
        _ => (1..=horizon as i64)
            .filter(|&n| {
                let prob = occupation_probability(initial, n);
                prob >= 1.0 || (prob > 0.0 && rng.gen_bool(prob))
            })
            .collect(),
    };
    SiteSet::new(sites).expect("sampled sites are increasing and positive")
}

/// Evolves a strictly increasing configuration for time `t`.
pub fn evolve<R: Rng>(initial: &[i64], t: f64, rates: &HopRates, rng: &mut R) -> Vec<i64> {
    let mut x = initial.to_vec();
    let n = x.len();
    if n == 0 || t <= 0.0 {
        return x;
    }
    let clock = Exp::new(n as f64).expect("positive rate");
    let p = rates.p_f64();
    let mut time = 0.0;
    loop {
        time += clock.sample(rng);
        if time > t {
            return x;
        }
        let i = rng.gen_range(0..n);
        if rng.gen_bool(p) {
            let target = x[i] + 1;
            if i + 1 == n || x[i + 1] != target {
                x[i] = target;
            }
        } else {
            let target = x[i] - 1;
            if i == 0 || x[i - 1] != target {
                x[i] = target;
            }
        }
    }
}

/// Final configuration of one trial, at the given horizon.
pub fn run_trial(config: &SimConfig, horizon: usize, trial: u64) -> Result<Vec<i64>> {
    let mut rng = trial_rng(config.seed, trial as usize);
    let mut l = horizon;
    for _ in 0..=MAX_HORIZON_RETRIES {
        let sample = sample_initial(&config.initial, l, &mut rng);
        if sample.len() >= config.l_max {
            return Ok(evolve(sample.sites(), config.t, &config.rates, &mut rng));
        }
        l = l.saturating_mul(2);
    }
    Err(AsepError::Resource(format!(
        "trial {trial}: fewer than {} particles after {MAX_HORIZON_RETRIES} horizon doublings",
        config.l_max
    )))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalPoint {
    pub l: usize,
    pub x: i64,
    pub hits: u64,
    pub trials: u64,
    pub p_hat: f64,
    pub stderr: f64,
}

/// Estimates of `P(x_l(t) <= x)`, ordered by `l` then `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalCdf {
    pub trials: u64,
    pub horizon: usize,
    pub points: Vec<EmpiricalPoint>,
}

impl EmpiricalCdf {
    pub fn get(&self, l: usize, x: i64) -> Option<&EmpiricalPoint> {
        self.points.iter().find(|pt| pt.l == l && pt.x == x)
    }

    /// CSV with columns `l,x,hits,trials,p_hat,stderr`.
    pub fn to_csv(&self) -> Result<String> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        for pt in &self.points {
            writer
                .serialize(pt)
                .map_err(|e| AsepError::Resource(e.to_string()))?;
        }
        let bytes = writer
            .into_inner()
            .map_err(|e| AsepError::Resource(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

pub fn estimate_cdf(config: &SimConfig) -> Result<EmpiricalCdf> {
    estimate_at(config, config.effective_horizon())
}

fn estimate_at(config: &SimConfig, horizon: usize) -> Result<EmpiricalCdf> {
    config.validate()?;
    let width = (config.x_max - config.x_min + 1) as usize;
    let l_max = config.l_max;
    let empty = || vec![0u64; l_max * width];
    // histogram of positions, with everything left of the window in bin 0
    let hist = (0..config.trials)
        .into_par_iter()
        .try_fold(empty, |mut acc, trial| {
            let x = run_trial(config, horizon, trial)?;
            for (l, &pos) in x.iter().take(l_max).enumerate() {
                if pos <= config.x_max {
                    acc[l * width + (pos - config.x_min).max(0) as usize] += 1;
                }
            }
            Ok::<_, AsepError>(acc)
        })
        .try_reduce(empty, |mut a, b| {
            a.iter_mut().zip(b).for_each(|(u, v)| *u += v);
            Ok(a)
        })?;
    let n = config.trials;
    let mut points = Vec::with_capacity(l_max * width);
    for l in 0..l_max {
        let mut hits = 0;
        for j in 0..width {
            hits += hist[l * width + j];
            let p_hat = hits as f64 / n as f64;
            points.push(EmpiricalPoint {
                l: l + 1,
                x: config.x_min + j as i64,
                hits,
                trials: n,
                p_hat,
                stderr: (p_hat * (1.0 - p_hat) / n as f64).sqrt(),
            });
        }
    }
    Ok(EmpiricalCdf {
        trials: n,
        horizon,
        points,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationReport {
    pub horizon: usize,
    pub doubled: usize,
    pub max_abs_diff: f64,
    pub worst_l: usize,
    pub worst_x: i64,
    /// Set when some `|Δp̂|` exceeds three combined standard errors.
    pub flagged: bool,
}

/// Reruns the estimate at `2L` with the same seed and compares.
pub fn truncation_check(config: &SimConfig) -> Result<TruncationReport> {
    let horizon = config.effective_horizon();
    let base = estimate_at(config, horizon)?;
    let doubled = estimate_at(config, 2 * horizon)?;
    let mut report = TruncationReport {
        horizon,
        doubled: 2 * horizon,
        max_abs_diff: 0.0,
        worst_l: 1,
        worst_x: config.x_min,
        flagged: false,
    };
    for (a, b) in base.points.iter().zip(&doubled.points) {
        let diff = (a.p_hat - b.p_hat).abs();
        if diff > report.max_abs_diff {
            report.max_abs_diff = diff;
            report.worst_l = a.l;
            report.worst_x = a.x;
        }
        if diff > 3.0 * (a.stderr.powi(2) + b.stderr.powi(2)).sqrt() {
            report.flagged = true;
        }
    }
    Ok(report)
}
