//! Historical well data and its error covariance.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::evaluate::{Phase, RATE_EPS};
use crate::geomodel::{GeoModel, WellKind};
use crate::simulator::{simulate, SimConfig, WellRates};
use crate::{Error, Result};

/// Relative standard deviation of the measurement error.
pub const DATA_SIGMA_FRAC: f64 = 0.05;

const TIME_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObsLabel {
    pub well: String,
    pub phase: Phase,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Observations {
    pub labels: Vec<ObsLabel>,
    /// m3/day.
    pub d_obs: Vec<f64>,
    /// Diagonal of C_D.
    pub variance: Vec<f64>,
    pub history_horizon: f64,
}

impl Observations {
    pub fn len(&self) -> usize {
        self.d_obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d_obs.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.len() != self.d_obs.len() || self.variance.len() != self.d_obs.len() {
            return Err(Error::shape("observation vectors differ in length"));
        }
        if self.variance.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::invalid("observation variances must be positive"));
        }
        Ok(())
    }

    /// `(g - d)^T C_D^-1 (g - d)` against `d` (defaults to `d_obs`).
    pub fn misfit(&self, g: &[f64], d: Option<&[f64]>) -> f64 {
        let d = d.unwrap_or(&self.d_obs);
        g.iter().zip(d).zip(&self.variance).map(|((g, d), v)| (g - d) * (g - d) / v).sum()
    }
}

/// Labels for `rates` over report times up to `horizon`: producers sorted
/// by id with oil then water, then injectors sorted by id. Times ascend
/// within each block.
pub fn observation_labels(rates: &WellRates, horizon: f64) -> Result<Vec<ObsLabel>> {
    let times: Vec<f64> = rates.times.iter().copied().filter(|&t| t <= horizon + TIME_TOL).collect();
    if times.is_empty() {
        return Err(Error::invalid("no report time falls inside the history horizon"));
    }
    let mut prod: Vec<&str> = Vec::new();
    let mut inj: Vec<&str> = Vec::new();
    for w in &rates.wells {
        match w.kind {
            WellKind::Producer => prod.push(&w.id),
            WellKind::Injector => inj.push(&w.id),
        }
    }
    prod.sort_unstable();
    inj.sort_unstable();
    let mut labels = Vec::new();
    let mut push = |id: &str, phase| {
        for &time in &times {
            labels.push(ObsLabel { well: id.to_string(), phase, time });
        }
    };
    for id in prod {
        push(id, Phase::Oil);
        push(id, Phase::Water);
    }
    for id in inj {
        push(id, Phase::Water);
    }
    Ok(labels)
}

/// Values of `rates` at `labels`.
pub fn data_vector(rates: &WellRates, labels: &[ObsLabel]) -> Result<Vec<f64>> {
    labels
        .iter()
        .map(|l| {
            let w = rates.well(&l.well).ok_or_else(|| Error::invalid(format!("no rates for well {}", l.well)))?;
            let t = rates
                .times
                .iter()
                .position(|&t| (t - l.time).abs() <= TIME_TOL)
                .ok_or_else(|| Error::invalid(format!("no report at {} days", l.time)))?;
            Ok(match l.phase {
                Phase::Oil => w.q_o[t],
                Phase::Water => w.q_w[t],
            })
        })
        .collect()
}

/// Observations from true rates. Each datum gets `N(0, (noise_frac |d|)^2)`
/// noise; the variance is `(0.05 |d|)^2`, floored at `(0.05 * 1 m3/day)^2`.
pub fn observations_from_rates(rates: &WellRates, noise_frac: f64, horizon: f64, seed: u64) -> Result<Observations> {
    if !(noise_frac >= 0.0) {
        return Err(Error::invalid("noise fraction must be non-negative"));
    }
    let labels = observation_labels(rates, horizon)?;
    let truth = data_vector(rates, &labels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let d_obs = truth
        .iter()
        .map(|&d| if noise_frac > 0.0 { d + noise_frac * d.abs() * std.sample(&mut rng) } else { d })
        .collect();
    let floor = (DATA_SIGMA_FRAC * RATE_EPS).powi(2);
    let variance = truth.iter().map(|d| (DATA_SIGMA_FRAC * d.abs()).powi(2).max(floor)).collect();
    Ok(Observations { labels, d_obs, variance, history_horizon: horizon })
}

/// Simulates the true model and records its rates up to `horizon` with noise.
pub fn make_observations(
    truth: &GeoModel,
    config: &SimConfig,
    noise_frac: f64,
    horizon: f64,
    seed: u64,
) -> Result<Observations> {
    let last = config.report_times.last().copied().unwrap_or(0.0);
    if horizon > last + TIME_TOL {
        return Err(Error::invalid("history horizon lies past the final report time"));
    }
    let res = simulate(truth, config)?;
    observations_from_rates(&res.rates, noise_frac, horizon, seed)
}
