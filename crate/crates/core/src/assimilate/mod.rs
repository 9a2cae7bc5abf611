//! History matching by randomized maximum likelihood over the PCA latent
//! vector, minimized with a coordinate-poll direct search.

mod mads;
mod observations;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::evaluate::rates_from_states;
use crate::geomodel::{sample_model, GeoModel, PcaBasis, WellSpec};
use crate::pipeline::Surrogate;
use crate::simulator::{simulate, FluidProps, SimConfig};
use crate::{Error, Result};

pub use mads::{mads_minimize, MadsConfig, MadsResult, PollRecord};
pub use observations::{
    data_vector, make_observations, observation_labels, observations_from_rates, ObsLabel, Observations,
    DATA_SIGMA_FRAC,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RmlConfig {
    pub n_r: usize,
    pub mads: MadsConfig,
    pub seed: u64,
}

impl Default for RmlConfig {
    fn default() -> Self {
        Self { n_r: 10, mads: MadsConfig::default(), seed: 0 }
    }
}

/// Everything needed to turn a latent vector into predicted data.
#[derive(Debug, Clone)]
pub struct RmlProblem {
    pub basis: PcaBasis,
    pub wells: Vec<WellSpec>,
    pub perm_a: f64,
    pub perm_b: f64,
    pub obs: Observations,
}

impl RmlProblem {
    pub fn model(&self, xi: &[f64]) -> Result<GeoModel> {
        sample_model(&self.basis, xi, &self.wells, self.perm_a, self.perm_b)
    }
}

/// The forward model `g`.
#[derive(Debug, Clone, Copy)]
pub enum Forward<'a> {
    Surrogate { surrogate: &'a Surrogate, fluids: &'a FluidProps },
    Simulator(&'a SimConfig),
}

impl Forward<'_> {
    /// Predicted data for each latent vector; `None` where the forward model
    /// failed.
    pub fn responses(&self, problem: &RmlProblem, xis: &[Vec<f64>]) -> Vec<Option<Vec<f64>>> {
        let labels = &problem.obs.labels;
        let models: Vec<Option<GeoModel>> = xis.iter().map(|x| problem.model(x).ok()).collect();
        match self {
            Forward::Surrogate { surrogate, fluids } => {
                let ok: Vec<&GeoModel> = models.iter().flatten().collect();
                let states = match surrogate.predict(&ok) {
                    Ok(s) => s,
                    Err(e) => {
                        log::warn!("surrogate failed: {e}");
                        return vec![None; xis.len()];
                    }
                };
                let mut it = states.into_iter();
                models
                    .iter()
                    .map(|m| {
                        let m = m.as_ref()?;
                        let s = it.next()?;
                        let r = rates_from_states(&s, m, &surrogate.wells, fluids).ok()?;
                        data_vector(&r, labels).ok()
                    })
                    .collect()
            }
            Forward::Simulator(cfg) => models
                .par_iter()
                .map(|m| {
                    let res = simulate(m.as_ref()?, cfg).ok()?;
                    data_vector(&res.rates, labels).ok()
                })
                .collect(),
        }
    }
}

/// RML objective for one latent vector.
pub fn rml_objective(g: &[f64], obs: &Observations, d_star: &[f64], xi: &[f64], xi_star: &[f64]) -> f64 {
    obs.misfit(g, Some(d_star)) + xi.iter().zip(xi_star).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmlRun {
    pub index: usize,
    pub xi_star: Vec<f64>,
    pub d_star: Vec<f64>,
    pub xi: Vec<f64>,
    pub objective: f64,
    /// Misfit against `d_obs` at the prior start `xi_star`.
    pub prior_misfit: f64,
    /// Misfit against `d_obs` at the result.
    pub data_misfit: f64,
    pub regularization: f64,
    pub mads: MadsResult,
}

impl RmlRun {
    pub fn failed(&self) -> bool {
        !self.objective.is_finite()
    }
}

/// Perturbed data and prior anchor for run `i`.
pub fn run_perturbations(obs: &Observations, n_xi: usize, seed: u64, i: usize) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    let xi_star = (0..n_xi).map(|_| n.sample(&mut rng)).collect();
    let d_star = obs.d_obs.iter().zip(&obs.variance).map(|(d, v)| d + v.sqrt() * n.sample(&mut rng)).collect();
    (xi_star, d_star)
}

/// One RML run from explicit perturbations and start point.
pub fn rml_run<G>(
    problem: &RmlProblem,
    g: &G,
    mads: &MadsConfig,
    index: usize,
    xi_star: Vec<f64>,
    d_star: Vec<f64>,
    start: &[f64],
) -> Result<RmlRun>
where
    G: Fn(&[Vec<f64>]) -> Vec<Option<Vec<f64>>>,
{
    let obs = &problem.obs;
    let objective = |pts: &[Vec<f64>]| -> Vec<f64> {
        g(pts)
            .iter()
            .zip(pts)
            .map(|(d, x)| d.as_ref().map_or(f64::INFINITY, |d| rml_objective(d, obs, &d_star, x, &xi_star)))
            .collect()
    };
    let res = mads_minimize(objective, start, mads)?;
    let mut finals = g(&[xi_star.clone(), res.xi.clone()]);
    let post = finals.pop().flatten();
    let prior = finals.pop().flatten().map(|d| obs.misfit(&d, None));
    let regularization = res.xi.iter().zip(&xi_star).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(RmlRun {
        index,
        xi: res.xi.clone(),
        objective: res.objective,
        prior_misfit: prior.unwrap_or(f64::INFINITY),
        data_misfit: post.map_or(f64::INFINITY, |d| obs.misfit(&d, None)),
        regularization,
        xi_star,
        d_star,
        mads: res,
    })
}

/// `n_r` independent RML runs, each started at its own prior draw.
/// Individual failures are kept in the output; half or more failing is an
/// error.
pub fn run_rml<G>(problem: &RmlProblem, cfg: &RmlConfig, g: G) -> Result<Vec<RmlRun>>
where
    G: Fn(&[Vec<f64>]) -> Vec<Option<Vec<f64>>> + Sync,
{
    problem.obs.validate()?;
    if cfg.n_r == 0 {
        return Err(Error::invalid("RML needs at least one run"));
    }
    let n_xi = problem.basis.n_xi();
    let runs: Vec<RmlRun> = (0..cfg.n_r)
        .into_par_iter()
        .map(|i| {
            let (xi_star, d_star) = run_perturbations(&problem.obs, n_xi, cfg.seed, i);
            let start = xi_star.clone();
            rml_run(problem, &g, &cfg.mads, i, xi_star, d_star, &start)
        })
        .collect::<Result<_>>()?;
    let failed = runs.iter().filter(|r| r.failed()).count();
    if 2 * failed >= cfg.n_r {
        return Err(Error::RmlFailed { failed, total: cfg.n_r });
    }
    Ok(runs)
}

/// Median of finite values (upper middle for even counts), or `NaN`.
pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}
