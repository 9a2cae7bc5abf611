//! The workflow stages behind each subcommand.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use rrunet_core::assimilate::{make_observations, median, run_rml, Forward, RmlProblem, RmlRun};
use rrunet_core::evaluate::{metrics, rate_percentiles, rates_from_states, Metrics};
use rrunet_core::geomodel::{
    fit_pca, generate_channel_realization, generate_realizations, sample_latent, sample_model, GeoModel, PcaBasis,
    WellSpec,
};
use rrunet_core::io;
use rrunet_core::pipeline::{Normalizer, Surrogate, Target, Trainer, TrainingSet};
use rrunet_core::simulator::{simulate, SimResult};
use rrunet_core::Error;

use crate::config::{ExperimentConfig, ForwardKind, Stage};

/// Path of `path` relative to `base`, with `/` separators.
fn relative(path: &Path, base: &Path) -> Result<String> {
    let p = std::path::absolute(path)?;
    let b = std::path::absolute(base)?;
    let rel = pathdiff::diff_paths(&p, &b).unwrap_or(p);
    Ok(rel.to_string_lossy().replace('\\', "/"))
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn numbered(prefix: &str, k: usize, ext: &str) -> String {
    format!("{prefix}_{k:04}.{ext}")
}

fn write_csv<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    if let Some(d) = path.parent() {
        fs::create_dir_all(d)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

// generate / sample

#[derive(Debug, Clone, PartialEq)]
pub struct SandSummary {
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl SandSummary {
    fn of(models: &[GeoModel]) -> Self {
        let f: Vec<f64> = models.iter().map(GeoModel::sand_fraction).collect();
        Self {
            count: f.len(),
            mean: f.iter().sum::<f64>() / f.len() as f64,
            min: f.iter().cloned().fold(f64::INFINITY, f64::min),
            max: f.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Channel realizations, their PCA basis and the well list.
pub fn generate(cfg: &ExperimentConfig, count: usize, seed: u64, out: &Path) -> Result<SandSummary> {
    if count == 0 {
        return Err(Error::InvalidInput("count must be positive".into()).into());
    }
    let sim = &cfg.simulation;
    let g = &cfg.geomodel;
    let models = generate_realizations(&sim.grid, &sim.wells, seed, count, &cfg.channels(), g.perm_a, g.perm_b)?;
    fs::create_dir_all(out)?;
    for (k, m) in models.iter().enumerate() {
        io::save_geom(m, &out.join(numbered("real", k, "geom")))?;
    }
    io::write_wells_csv(&sim.wells, fs::File::create(out.join("wells.csv"))?)?;
    if count >= 2 {
        let n_xi = g.n_xi.min(count - 1);
        if n_xi < g.n_xi {
            log::warn!("only {count} realizations: PCA keeps {n_xi} components");
        }
        io::save_json(&fit_pca(&models, n_xi)?, &out.join("pca.json"))?;
    } else {
        log::warn!("a single realization: no PCA basis written");
    }
    let s = SandSummary::of(&models);
    println!("generated {} realizations: sand fraction mean {:.6} min {:.6} max {:.6}", s.count, s.mean, s.min, s.max);
    Ok(s)
}

#[derive(Serialize)]
struct LatentRow {
    name: String,
    xi: Vec<f64>,
}

/// Models drawn from the PCA parameterization with standard normal latents.
pub fn sample(cfg: &ExperimentConfig, pca: &PcaBasis, count: usize, seed: u64, out: &Path) -> Result<Vec<PathBuf>> {
    if count == 0 {
        return Err(Error::InvalidInput("count must be positive".into()).into());
    }
    fs::create_dir_all(out)?;
    let g = &cfg.geomodel;
    let mut paths = Vec::with_capacity(count);
    let mut rows = Vec::with_capacity(count);
    for (k, xi) in sample_latent(pca.n_xi(), seed, count).into_iter().enumerate() {
        let m = sample_model(pca, &xi, &cfg.simulation.wells, g.perm_a, g.perm_b)?;
        let p = out.join(numbered("sample", k, "geom"));
        io::save_geom(&m, &p)?;
        rows.push(LatentRow { name: stem(&p), xi });
        paths.push(p);
    }
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(out.join("latent.csv"))?;
    let mut header = vec!["name".to_string()];
    header.extend((0..pca.n_xi()).map(|k| format!("xi_{k}")));
    w.write_record(&header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(paths)
}

// simulate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    pub geom: String,
    pub rstf: String,
    pub rates: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizerRecord {
    pub mean_maps: String,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub degenerate: Vec<bool>,
}

/// Dataset manifest. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub times: Vec<f64>,
    pub wells: Vec<WellSpec>,
    pub well_blocks: Vec<usize>,
    pub samples: Vec<ManifestEntry>,
    pub skipped: Vec<String>,
    pub normalizer: Option<NormalizerRecord>,
}

pub fn print_schedule(cfg: &ExperimentConfig) {
    let t: Vec<String> = cfg.simulation.report_times.iter().map(|t| t.to_string()).collect();
    println!("report times (days): {}", t.join(" "));
}

/// Simulates every GEOM file in `models` into `out`. Returns the manifest path.
pub fn simulate_dir(cfg: &ExperimentConfig, models: &Path, out: &Path) -> Result<PathBuf> {
    let files = io::list_geom(models)?;
    if files.is_empty() {
        return Err(Error::InvalidInput(format!("no .geom files in {}", models.display())).into());
    }
    let loaded = files.iter().map(|p| io::load_geom(p)).collect::<rrunet_core::Result<Vec<_>>>()?;
    let results: Vec<rrunet_core::Result<SimResult>> =
        loaded.par_iter().map(|m| simulate(m, &cfg.simulation)).collect();
    fs::create_dir_all(out)?;
    let mut samples = Vec::new();
    let mut skipped = Vec::new();
    let mut pressures = Vec::new();
    for (path, res) in files.iter().zip(results) {
        let name = stem(path);
        match res {
            Ok(r) => {
                let rstf = out.join(format!("{name}.rstf"));
                let rates = out.join(format!("{name}.rates.csv"));
                io::save_rstf(&r.states, &rstf)?;
                io::save_rates_csv(&r.rates, &rates)?;
                samples.push(ManifestEntry {
                    name,
                    geom: relative(path, out)?,
                    rstf: relative(&rstf, out)?,
                    rates: relative(&rates, out)?,
                });
                pressures.push(r.states.pressure);
            }
            Err(e @ Error::SimulationDiverged { .. }) => {
                log::warn!("{name}: {e}");
                skipped.push(name);
            }
            Err(e) => return Err(e.into()),
        }
    }
    if skipped.len() * 10 > files.len() {
        return Err(Error::DatasetUnreliable { failed: skipped.len(), total: files.len() }.into());
    }
    let normalizer = if pressures.len() >= 2 {
        let refs: Vec<&[Vec<f64>]> = pressures.iter().map(|p| p.as_slice()).collect();
        let n = Normalizer::fit(&refs)?;
        let grid = cfg.simulation.grid;
        let seq = rrunet_core::simulator::StateSequence {
            nx: grid.nx,
            ny: grid.ny,
            times: cfg.simulation.report_times.clone(),
            pressure: n.mean_maps.clone(),
            saturation: vec![vec![0.0; grid.n_blocks()]; n.n_t()],
        };
        io::save_rstf(&seq, &out.join("normalizer.rstf"))?;
        Some(NormalizerRecord { mean_maps: "normalizer.rstf".into(), min: n.min, max: n.max, degenerate: n.degenerate })
    } else {
        None
    };
    let manifest = Manifest {
        times: cfg.simulation.report_times.clone(),
        wells: cfg.simulation.wells.clone(),
        well_blocks: cfg.simulation.wells.iter().map(|w| w.block(&cfg.simulation.grid)).collect(),
        samples,
        skipped,
        normalizer,
    };
    let path = out.join("manifest.json");
    io::save_json(&manifest, &path)?;
    println!("simulated {} models ({} skipped) into {}", manifest.samples.len(), manifest.skipped.len(), out.display());
    Ok(path)
}

/// Models, states and rates listed in a manifest.
pub fn load_dataset(manifest_path: &Path) -> Result<(Manifest, TrainingSet)> {
    let manifest: Manifest = io::load_json(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut models = Vec::new();
    let mut states = Vec::new();
    let mut rates = Vec::new();
    for s in &manifest.samples {
        models.push(io::load_geom(&base.join(&s.geom)).with_context(|| format!("loading {}", s.geom))?);
        states.push(io::load_rstf(&base.join(&s.rstf), &manifest.times)?);
        rates.push(io::load_rates_csv(&base.join(&s.rates), &manifest.wells)?);
    }
    let set = TrainingSet::from_states(&models, &states, &manifest.wells, rates)?;
    Ok((manifest, set))
}

// train

pub fn train(cfg: &ExperimentConfig, manifest: &Path, target: Target, out: &Path) -> Result<()> {
    let (m, set) = load_dataset(manifest)?;
    let mut trainer = Trainer::new(&set, cfg.arch(target), cfg.train.clone(), target)?;
    fs::create_dir_all(out)?;
    let epochs = cfg.train.epochs;
    let mut failure = None;
    for e in 0..epochs {
        match trainer.run_epoch() {
            Ok(l) => {
                if e % 25 == 0 || e + 1 == epochs {
                    log::info!("{} epoch {e}: loss {l:.6e}", target.as_str());
                }
            }
            Err(err) => {
                failure = Some(err);
                break;
            }
        }
    }
    let net = trainer.best_net();
    io::save_network(&net, out, target.as_str())?;
    io::write_loss_csv(trainer.history(), fs::File::create(out.join(format!("{}.loss.csv", target.as_str())))?)?;
    io::save_surrogate_meta(&set.normalizer, set.input_transform, &m.wells, &set.times, set.nx, set.ny, out)?;
    if let Some(err) = failure {
        return Err(anyhow::Error::new(err).context("best checkpoint so far was written"));
    }
    let h = trainer.history();
    let best = h.iter().cloned().fold(f64::INFINITY, f64::min);
    println!("trained {} net: {} epochs, first loss {:.6e}, best loss {:.6e}", target.as_str(), h.len(), h[0], best);
    Ok(())
}

// evaluate

fn load_models(dir: &Path) -> Result<(Vec<String>, Vec<GeoModel>)> {
    let files = io::list_geom(dir)?;
    if files.is_empty() {
        return Err(Error::InvalidInput(format!("no .geom files in {}", dir.display())).into());
    }
    let models = files.iter().map(|p| io::load_geom(p)).collect::<rrunet_core::Result<Vec<_>>>()?;
    Ok((files.iter().map(|p| stem(p)).collect(), models))
}

pub fn evaluate(cfg: &ExperimentConfig, checkpoints: &Path, test_models: &Path, out: &Path) -> Result<Metrics> {
    let surrogate = io::load_surrogate(checkpoints)?;
    let (names, models) = load_models(test_models)?;
    let sims: Vec<rrunet_core::Result<SimResult>> = models.par_iter().map(|m| simulate(m, &cfg.simulation)).collect();
    let mut keep = Vec::new();
    let mut sim_states = Vec::new();
    let mut sim_rates = Vec::new();
    for (k, r) in sims.into_iter().enumerate() {
        match r {
            Ok(r) => {
                keep.push(k);
                sim_states.push(r.states);
                sim_rates.push(r.rates);
            }
            Err(e @ Error::SimulationDiverged { .. }) => log::warn!("{}: {e}", names[k]),
            Err(e) => return Err(e.into()),
        }
    }
    let kept: Vec<&GeoModel> = keep.iter().map(|&k| &models[k]).collect();
    let surr_states = surrogate.predict(&kept)?;
    let surr_rates = surr_states
        .iter()
        .zip(&kept)
        .map(|(s, m)| rates_from_states(s, m, &surrogate.wells, &cfg.simulation.fluids))
        .collect::<rrunet_core::Result<Vec<_>>>()?;
    let report = metrics(&surr_states, &sim_states, &surr_rates, &sim_rates)?;
    fs::create_dir_all(out)?;
    io::save_json(&report, &out.join("metrics.json"))?;
    io::write_percentiles_csv(
        &rate_percentiles(&surr_rates)?,
        fs::File::create(out.join("percentiles_surrogate.csv"))?,
    )?;
    io::write_percentiles_csv(
        &rate_percentiles(&sim_rates)?,
        fs::File::create(out.join("percentiles_simulator.csv"))?,
    )?;
    for (i, &k) in keep.iter().enumerate() {
        io::save_rates_csv(&surr_rates[i], &out.join("rates/surrogate").join(format!("{}.csv", names[k])))?;
        io::save_rates_csv(&sim_rates[i], &out.join("rates/simulator").join(format!("{}.csv", names[k])))?;
    }
    println!(
        "evaluated {} test models: delta_s {:.4} delta_p {:.4} delta_r oil {:.4} water {:.4} inj {:.4}",
        report.n_e, report.delta_s, report.delta_p, report.delta_r_oil, report.delta_r_water, report.delta_r_inj
    );
    Ok(report)
}

// history-match

#[derive(Debug, Clone, Serialize)]
pub struct PosteriorRow {
    pub run: usize,
    pub objective: f64,
    pub data_misfit: f64,
    pub regularization: f64,
    pub prior_misfit: f64,
    pub sim_prior_misfit: f64,
    pub sim_data_misfit: f64,
}

#[derive(Debug, Clone)]
pub struct HistoryMatchSummary {
    pub rows: Vec<PosteriorRow>,
    pub median_prior: f64,
    pub median_posterior: f64,
    pub median_sim_prior: f64,
    pub median_sim_posterior: f64,
}

pub fn history_match(
    cfg: &ExperimentConfig,
    truth: &Path,
    checkpoints: &Path,
    pca: &Path,
    out: &Path,
) -> Result<HistoryMatchSummary> {
    let hm = &cfg.history_match;
    let truth = io::load_geom(truth)?;
    let basis: PcaBasis = io::load_json(pca)?;
    let obs = make_observations(&truth, &cfg.simulation, hm.noise_frac, hm.horizon, cfg.stage_seed(Stage::Noise))?;
    fs::create_dir_all(out)?;
    io::save_json(&obs, &out.join("observations.json"))?;
    let problem = RmlProblem {
        basis,
        wells: cfg.simulation.wells.clone(),
        perm_a: cfg.geomodel.perm_a,
        perm_b: cfg.geomodel.perm_b,
        obs,
    };
    let surrogate: Option<Surrogate> = match hm.forward {
        ForwardKind::Surrogate => Some(io::load_surrogate(checkpoints)?),
        ForwardKind::Simulator => None,
    };
    let forward = match &surrogate {
        Some(s) => Forward::Surrogate { surrogate: s, fluids: &cfg.simulation.fluids },
        None => Forward::Simulator(&cfg.simulation),
    };
    let runs: Vec<RmlRun> = run_rml(&problem, &hm.rml, |pts: &[Vec<f64>]| forward.responses(&problem, pts))?;

    // verify prior and posterior models with the simulator
    let mut pts = Vec::new();
    for r in &runs {
        pts.push(r.xi_star.clone());
        pts.push(r.xi.clone());
    }
    let verified = Forward::Simulator(&cfg.simulation).responses(&problem, &pts);
    let sim_misfit = |d: &Option<Vec<f64>>| d.as_ref().map_or(f64::INFINITY, |d| problem.obs.misfit(d, None));

    let mut rows = Vec::new();
    for (k, r) in runs.iter().enumerate() {
        if r.failed() {
            log::warn!("RML run {} failed", r.index);
            continue;
        }
        io::save_geom(&problem.model(&r.xi)?, &out.join("posterior").join(format!("run_{:02}.geom", r.index)))?;
        io::save_geom(&problem.model(&r.xi_star)?, &out.join("prior").join(format!("run_{:02}.geom", r.index)))?;
        rows.push(PosteriorRow {
            run: r.index,
            objective: r.objective,
            data_misfit: r.data_misfit,
            regularization: r.regularization,
            prior_misfit: r.prior_misfit,
            sim_prior_misfit: sim_misfit(&verified[2 * k]),
            sim_data_misfit: sim_misfit(&verified[2 * k + 1]),
        });
    }
    write_csv(&rows, &out.join("posteriors.csv"))?;
    let col = |f: fn(&PosteriorRow) -> f64| median(&rows.iter().map(f).collect::<Vec<_>>());
    let s = HistoryMatchSummary {
        median_prior: col(|r| r.prior_misfit),
        median_posterior: col(|r| r.data_misfit),
        median_sim_prior: col(|r| r.sim_prior_misfit),
        median_sim_posterior: col(|r| r.sim_data_misfit),
        rows,
    };
    println!(
        "history match: {} posterior models, median data misfit prior {:.4e} posterior {:.4e} (simulator check {:.4e} -> {:.4e})",
        s.rows.len(),
        s.median_prior,
        s.median_posterior,
        s.median_sim_prior,
        s.median_sim_posterior
    );
    Ok(s)
}

// run-all

pub fn run_all(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let g = &cfg.geomodel;
    let sim = &cfg.simulation;
    let mut clock = Instant::now();
    let mut lap = |stage: &str| {
        println!("stage {stage} {:.1}s", clock.elapsed().as_secs_f64());
        clock = Instant::now();
    };
    generate(cfg, g.n_pca, cfg.stage_seed(Stage::Realizations), &out.join("realizations"))?;
    let pca_path = out.join("realizations/pca.json");
    let basis: PcaBasis = io::load_json(&pca_path)?;
    sample(cfg, &basis, cfg.dataset.n_train, cfg.stage_seed(Stage::TrainModels), &out.join("train/models"))?;
    sample(cfg, &basis, cfg.dataset.n_test, cfg.stage_seed(Stage::TestModels), &out.join("test/models"))?;
    let truth = generate_channel_realization(
        &sim.grid,
        &sim.wells,
        cfg.stage_seed(Stage::Truth),
        &cfg.channels(),
        g.perm_a,
        g.perm_b,
    )?;
    let truth_path = out.join("truth.geom");
    io::save_geom(&truth, &truth_path)?;
    lap("generate");
    let manifest = simulate_dir(cfg, &out.join("train/models"), &out.join("train/sim"))?;
    lap("simulate");
    let ckpt = out.join("checkpoints");
    train(cfg, &manifest, Target::Pressure, &ckpt)?;
    train(cfg, &manifest, Target::Saturation, &ckpt)?;
    lap("train");
    evaluate(cfg, &ckpt, &out.join("test/models"), &out.join("evaluate"))?;
    lap("evaluate");
    history_match(cfg, &truth_path, &ckpt, &pca_path, &out.join("history_match"))?;
    lap("history-match");
    Ok(())
}
