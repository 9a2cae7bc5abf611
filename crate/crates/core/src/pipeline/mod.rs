//! Training data assembly, pressure normalization, loss, ADAM and the
//! dual-network surrogate.

mod adam;
mod loss;
mod normalize;
mod train;

use rayon::prelude::*;

use crate::autodiff::Tensor;
use crate::geomodel::{GeoModel, WellSpec};
use crate::network::{InputTransform, RecurrentRUNet};
use crate::simulator::{simulate, SimConfig, StateSequence, WellRates};
use crate::{Error, Result};

pub use adam::{Adam, AdamConfig};
pub use loss::{loss, loss_weights, Norm};
pub use normalize::Normalizer;
pub use train::{train, Target, TrainConfig, TrainOutcome, Trainer};

/// Network inputs and normalized targets for `n_s` simulated models.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub nx: usize,
    pub ny: usize,
    pub times: Vec<f64>,
    /// `(n_s, 2, ny, nx)`.
    pub inputs: Tensor,
    /// Normalized pressure, `[sample][step][block]`.
    pub targets_p: Vec<Vec<Vec<f64>>>,
    /// Raw water saturation, `[sample][step][block]`.
    pub targets_s: Vec<Vec<Vec<f64>>>,
    pub well_blocks: Vec<usize>,
    pub normalizer: Normalizer,
    pub input_transform: InputTransform,
    /// Simulator rates per sample, kept for evaluation.
    pub rates: Vec<WellRates>,
    /// Indices into the model list of the samples that made it in.
    pub model_indices: Vec<usize>,
    /// Simulations that failed and were left out.
    pub skipped: usize,
}

impl TrainingSet {
    /// Builds the set from simulated states. Fits the input transform and
    /// pressure normalizer on these samples.
    pub fn from_states(
        models: &[GeoModel],
        states: &[StateSequence],
        wells: &[WellSpec],
        rates: Vec<WellRates>,
    ) -> Result<Self> {
        if models.len() != states.len() || rates.len() != states.len() {
            return Err(Error::shape("models, states and rates differ in count"));
        }
        let first = states.first().ok_or_else(|| Error::invalid("empty training set"))?;
        for (m, s) in models.iter().zip(states) {
            s.validate()?;
            if s.nx != m.grid.nx || s.ny != m.grid.ny || s.times != first.times {
                return Err(Error::shape("states differ in grid or report times"));
            }
        }
        let pressures: Vec<&[Vec<f64>]> = states.iter().map(|s| s.pressure.as_slice()).collect();
        let normalizer = Normalizer::fit(&pressures)?;
        let input_transform = InputTransform::fit(models)?;
        let refs: Vec<&GeoModel> = models.iter().collect();
        let inputs = input_transform.inputs(&refs, wells)?;
        let targets_p = states.iter().map(|s| normalizer.transform(&s.pressure)).collect::<Result<_>>()?;
        let targets_s = states.iter().map(|s| s.saturation.clone()).collect();
        let grid = models[0].grid;
        Ok(Self {
            nx: first.nx,
            ny: first.ny,
            times: first.times.clone(),
            inputs,
            targets_p,
            targets_s,
            well_blocks: wells.iter().map(|w| w.block(&grid)).collect(),
            normalizer,
            input_transform,
            rates,
            model_indices: (0..models.len()).collect(),
            skipped: 0,
        })
    }

    pub fn n_s(&self) -> usize {
        self.targets_s.len()
    }

    pub fn n_t(&self) -> usize {
        self.times.len()
    }

    pub fn n_w(&self) -> usize {
        self.well_blocks.len()
    }

    /// The samples `idx`, keeping the transforms fitted on the full set.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        if idx.is_empty() || idx.iter().any(|&i| i >= self.n_s()) {
            return Err(Error::invalid("subset indices out of range or empty"));
        }
        Ok(Self {
            inputs: self.input_batch(idx)?,
            targets_p: idx.iter().map(|&i| self.targets_p[i].clone()).collect(),
            targets_s: idx.iter().map(|&i| self.targets_s[i].clone()).collect(),
            rates: idx.iter().map(|&i| self.rates[i].clone()).collect(),
            model_indices: idx.iter().map(|&i| self.model_indices[i]).collect(),
            ..self.clone()
        })
    }

    /// Input rows `idx`, in that order.
    pub fn input_batch(&self, idx: &[usize]) -> Result<Tensor> {
        let [n, c, h, w] = self.inputs.shape();
        let per = c * h * w;
        let mut data = Vec::with_capacity(idx.len() * per);
        for &i in idx {
            if i >= n {
                return Err(Error::shape("sample index out of range"));
            }
            data.extend_from_slice(&self.inputs.data()[i * per..(i + 1) * per]);
        }
        Tensor::from_vec([idx.len(), c, h, w], data)
    }
}

/// Simulates every model (in parallel) and assembles a training set.
///
/// Failed simulations are logged and skipped; more than 10% failures is an
/// error.
pub fn build_dataset(models: &[GeoModel], config: &SimConfig) -> Result<TrainingSet> {
    config.validate()?;
    let results: Vec<_> = models.par_iter().map(|m| simulate(m, config)).collect();
    let mut kept = Vec::new();
    let mut states = Vec::new();
    let mut rates = Vec::new();
    let mut failed = 0;
    for (k, r) in results.into_iter().enumerate() {
        match r {
            Ok(res) => {
                kept.push(k);
                states.push(res.states);
                rates.push(res.rates);
            }
            Err(e @ Error::SimulationDiverged { .. }) => {
                log::warn!("model {k} skipped: {e}");
                failed += 1;
            }
            Err(e) => return Err(e),
        }
    }
    if failed * 10 > models.len() {
        return Err(Error::DatasetUnreliable { failed, total: models.len() });
    }
    let used: Vec<GeoModel> = kept.iter().map(|&k| models[k].clone()).collect();
    let mut set = TrainingSet::from_states(&used, &states, &config.wells, rates)?;
    set.model_indices = kept;
    set.skipped = failed;
    Ok(set)
}

/// Pressure and saturation networks with the transforms fitted on their
/// training set. Stands in for the simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Surrogate {
    pub pressure: RecurrentRUNet,
    pub saturation: RecurrentRUNet,
    pub normalizer: Normalizer,
    pub input: InputTransform,
    pub wells: Vec<WellSpec>,
    pub times: Vec<f64>,
}

const PREDICT_CHUNK: usize = 16;

impl Surrogate {
    pub fn validate(&self) -> Result<()> {
        let (p, s) = (&self.pressure.arch, &self.saturation.arch);
        if p.nx != s.nx || p.ny != s.ny || p.n_t != s.n_t {
            return Err(Error::invalid("pressure and saturation networks differ in shape"));
        }
        if p.n_t != self.times.len() || self.normalizer.n_t() != self.times.len() {
            return Err(Error::invalid("surrogate step counts disagree"));
        }
        if self.normalizer.mean_maps.iter().any(|m| m.len() != p.nx * p.ny) {
            return Err(Error::invalid("normalizer maps differ from the network grid"));
        }
        Ok(())
    }

    /// Predicted pressure (bar) and saturation sequences, one per model.
    pub fn predict(&self, models: &[&GeoModel]) -> Result<Vec<StateSequence>> {
        self.validate()?;
        let arch = &self.pressure.arch;
        if models.iter().any(|m| m.grid.nx != arch.nx || m.grid.ny != arch.ny) {
            return Err(Error::shape("model grid differs from the surrogate grid"));
        }
        let chunks: Vec<Result<Vec<StateSequence>>> = models
            .par_chunks(PREDICT_CHUNK)
            .map(|chunk| {
                let x = self.input.inputs(chunk, &self.wells)?;
                let p = self.pressure.predict(&x)?;
                let s = self.saturation.predict(&x)?;
                p.into_iter()
                    .zip(s)
                    .map(|(p, s)| {
                        Ok(StateSequence {
                            nx: arch.nx,
                            ny: arch.ny,
                            times: self.times.clone(),
                            pressure: self.normalizer.inverse(&p)?,
                            saturation: s,
                        })
                    })
                    .collect()
            })
            .collect();
        let mut out = Vec::with_capacity(models.len());
        for c in chunks {
            out.extend(c?);
        }
        Ok(out)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::geomodel::{default_perm_b, GridSpec, WellKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn toy_config() -> SimConfig {
        let grid = GridSpec::new(8, 8, 50.0, 50.0, 10.0).unwrap();
        let w = |id: &str, i, j, kind| WellSpec {
            id: id.into(),
            i,
            j,
            kind,
            bhp: if kind == WellKind::Injector { 340.0 } else { 310.0 },
            facies: 1,
            rw: 0.1,
        };
        let mut cfg = SimConfig::desk(grid, vec![w("I1", 1, 1, WellKind::Injector), w("P1", 6, 6, WellKind::Producer)]);
        cfg.report_times = vec![100.0, 300.0];
        cfg
    }

    pub(crate) fn toy_models(n: usize, seed: u64) -> Vec<GeoModel> {
        let cfg = toy_config();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let mut f: Vec<u8> = (0..64).map(|_| u8::from(rng.random_bool(0.4))).collect();
                for w in &cfg.wells {
                    f[w.block(&cfg.grid)] = w.facies;
                }
                GeoModel::from_facies(cfg.grid, f, 30.0, default_perm_b()).unwrap()
            })
            .collect()
    }

    pub(crate) fn toy_set(n: usize) -> TrainingSet {
        build_dataset(&toy_models(n, 9), &toy_config()).unwrap()
    }

    #[test]
    fn dataset_targets_in_unit_range_and_saturation_unchanged() {
        let models = toy_models(3, 4);
        let cfg = toy_config();
        let set = build_dataset(&models, &cfg).unwrap();
        assert_eq!((set.n_s(), set.n_t(), set.n_w(), set.skipped), (3, 2, 2, 0));
        assert!(set.targets_p.iter().flatten().flatten().all(|v| (-1e-12..=1.0 + 1e-12).contains(v)));
        let direct = simulate(&models[1], &cfg).unwrap();
        assert_eq!(set.targets_s[1], direct.states.saturation);
        assert_eq!(set.rates[1], direct.rates);
        let back = set.normalizer.inverse(&set.targets_p[1]).unwrap();
        for (a, b) in back.iter().flatten().zip(direct.states.pressure.iter().flatten()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn identical_models_give_identical_targets() {
        let m = toy_models(1, 3);
        let models = vec![m[0].clone(), m[0].clone()];
        let set = build_dataset(&models, &toy_config()).unwrap();
        assert_eq!(set.targets_p[0], set.targets_p[1]);
        assert_eq!(set.targets_s[0], set.targets_s[1]);
        assert!(set.normalizer.degenerate.iter().all(|&d| d));
    }

    #[test]
    fn unreliable_dataset_is_rejected() {
        let mut cfg = toy_config();
        // an unreachable tolerance makes every run diverge
        cfg.max_newton = 1;
        cfg.newton_tol = 1e-30;
        let r = build_dataset(&toy_models(2, 1), &cfg);
        assert!(matches!(r, Err(Error::DatasetUnreliable { failed: 2, total: 2 })), "{r:?}");
    }

    #[test]
    fn surrogate_predicts_physical_shapes() {
        use crate::network::ArchConfig;
        let set = toy_set(2);
        let arch = |t: Target| ArchConfig::new(8, 8, 4, 2, t.activation());
        let sur = Surrogate {
            pressure: RecurrentRUNet::new(arch(Target::Pressure), 1).unwrap(),
            saturation: RecurrentRUNet::new(arch(Target::Saturation), 2).unwrap(),
            normalizer: set.normalizer.clone(),
            input: set.input_transform,
            wells: toy_config().wells,
            times: set.times.clone(),
        };
        let models = toy_models(3, 5);
        let refs: Vec<&GeoModel> = models.iter().collect();
        let out = sur.predict(&refs).unwrap();
        assert_eq!(out.len(), 3);
        for s in &out {
            s.validate().unwrap();
            assert_eq!(s.times, vec![100.0, 300.0]);
            assert!(s.saturation.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        }
        // batching does not change a prediction
        let single = sur.predict(&refs[1..2]).unwrap();
        assert_eq!(single[0], out[1]);
    }
}
