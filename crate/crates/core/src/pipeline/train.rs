//! Mini-batch training of one recurrent R-U-Net.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::loss::{loss_weights, Norm};
use super::TrainingSet;
use crate::autodiff::{BnMode, ParamStore, Tape, Tensor};
use crate::network::{ArchConfig, FinalActivation, RecurrentRUNet};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Pressure,
    Saturation,
}

impl Target {
    /// L1 for pressure, L2 for saturation.
    pub fn default_norm(self) -> Norm {
        match self {
            Target::Pressure => Norm::L1,
            Target::Saturation => Norm::L2,
        }
    }

    pub fn activation(self) -> FinalActivation {
        match self {
            Target::Pressure => FinalActivation::Linear,
            Target::Saturation => FinalActivation::Sigmoid,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Target::Pressure => "pressure",
            Target::Saturation => "saturation",
        }
    }

    fn seed_offset(self) -> u64 {
        match self {
            Target::Pressure => 0,
            Target::Saturation => 1,
        }
    }
}

impl std::str::FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pressure" => Ok(Target::Pressure),
            "saturation" => Ok(Target::Saturation),
            _ => Err(Error::invalid(format!("unknown target {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub lambda_well: f64,
    pub epochs: usize,
    /// Overrides the per-target default norm.
    pub norm: Option<Norm>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.003,
            batch: 8,
            lambda_well: 1000.0,
            epochs: 200,
            norm: None,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n_s: usize) -> Result<()> {
        if !(self.lr > 0.0) || !(self.eps > 0.0) {
            return Err(Error::invalid("learning rate and epsilon must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("ADAM betas must lie in [0, 1)"));
        }
        if !(self.lambda_well >= 0.0) {
            return Err(Error::invalid("well weight must be non-negative"));
        }
        if self.batch == 0 || self.batch > n_s {
            return Err(Error::invalid(format!("batch size {} must lie in 1..={n_s}", self.batch)));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be positive"));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }
}

/// Trained network, the epoch-mean loss history and where the best epoch was.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: RecurrentRUNet,
    pub history: Vec<f64>,
    pub best_epoch: usize,
    pub best_loss: f64,
}

/// Stateful training loop. Holds the best parameters seen so far, so a
/// caller can recover them after a divergence error.
pub struct Trainer<'a> {
    set: &'a TrainingSet,
    target: Target,
    cfg: TrainConfig,
    norm: Norm,
    net: RecurrentRUNet,
    adam: Adam,
    history: Vec<f64>,
    best: Option<(usize, f64, ParamStore)>,
}

impl<'a> Trainer<'a> {
    pub fn new(set: &'a TrainingSet, arch: ArchConfig, cfg: TrainConfig, target: Target) -> Result<Self> {
        cfg.validate(set.n_s())?;
        if arch.nx != set.nx || arch.ny != set.ny || arch.n_t != set.n_t() {
            return Err(Error::invalid("architecture grid or step count differs from the dataset"));
        }
        let net = RecurrentRUNet::new(arch, cfg.seed.wrapping_add(target.seed_offset()))?;
        let adam = Adam::new(&net.params, cfg.adam());
        let norm = cfg.norm.unwrap_or(target.default_norm());
        Ok(Self { set, target, cfg, norm, net, adam, history: Vec::new(), best: None })
    }

    pub fn net(&self) -> &RecurrentRUNet {
        &self.net
    }

    pub fn history(&self) -> &[f64] {
        &self.history
    }

    /// Network with the best parameters so far (current ones before any epoch).
    pub fn best_net(&self) -> RecurrentRUNet {
        match &self.best {
            Some((_, _, p)) => RecurrentRUNet { arch: self.net.arch.clone(), params: p.clone() },
            None => self.net.clone(),
        }
    }

    fn targets(&self, idx: &[usize]) -> Result<Tensor> {
        let seqs = match self.target {
            Target::Pressure => &self.set.targets_p,
            Target::Saturation => &self.set.targets_s,
        };
        let n = idx.len();
        let n_t = self.set.n_t();
        let n_b = self.set.nx * self.set.ny;
        let mut data = Vec::with_capacity(n * n_t * n_b);
        for t in 0..n_t {
            for &i in idx {
                data.extend_from_slice(&seqs[i][t]);
            }
        }
        Tensor::from_vec([n_t * n, 1, self.set.ny, self.set.nx], data)
    }

    /// Loss of the current parameters on a batch, with its gradients and
    /// batch-norm statistics.
    pub fn batch_loss(
        &self,
        idx: &[usize],
    ) -> Result<(f64, crate::autodiff::Gradients, Vec<crate::autodiff::BnUpdate>)> {
        let input = self.set.input_batch(idx)?;
        let target = self.targets(idx)?;
        let weights = loss_weights(
            idx.len(),
            self.set.n_t(),
            self.set.nx * self.set.ny,
            &self.set.well_blocks,
            self.cfg.lambda_well,
        )?;
        let mut tape = Tape::new(&self.net.params);
        let x = tape.leaf(input);
        let y = self.net.forward(&mut tape, x, BnMode::Train)?;
        let l = tape.lp_loss(y, target, weights, self.norm.power())?;
        let value = tape.value(l).data()[0];
        if !value.is_finite() {
            return Err(Error::TrainingDiverged(format!("non-finite {} loss", self.target.as_str())));
        }
        let updates = tape.take_bn_updates();
        let grads = tape.backward(l)?;
        Ok((value, grads, updates))
    }

    /// One forward/backward/update on a batch. Returns the pre-update loss.
    pub fn step(&mut self, idx: &[usize]) -> Result<f64> {
        let (value, grads, updates) = self.batch_loss(idx)?;
        self.adam.step(&mut self.net.params, &grads)?;
        self.net.params.apply_bn_updates(&updates);
        Ok(value)
    }

    /// One shuffled pass over the dataset. Returns the epoch-mean loss.
    pub fn run_epoch(&mut self) -> Result<f64> {
        let epoch = self.history.len();
        let mut order: Vec<usize> = (0..self.set.n_s()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(self.cfg.batch) {
            total += self.step(chunk)? * chunk.len() as f64;
        }
        let mean = total / order.len() as f64;
        self.history.push(mean);
        if self.best.as_ref().is_none_or(|b| mean < b.1) {
            self.best = Some((epoch, mean, self.net.params.clone()));
        }
        Ok(mean)
    }

    pub fn finish(self) -> TrainOutcome {
        let net = self.best_net();
        let (best_epoch, best_loss) = self.best.as_ref().map_or((0, f64::NAN), |b| (b.0, b.1));
        TrainOutcome { net, history: self.history, best_epoch, best_loss }
    }
}

/// Trains one network for `cfg.epochs` epochs and returns the best-loss checkpoint.
pub fn train(set: &TrainingSet, arch: ArchConfig, cfg: TrainConfig, target: Target) -> Result<TrainOutcome> {
    let epochs = cfg.epochs;
    let mut trainer = Trainer::new(set, arch, cfg, target)?;
    for e in 0..epochs {
        let l = trainer.run_epoch()?;
        if e % 10 == 0 || e + 1 == epochs {
            log::info!("{} epoch {e}: loss {l:.6e}", target.as_str());
        }
    }
    Ok(trainer.finish())
}
