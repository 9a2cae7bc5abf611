//! Experiment configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rrunet_core::assimilate::RmlConfig;
use rrunet_core::geomodel::{default_perm_b, ChannelParams, DEFAULT_PERM_A};
use rrunet_core::network::ArchConfig;
use rrunet_core::pipeline::{Target, TrainConfig};
use rrunet_core::simulator::SimConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub simulation: SimConfig,
    pub geomodel: GeoConfig,
    pub dataset: DatasetConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub history_match: HistoryMatchConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeoConfig {
    #[serde(default = "default_a")]
    pub perm_a: f64,
    #[serde(default = "default_perm_b")]
    pub perm_b: f64,
    /// Channel geometry; defaults scale with the grid.
    #[serde(default)]
    pub channels: Option<ChannelParams>,
    /// Realizations used to fit the PCA basis.
    pub n_pca: usize,
    pub n_xi: usize,
}

fn default_a() -> f64 {
    DEFAULT_PERM_A
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_train: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub base_filters: usize,
    pub residual_blocks_enc: usize,
    pub residual_blocks_dec: usize,
    #[serde(default = "yes")]
    pub batchnorm: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForwardKind {
    Surrogate,
    Simulator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistoryMatchConfig {
    pub noise_frac: f64,
    /// Days.
    pub horizon: f64,
    pub forward: ForwardKind,
    pub rml: RmlConfig,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> rrunet_core::Result<()> {
        use rrunet_core::Error;
        self.simulation.validate()?;
        if let Some(c) = &self.geomodel.channels {
            c.validate()?;
        }
        if self.geomodel.n_xi == 0 || self.geomodel.n_xi >= self.geomodel.n_pca {
            return Err(Error::InvalidInput("n_xi must lie in 1..n_pca".into()));
        }
        if self.dataset.n_train < 2 || self.dataset.n_test == 0 {
            return Err(Error::InvalidInput("need at least 2 training and 1 test model".into()));
        }
        self.train.validate(self.dataset.n_train)?;
        self.arch(Target::Pressure).validate()?;
        self.history_match.rml.mads.validate()?;
        let last = *self.simulation.report_times.last().expect("validated non-empty");
        if !(self.history_match.horizon > 0.0 && self.history_match.horizon <= last) {
            return Err(Error::InvalidInput("history horizon must lie within the schedule".into()));
        }
        if !(self.history_match.noise_frac >= 0.0) {
            return Err(Error::InvalidInput("noise fraction must be non-negative".into()));
        }
        Ok(())
    }

    pub fn channels(&self) -> ChannelParams {
        self.geomodel.channels.clone().unwrap_or_else(|| ChannelParams::for_grid(&self.simulation.grid))
    }

    pub fn arch(&self, target: Target) -> ArchConfig {
        let g = &self.simulation.grid;
        let mut a = ArchConfig::new(g.nx, g.ny, self.network.base_filters, self.simulation.n_t(), target.activation());
        a.residual_blocks_enc = self.network.residual_blocks_enc;
        a.residual_blocks_dec = self.network.residual_blocks_dec;
        a.batchnorm = self.network.batchnorm;
        a
    }

    /// Seed for one stage of the workflow.
    pub fn stage_seed(&self, stage: Stage) -> u64 {
        self.seed.wrapping_mul(1_000).wrapping_add(stage as u64)
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Stage {
    Realizations = 1,
    TrainModels = 2,
    TestModels = 3,
    Truth = 4,
    Noise = 5,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn packaged(name: &str) -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
    }

    #[test]
    fn packaged_configs_load() {
        for name in ["desk.json", "smoke.json"] {
            ExperimentConfig::load(&packaged(name)).unwrap();
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = std::fs::read_to_string(packaged("smoke.json")).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["network"]["dropout"] = serde_json::json!(0.5);
        assert!(serde_json::from_value::<ExperimentConfig>(v).is_err());
    }
}
