//! Experiment configuration: TOML file format, validation, and preset
//! resolution. Validation errors name the offending key so a bad file fails
//! before any round runs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::DEFAULT_SCALE;
use crate::data::{Dataset, SynthSpec};
use crate::error::{Error, Result};
use crate::mlp::{Architecture, HyperParams};
use crate::paillier::MIN_KEY_BITS;
use crate::protocol::StrategyKind;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Master seed; every random stream derives from it.
    pub seed: u64,
    pub strategy: StrategyKind,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub hyper: HyperParams,
    #[serde(default)]
    pub he: HeConfig,
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub strategy_params: StrategyParams,
    pub clients: Vec<ClientConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// `synthetic` or `csv`.
    pub source: String,
    /// Synthetic preset name (`gas-like` | `wustl-like`).
    pub preset: Option<String>,
    pub samples: Option<usize>,
    pub spread: Option<f64>,
    /// CSV source fields.
    pub path: Option<PathBuf>,
    pub label_column: Option<String>,
    pub class_count: Option<usize>,
    #[serde(default = "default_split")]
    pub split: [f64; 3],
}

fn default_split() -> [f64; 3] {
    [0.8, 0.1, 0.1]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    /// `gas-pipeline`, `wustl`, or `custom` with explicit `dims`.
    pub architecture: String,
    pub dims: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeConfig {
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default = "default_key_bits")]
    pub key_bits: u64,
    #[serde(default = "default_scale")]
    pub scale: u64,
    /// Apply the reciprocal scalar inside the accumulation loop (study mode).
    #[serde(default)]
    pub chained_scaling: bool,
}

fn default_true() -> bool {
    true
}
fn default_key_bits() -> u64 {
    crate::paillier::DEFAULT_KEY_BITS
}
fn default_scale() -> u64 {
    DEFAULT_SCALE
}

impl Default for HeConfig {
    fn default() -> Self {
        HeConfig {
            enabled: true,
            key_bits: default_key_bits(),
            scale: default_scale(),
            chained_scaling: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationConfig {
    /// Maximum number of server rounds (aggregation events for AFL/FedBuff).
    pub rounds: usize,
    /// Accuracy used for convergence-speed reporting.
    pub target_accuracy: Option<f64>,
    /// Stop as soon as validation accuracy reaches the target.
    #[serde(default)]
    pub stop_on_target: bool,
    /// Stop once the virtual clock would pass this horizon.
    pub time_horizon_ms: Option<f64>,
    /// Deterministic compute-time model: milliseconds of local compute per
    /// training sample per epoch.
    #[serde(default = "default_compute_cost")]
    pub compute_ms_per_sample_epoch: f64,
}

fn default_compute_cost() -> f64 {
    0.1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategyParams {
    /// FedBuff buffer capacity K; defaults to ⌈N/2⌉.
    pub fedbuff_buffer: Option<usize>,
    /// AFL mixing weight.
    #[serde(default = "default_alpha")]
    pub afl_alpha: f64,
}

fn default_alpha() -> f64 {
    0.5
}

impl Default for StrategyParams {
    fn default() -> Self {
        StrategyParams {
            fedbuff_buffer: None,
            afl_alpha: default_alpha(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClientConfig {
    pub id: usize,
    /// Injected heterogeneity delay in simulated seconds.
    #[serde(default)]
    pub speed_delay_s: f64,
    /// Fraction of the training split sampled (with replacement) as this
    /// client's shard.
    pub shard_fraction: f64,
    /// Per-client overrides of the shared hyperparameters.
    pub local_epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct OutputConfig {
    pub metrics_csv: Option<PathBuf>,
    pub summary_json: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let config: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    /// Full consistency check; run before any round starts.
    pub fn validate(&self) -> Result<()> {
        let split_sum: f64 = self.dataset.split.iter().sum();
        if (split_sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "dataset.split must sum to 1 (got {split_sum})"
            )));
        }
        match self.dataset.source.as_str() {
            "synthetic" => {
                let preset = self.dataset.preset.as_deref().ok_or_else(|| {
                    Error::Config("dataset.preset is required for synthetic data".into())
                })?;
                SynthSpec::preset(preset, 0)?;
                if self.dataset.samples.unwrap_or(0) == 0 {
                    return Err(Error::Config(
                        "dataset.samples must be positive for synthetic data".into(),
                    ));
                }
            }
            "csv" => {
                if self.dataset.path.is_none() {
                    return Err(Error::Config("dataset.path is required for csv data".into()));
                }
                if self.dataset.label_column.is_none() {
                    return Err(Error::Config(
                        "dataset.label_column is required for csv data".into(),
                    ));
                }
                if self.dataset.class_count.unwrap_or(0) == 0 {
                    return Err(Error::Config(
                        "dataset.class_count must be positive for csv data".into(),
                    ));
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "dataset.source must be 'synthetic' or 'csv' (got '{other}')"
                )))
            }
        }

        self.architecture()?;
        self.hyper.validate()?;

        if self.he.enabled && self.he.key_bits < MIN_KEY_BITS {
            return Err(Error::Config(format!(
                "he.key_bits must be at least {MIN_KEY_BITS} (got {})",
                self.he.key_bits
            )));
        }
        if self.he.enabled && self.he.scale == 0 {
            return Err(Error::Config("he.scale must be positive".into()));
        }

        if self.simulation.rounds == 0 {
            return Err(Error::Config("simulation.rounds must be positive".into()));
        }
        if let Some(t) = self.simulation.target_accuracy {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config(format!(
                    "simulation.target_accuracy must be in [0, 1] (got {t})"
                )));
            }
        }
        if self.simulation.stop_on_target && self.simulation.target_accuracy.is_none() {
            return Err(Error::Config(
                "simulation.stop_on_target requires simulation.target_accuracy".into(),
            ));
        }
        if !(self.simulation.compute_ms_per_sample_epoch >= 0.0
            && self.simulation.compute_ms_per_sample_epoch.is_finite())
        {
            return Err(Error::Config(
                "simulation.compute_ms_per_sample_epoch must be non-negative".into(),
            ));
        }

        if self.clients.is_empty() {
            return Err(Error::Config("at least one [[clients]] entry is required".into()));
        }
        let mut ids: Vec<usize> = self.clients.iter().map(|c| c.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.clients.len() {
            return Err(Error::Config("clients.id values must be unique".into()));
        }
        for c in &self.clients {
            if !(c.shard_fraction > 0.0 && c.shard_fraction.is_finite()) {
                return Err(Error::Config(format!(
                    "clients.shard_fraction must be positive (client {})",
                    c.id
                )));
            }
            if !(c.speed_delay_s >= 0.0 && c.speed_delay_s.is_finite()) {
                return Err(Error::Config(format!(
                    "clients.speed_delay_s must be non-negative (client {})",
                    c.id
                )));
            }
        }

        let alpha = self.strategy_params.afl_alpha;
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::Config(format!(
                "strategy_params.afl_alpha must be in (0, 1] (got {alpha})"
            )));
        }
        if self.strategy_params.fedbuff_buffer == Some(0) {
            return Err(Error::Config(
                "strategy_params.fedbuff_buffer must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Resolve the architecture preset or custom dimensions.
    pub fn architecture(&self) -> Result<Architecture> {
        match self.model.architecture.as_str() {
            "custom" => {
                let dims = self.model.dims.clone().ok_or_else(|| {
                    Error::Config("model.dims is required when model.architecture = 'custom'".into())
                })?;
                Architecture::new(dims)
            }
            preset => Architecture::preset(preset),
        }
    }

    /// Materialize the configured dataset source.
    pub fn load_dataset(&self) -> Result<Dataset> {
        match self.dataset.source.as_str() {
            "synthetic" => {
                let mut spec = SynthSpec::preset(
                    self.dataset.preset.as_deref().unwrap_or_default(),
                    self.dataset.samples.unwrap_or(0),
                )?;
                if let Some(spread) = self.dataset.spread {
                    spec.spread = spread;
                }
                crate::data::synth_generate(&spec, crate::sim::subseed(self.seed, &[crate::sim::streams::DATA]))
            }
            "csv" => crate::data::load_csv(
                self.dataset.path.as_deref().unwrap(),
                self.dataset.label_column.as_deref().unwrap(),
                self.dataset.class_count.unwrap(),
            ),
            other => Err(Error::Config(format!("unknown dataset source '{other}'"))),
        }
    }

    /// Per-client hyperparameters with overrides applied.
    pub fn client_hyper(&self, client: &ClientConfig) -> HyperParams {
        HyperParams {
            learning_rate: client.learning_rate.unwrap_or(self.hyper.learning_rate),
            momentum: self.hyper.momentum,
            batch_size: client.batch_size.unwrap_or(self.hyper.batch_size),
            local_epochs: client.local_epochs.unwrap_or(self.hyper.local_epochs),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_toml() -> String {
        r#"
seed = 42
strategy = "bfl"

[dataset]
source = "synthetic"
preset = "gas-like"
samples = 500

[model]
architecture = "gas-pipeline"

[simulation]
rounds = 3

[[clients]]
id = 0
shard_fraction = 0.5

[[clients]]
id = 1
shard_fraction = 0.5
speed_delay_s = 2.0
"#
        .to_string()
    }

    #[test]
    fn parses_minimal_config() {
        let config: ExperimentConfig = toml::from_str(&base_toml()).unwrap();
        config.validate().unwrap();
        assert_eq!(config.seed, 42);
        assert_eq!(config.strategy, StrategyKind::Bfl);
        assert_eq!(config.hyper.learning_rate, 0.01);
        assert_eq!(config.hyper.momentum, 0.8);
        assert_eq!(config.he.scale, 1_000_000);
        assert!(config.he.enabled);
        assert_eq!(config.dataset.split, [0.8, 0.1, 0.1]);
    }

    #[test]
    fn missing_seed_is_rejected() {
        let toml_text = base_toml().replace("seed = 42\n", "");
        let err = toml::from_str::<ExperimentConfig>(&toml_text).unwrap_err();
        assert!(err.to_string().contains("seed"));
    }

    #[test]
    fn bad_split_names_the_field() {
        let mut config: ExperimentConfig = toml::from_str(&base_toml()).unwrap();
        config.dataset.split = [0.7, 0.1, 0.1];
        let err = config.validate().unwrap_err();
        assert!(matches!(&err, Error::Config(msg) if msg.contains("dataset.split")), "{err}");
    }

    #[test]
    fn duplicate_client_ids_rejected() {
        let mut config: ExperimentConfig = toml::from_str(&base_toml()).unwrap();
        config.clients[1].id = 0;
        assert!(config.validate().is_err());
    }

    #[test]
    fn small_keys_rejected_when_he_enabled() {
        let mut config: ExperimentConfig = toml::from_str(&base_toml()).unwrap();
        config.he.key_bits = 64;
        assert!(config.validate().is_err());
        config.he.enabled = false;
        config.validate().unwrap();
    }

    #[test]
    fn client_overrides_apply() {
        let mut config: ExperimentConfig = toml::from_str(&base_toml()).unwrap();
        config.clients[0].local_epochs = Some(3);
        let hyper = config.client_hyper(&config.clients[0]);
        assert_eq!(hyper.local_epochs, 3);
        assert_eq!(hyper.batch_size, 64);
    }

    #[test]
    fn config_roundtrips_through_toml() {
        let config: ExperimentConfig = toml::from_str(&base_toml()).unwrap();
        let text = config.to_toml().unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        back.validate().unwrap();
        assert_eq!(back.seed, config.seed);
        assert_eq!(back.clients.len(), config.clients.len());
    }
}
