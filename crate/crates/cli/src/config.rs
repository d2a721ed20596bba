//! Run configuration: a TOML file with `[model]`, `[stft]`, `[simulation]`,
//! `[training]`, `[objective]`, `[data]` and `[adapters]` sections. Unknown
//! keys are rejected. Command-line flags override file values; every run
//! echoes the fully resolved configuration and its hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::Digest;

use bsrnn_core::data::SimulationConfig;
use bsrnn_core::dsp::StftConfig;
use bsrnn_core::model::ModelConfig;
use bsrnn_core::trainer::{TrainConfig, TrainPhase};
use bsrnn_core::{Error, Result};

/// Environment variable consulted when `--config` is not given.
pub const CONFIG_ENV: &str = "BSRNN_CONFIG";
/// Fallback config file name in the working directory.
pub const CONFIG_DEFAULT: &str = "bsrnn.toml";

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub stft: StftSection,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub objective: ObjectiveSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub adapters: AdapterSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub sample_rate: u32,
    pub n_feat: usize,
    pub num_blocks: usize,
    pub lstm_hidden: usize,
    pub mlp_hidden: usize,
    pub causal: bool,
    pub personalized: bool,
    pub embed_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band_edges: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_band: Option<usize>,
    #[serde(default)]
    pub init_seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::full_band_48k(true, false);
        ModelSection {
            sample_rate: m.sample_rate,
            n_feat: m.n_feat,
            num_blocks: m.num_blocks,
            lstm_hidden: m.lstm_hidden,
            mlp_hidden: m.mlp_hidden,
            causal: m.causal,
            personalized: m.personalized,
            embed_dim: m.embed_dim,
            band_edges: None,
            split_band: None,
            init_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StftSection {
    pub window_ms: f64,
    pub hop_ms: f64,
}

impl Default for StftSection {
    fn default() -> Self {
        StftSection {
            window_ms: 20.0,
            hop_ms: 10.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub snr_db: [f64; 2],
    pub sir_db: [f64; 2],
    pub rir_prob: f64,
    pub mix_proportions: [f64; 3],
    pub segment_s: f64,
    pub seed: u64,
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            snr_db: [-5.0, 20.0],
            sir_db: [-5.0, 20.0],
            rir_prob: 0.2,
            mix_proportions: [0.5, 0.3, 0.2],
            segment_s: 6.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub phase: String,
    pub lr0: f64,
    pub lr_decay: f64,
    pub lr_decay_every: u64,
    pub clip_norm: f64,
    pub max_iters: u64,
    pub early_stop_window: u64,
    pub batch_size: usize,
    pub validation_every: u64,
    pub validation_examples: usize,
    pub seed: u64,
    pub single_resolution_finetune: bool,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainConfig::pretrain_defaults();
        TrainingSection {
            phase: "pretrain_mr".into(),
            lr0: t.lr0,
            lr_decay: t.lr_decay,
            lr_decay_every: t.lr_decay_every,
            clip_norm: t.clip_norm,
            max_iters: t.max_iters,
            early_stop_window: t.early_stop_window,
            batch_size: t.batch_size,
            validation_every: t.validation_every,
            validation_examples: t.validation_examples,
            seed: t.seed,
            single_resolution_finetune: t.single_resolution_finetune,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSection {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for ObjectiveSection {
    fn default() -> Self {
        ObjectiveSection {
            lambda1: 0.5,
            lambda2: 0.5,
            lambda3: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub catalog: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct AdapterSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pesq_command: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pesq_pattern: Option<String>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Resolution order: explicit `--config`, then `$BSRNN_CONFIG`, then
    /// `./bsrnn.toml`, then built-in defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self> {
        if let Some(path) = explicit {
            if !path.exists() {
                return Err(Error::Usage(format!(
                    "config file {} does not exist",
                    path.display()
                )));
            }
            return Self::load(path);
        }
        if let Ok(env_path) = std::env::var(CONFIG_ENV) {
            return Self::load(Path::new(&env_path));
        }
        let default = Path::new(CONFIG_DEFAULT);
        if default.exists() {
            return Self::load(default);
        }
        Ok(Self::default())
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let stft = StftConfig::new(
            self.model.sample_rate,
            self.stft.window_ms,
            self.stft.hop_ms,
        )?;
        let cfg = ModelConfig {
            sample_rate: self.model.sample_rate,
            n_feat: self.model.n_feat,
            num_blocks: self.model.num_blocks,
            lstm_hidden: self.model.lstm_hidden,
            mlp_hidden: self.model.mlp_hidden,
            causal: self.model.causal,
            personalized: self.model.personalized,
            embed_dim: self.model.embed_dim,
            stft,
            band_edges: self.model.band_edges.clone(),
            split_band: self.model.split_band,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn simulation_config(&self) -> Result<SimulationConfig> {
        let cfg = SimulationConfig {
            snr_db: (self.simulation.snr_db[0], self.simulation.snr_db[1]),
            sir_db: (self.simulation.sir_db[0], self.simulation.sir_db[1]),
            rir_prob: self.simulation.rir_prob,
            mix_proportions: (
                self.simulation.mix_proportions[0],
                self.simulation.mix_proportions[1],
                self.simulation.mix_proportions[2],
            ),
            segment_s: self.simulation.segment_s,
            seed: self.simulation.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let phase = match self.training.phase.as_str() {
            "pretrain_mr" => TrainPhase::PretrainMr,
            "finetune_mgd" => TrainPhase::FinetuneMgd,
            "finetune_mrsd" => TrainPhase::FinetuneMrsd,
            other => {
                return Err(Error::Usage(format!(
                    "unknown training phase {other:?} (expected pretrain_mr, finetune_mgd or finetune_mrsd)"
                )))
            }
        };
        let cfg = TrainConfig {
            phase,
            lr0: self.training.lr0,
            lr_decay: self.training.lr_decay,
            lr_decay_every: self.training.lr_decay_every,
            clip_norm: self.training.clip_norm,
            max_iters: self.training.max_iters,
            early_stop_window: self.training.early_stop_window,
            batch_size: self.training.batch_size,
            validation_every: self.training.validation_every,
            validation_examples: self.training.validation_examples,
            seed: self.training.seed,
            single_resolution_finetune: self.training.single_resolution_finetune,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Serialized form plus its SHA-256, echoed by every command.
    pub fn echo(&self) -> Result<(String, String)> {
        let text =
            toml::to_string_pretty(self).map_err(|e| Error::Config(format!("serialize: {e}")))?;
        let hash = sha2::Sha256::digest(text.as_bytes());
        let hex: String = hash.iter().map(|b| format!("{b:02x}")).collect();
        Ok((text, hex))
    }
}
