//! The declarative run configuration: one TOML document with sections
//! {data, features, ser, gan, train, convert, eval}. Every field has a
//! default; unknown keys are rejected. The only environment override is the
//! cache directory (`STYLEVC_CACHE_DIR`).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{fnv1a, SplitSizes};
use crate::error::{Error, Result};
use crate::eval::McdOptions;
use crate::features::MelConfig;
use crate::ser::train::SerTrainConfig;
use crate::ser::SerConfig;
use crate::stargan::{GanConfig, TrainOptions};

pub const CACHE_DIR_ENV: &str = "STYLEVC_CACHE_DIR";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub manifest: PathBuf,
    /// Base directory for relative audio paths in the manifest.
    pub audio_dir: PathBuf,
    pub emotions: Vec<String>,
    pub split_sizes: [usize; 3],
    /// Scale split sizes proportionally for small cells.
    pub scale_splits: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            manifest: "manifest.tsv".into(),
            audio_dir: ".".into(),
            emotions: vec!["neutral".into(), "happy".into(), "sad".into()],
            split_sizes: [300, 20, 30],
            scale_splits: true,
        }
    }
}

impl DataConfig {
    pub fn split_sizes(&self) -> SplitSizes {
        SplitSizes {
            train: self.split_sizes[0],
            eval: self.split_sizes[1],
            reference: self.split_sizes[2],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct FeaturesConfig {
    pub sample_rate_hz: u32,
    pub frame_shift_ms: f64,
    pub mcep_dim: usize,
    /// "builtin" or "external".
    pub backend: String,
    pub external_analyze_cmd: String,
    pub external_synthesize_cmd: String,
    pub mel: MelConfig,
    /// "speaker-emotion" (default) or "speaker".
    pub f0_stats_scope: String,
}

impl Default for FeaturesConfig {
    fn default() -> Self {
        FeaturesConfig {
            sample_rate_hz: 16000,
            frame_shift_ms: 5.0,
            mcep_dim: 36,
            backend: "builtin".into(),
            external_analyze_cmd: String::new(),
            external_synthesize_cmd: String::new(),
            mel: MelConfig::default(),
            f0_stats_scope: "speaker-emotion".into(),
        }
    }
}

/// SER architecture and training knobs in one section.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SerSection {
    pub conv_channels: Vec<usize>,
    pub freq_pool: usize,
    pub lstm_hidden: usize,
    pub attention_dim: usize,
    pub min_frames: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub crop_frames: usize,
    pub early_stop_patience: usize,
}

impl Default for SerSection {
    fn default() -> Self {
        let arch = SerConfig::default();
        let train = SerTrainConfig::default();
        SerSection {
            conv_channels: arch.conv_channels,
            freq_pool: arch.freq_pool,
            lstm_hidden: arch.lstm_hidden,
            attention_dim: arch.attention_dim,
            min_frames: arch.min_frames,
            batch_size: train.batch_size,
            steps: train.steps,
            learning_rate: train.learning_rate,
            crop_frames: train.crop_frames,
            early_stop_patience: train.early_stop_patience,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ConvertConfig {
    pub window_frames: usize,
    pub window_hop: usize,
    pub allow_cross_emotion: bool,
}

impl Default for ConvertConfig {
    fn default() -> Self {
        ConvertConfig {
            window_frames: 128,
            window_hop: 64,
            allow_cross_emotion: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub mcd: McdOptions,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub cache_dir: PathBuf,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub features: FeaturesConfig,
    pub ser: SerSection,
    pub gan: GanConfig,
    pub train: TrainOptions,
    pub convert: ConvertConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 17,
            cache_dir: "cache".into(),
            out_dir: "out".into(),
            data: DataConfig::default(),
            features: FeaturesConfig::default(),
            ser: SerSection::default(),
            gan: GanConfig::default(),
            train: TrainOptions::default(),
            convert: ConvertConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.emotions.len() < 2 {
            return Err(Error::Config("need at least two emotions".into()));
        }
        match self.features.backend.as_str() {
            "builtin" | "external" => {}
            other => {
                return Err(Error::Config(format!(
                    "unknown vocoder backend {other:?} (want builtin or external)"
                )))
            }
        }
        match self.features.f0_stats_scope.as_str() {
            "speaker-emotion" | "speaker" => {}
            other => {
                return Err(Error::Config(format!(
                    "unknown f0_stats_scope {other:?} (want speaker-emotion or speaker)"
                )))
            }
        }
        Ok(())
    }

    /// Cache directory with the environment override applied.
    pub fn effective_cache_dir(&self) -> PathBuf {
        match std::env::var_os(CACHE_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.cache_dir.clone(),
        }
    }

    pub fn ser_arch(&self) -> SerConfig {
        SerConfig {
            conv_channels: self.ser.conv_channels.clone(),
            freq_pool: self.ser.freq_pool,
            lstm_hidden: self.ser.lstm_hidden,
            attention_dim: self.ser.attention_dim,
            style_dim: crate::ser::STYLE_DIM,
            n_emotions: self.data.emotions.len(),
            mel_bins: self.features.mel.mel_bins,
            min_frames: self.ser.min_frames,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }

    pub fn ser_train(&self) -> SerTrainConfig {
        SerTrainConfig {
            batch_size: self.ser.batch_size,
            steps: self.ser.steps,
            learning_rate: self.ser.learning_rate,
            crop_frames: self.ser.crop_frames,
            early_stop_patience: self.ser.early_stop_patience,
            seed: self.seed ^ fnv1a("ser"),
        }
    }

    /// GAN architecture with the speaker count resolved from the data.
    pub fn gan_config(&self, n_speakers: usize) -> GanConfig {
        GanConfig {
            n_speakers,
            ..self.gan.clone()
        }
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            seed: self.seed ^ fnv1a("train"),
            ..self.train.clone()
        }
    }
}
