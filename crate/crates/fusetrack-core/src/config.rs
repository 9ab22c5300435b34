//! Run configuration: TOML on disk, embedded as JSON in checkpoints so a
//! loaded model can be audited against the file that trained it.

use serde::{Deserialize, Serialize};

use crate::fusion::{FusionMode, PeMode};
use crate::heads::LossMode;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("failed to read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub depth: usize,
    pub n_heads: usize,
    pub stride: usize,
    pub template_size: usize,
    pub search_size: usize,
    pub pe_mode: PeMode,
    pub fusion_mode: FusionMode,
    pub loss_mode: LossMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 16,
            depth: 2,
            n_heads: 2,
            stride: 16,
            template_size: 32,
            search_size: 64,
            pe_mode: PeMode::Untied,
            fusion_mode: FusionMode::Concat,
            loss_mode: LossMode::Varifocal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugMode {
    Strong,
    Weak,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub backbone_lr_multiplier: f64,
    pub weight_decay: f64,
    pub clip: f64,
    pub steps: usize,
    pub batch: usize,
    pub warmup_frac: f64,
    pub drop_frac: f64,
    pub seed: u64,
    pub aug: AugMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-4,
            backbone_lr_multiplier: 0.1,
            weight_decay: 1e-4,
            clip: 1.0,
            steps: 500,
            batch: 1,
            warmup_frac: 0.1,
            drop_frac: 0.7,
            seed: 7,
            aug: AugMode::Strong,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackConfig {
    /// Hanning blend weight in [0,1]; 0 disables the window.
    pub gamma: f64,
    pub template_area_factor: f64,
    pub search_area_factor: f64,
}

impl Default for TrackConfig {
    fn default() -> Self {
        TrackConfig {
            gamma: 0.49,
            template_area_factor: 2.0,
            search_area_factor: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Directory of image sequences; when empty, synthetic data is used.
    pub seq_dir: Option<String>,
    pub frame_width: usize,
    pub frame_height: usize,
    pub frames_per_sequence: usize,
    pub n_sequences: usize,
    pub distractors: usize,
    pub synth_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            seq_dir: None,
            frame_width: 128,
            frame_height: 128,
            frames_per_sequence: 24,
            n_sequences: 16,
            distractors: 2,
            synth_seed: 1234,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub track: TrackConfig,
    pub data: DataConfig,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self, ConfigError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let m = &self.model;
        let err = |msg: String| Err(ConfigError::Invalid(msg));
        if m.d_model == 0 || m.n_heads == 0 || m.stride == 0 {
            return err("d_model, n_heads and stride must be positive".into());
        }
        if m.d_model % m.n_heads != 0 {
            return err(format!(
                "d_model {} not divisible by n_heads {}",
                m.d_model, m.n_heads
            ));
        }
        if m.template_size % m.stride != 0 || m.search_size % m.stride != 0 {
            return err(format!(
                "crop sizes ({}, {}) must be multiples of stride {}",
                m.template_size, m.search_size, m.stride
            ));
        }
        if m.d_model % 4 != 0 {
            return err(format!(
                "d_model {} must be divisible by 4 for the 2-D sinusoid layout",
                m.d_model
            ));
        }
        let t = &self.train;
        if t.lr <= 0.0 || t.steps == 0 || t.batch == 0 {
            return err("lr, steps and batch must be positive".into());
        }
        if !(0.0..=1.0).contains(&t.warmup_frac) || !(0.0..=1.0).contains(&t.drop_frac) {
            return err("warmup_frac and drop_frac must lie in [0,1]".into());
        }
        if !(0.0..=1.0).contains(&self.track.gamma) {
            return err(format!("gamma {} outside [0,1]", self.track.gamma));
        }
        if self.track.template_area_factor <= 0.0 || self.track.search_area_factor <= 0.0 {
            return err("area factors must be positive".into());
        }
        let d = &self.data;
        if d.frame_width == 0 || d.frame_height == 0 || d.frames_per_sequence < 2 {
            return err("frames must be non-empty and sequences at least 2 frames".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(s)
            .map_err(|e| ConfigError::Invalid(format!("bad embedded config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_validates_and_round_trips() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let back = RunConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(cfg, back);
        let toml_text = toml::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_toml_str(&toml_text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::from_toml_str("[model]\nd_model = 16\nbogus = 1\n");
        assert!(matches!(err, Err(ConfigError::Parse(_))));
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let cfg = RunConfig::from_toml_str("[model]\nd_model = 32\nn_heads = 4\n").unwrap();
        assert_eq!(cfg.model.d_model, 32);
        assert_eq!(cfg.model.depth, 2);
        assert_eq!(cfg.train.lr, 5e-4);
    }

    #[test]
    fn invalid_values_rejected() {
        let mut cfg = RunConfig::default();
        cfg.model.d_model = 17;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.model.template_size = 33;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.track.gamma = 1.5;
        assert!(cfg.validate().is_err());
    }
}
