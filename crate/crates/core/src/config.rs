//! Experiment configuration: one TOML document fully determines a run.
//!
//! ```toml
//! seed = 7
//!
//! [data]
//! source = "synthetic"          # or "manifest"
//! mode = "mixed"
//! classes = 4
//! shape = [1, 20, 16, 16]
//! noise_std = 0.3
//! train_per_class = 50
//! validation_per_class = 20
//! test_per_class = 50
//! seed = 11
//!
//! [tubelet]
//! frames = 5
//! patch = 4
//!
//! [model]
//! dim = 64
//! layers = 3
//! heads = 4
//!
//! [pretrain]
//! enabled = true
//! mask_ratio = 0.5
//! beta = 1.0
//!
//! [finetune]
//! epochs = 20
//! ```
//!
//! Omitted fields take the defaults of the corresponding `Default` impls.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{SyntheticMode, SyntheticTaskSpec, TensorShape, DEFAULT_SAMPLE_RATE_HZ};
use crate::embedding::EmbeddingToggles;
use crate::encoder::EncoderConfig;
use crate::error::{Result, StatError};
use crate::model::ModelConfig;
use crate::tokenizer::{TubeletConfig, TubeletGrid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSource {
    pub manifest: PathBuf,
    /// Directory sample paths are relative to; defaults to the manifest's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root: Option<PathBuf>,
    pub shape: TensorShape,
    pub class_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_per_class: Option<usize>,
    #[serde(default = "default_rate")]
    pub sample_rate_hz: f64,
}

fn default_rate() -> f64 {
    DEFAULT_SAMPLE_RATE_HZ
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum DataSource {
    Synthetic(SyntheticTaskSpec),
    Manifest(ManifestSource),
}

impl DataSource {
    pub fn shape(&self) -> TensorShape {
        match self {
            DataSource::Synthetic(s) => s.shape,
            DataSource::Manifest(m) => m.shape,
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            DataSource::Synthetic(s) => s.classes,
            DataSource::Manifest(m) => m.class_names.len(),
        }
    }
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SyntheticTaskSpec {
            noise_std: 0.3,
            train_per_class: 50,
            validation_per_class: 20,
            test_per_class: 50,
            seed: 11,
            ..SyntheticTaskSpec::new(SyntheticMode::Mixed, 4, TensorShape::new(1, 20, 16, 16))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    pub use_spatial: bool,
    pub use_temporal: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { dim: 64, layers: 3, heads: 4, ff_dim: 128, dropout: 0.1, use_spatial: true, use_temporal: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSection {
    pub enabled: bool,
    pub mask_ratio: f64,
    pub beta: f64,
    pub n_comp: usize,
    pub temporal_task: bool,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
}

impl Default for PretrainSection {
    fn default() -> Self {
        PretrainSection {
            enabled: true,
            mask_ratio: 0.5,
            beta: 1.0,
            n_comp: 30,
            temporal_task: true,
            epochs: 20,
            lr: 1e-3,
            batch_size: 16,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSection {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    /// Fine-tune on a class-stratified subset of this many training samples.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labeled_samples: Option<usize>,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        FinetuneSection { epochs: 20, lr: 1e-3, batch_size: 16, weight_decay: 1e-4, labeled_samples: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[derive(Default)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub data: DataSource,
    #[serde(default)]
    pub tubelet: TubeletConfig,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub pretrain: PretrainSection,
    #[serde(default)]
    pub finetune: FinetuneSection,
}

fn check(ok: bool, path: &str, reason: impl Into<String>) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(StatError::config(path, reason))
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let path = e.span().map(|s| format!("byte {}..{}", s.start, s.end)).unwrap_or_default();
            StatError::config(path, e.message().to_string())
        })?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => StatError::MissingFile(path.to_path_buf()),
            _ => StatError::Io(e),
        })?;
        let mut config = Self::parse(&text)?;
        // Relative manifest paths resolve against the config file.
        if let DataSource::Manifest(m) = &mut config.data {
            if let Some(dir) = path.parent() {
                if m.manifest.is_relative() {
                    m.manifest = dir.join(&m.manifest);
                }
                if let Some(root) = &mut m.root {
                    if root.is_relative() {
                        *root = dir.join(&*root);
                    }
                }
            }
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Check every field, reporting the first offending one by path.
    pub fn validate(&self) -> Result<()> {
        match &self.data {
            DataSource::Synthetic(spec) => {
                spec.validate().map_err(|e| StatError::config("data", e.to_string()))?;
            }
            DataSource::Manifest(m) => {
                check(m.manifest.exists(), "data.manifest", format!("{} does not exist", m.manifest.display()))?;
                if let Some(root) = &m.root {
                    check(root.is_dir(), "data.root", format!("{} is not a directory", root.display()))?;
                }
                check(m.class_names.len() >= 2, "data.class_names", "need at least 2 classes")?;
                m.shape.validate().map_err(|e| StatError::config("data.shape", e.to_string()))?;
            }
        }
        TubeletGrid::new(self.data.shape(), self.tubelet).map_err(|e| StatError::config("tubelet", e.to_string()))?;
        let m = &self.model;
        check(m.dim > 0 && m.dim.is_multiple_of(2), "model.dim", "must be positive and even")?;
        check(m.heads > 0 && m.dim.is_multiple_of(m.heads), "model.heads", "must divide model.dim")?;
        check(m.layers >= 1, "model.layers", "must be at least 1")?;
        check(m.ff_dim >= 1, "model.ff_dim", "must be at least 1")?;
        check((0.0..1.0).contains(&m.dropout), "model.dropout", "must lie in [0, 1)")?;
        let p = &self.pretrain;
        check((0.0..1.0).contains(&p.mask_ratio), "pretrain.mask_ratio", "must lie in [0, 1)")?;
        check(p.beta.is_finite() && p.beta >= 0.0, "pretrain.beta", "must be nonnegative")?;
        check(p.n_comp >= 1, "pretrain.n_comp", "must be at least 1")?;
        check(p.lr > 0.0, "pretrain.lr", "must be positive")?;
        check(p.batch_size >= 1, "pretrain.batch_size", "must be at least 1")?;
        check(p.weight_decay >= 0.0, "pretrain.weight_decay", "must be nonnegative")?;
        if p.enabled {
            let grid = TubeletGrid::new(self.data.shape(), self.tubelet)?;
            let masked = (p.mask_ratio * grid.n_space as f64).round() as usize;
            check(masked >= 1, "pretrain.mask_ratio", "masks no spatial group on this grid")?;
            if p.temporal_task {
                check(
                    grid.n_temp >= 2 && masked < grid.n_space,
                    "pretrain.temporal_task",
                    "needs unmasked tubelets in two frame windows",
                )?;
            }
        }
        let f = &self.finetune;
        check(f.lr > 0.0, "finetune.lr", "must be positive")?;
        check(f.batch_size >= 1, "finetune.batch_size", "must be at least 1")?;
        check(f.weight_decay >= 0.0, "finetune.weight_decay", "must be nonnegative")?;
        if let Some(n) = f.labeled_samples {
            check(n >= 1, "finetune.labeled_samples", "must be at least 1")?;
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            shape: self.data.shape(),
            tubelet: self.tubelet,
            classes: self.data.classes(),
            encoder: EncoderConfig {
                layers: self.model.layers,
                dim: self.model.dim,
                heads: self.model.heads,
                ff_dim: self.model.ff_dim,
                dropout: self.model.dropout,
                seed: self.seed,
            },
            toggles: EmbeddingToggles { use_spatial: self.model.use_spatial, use_temporal: self.model.use_temporal },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let text = c.to_toml();
        assert_eq!(ExperimentConfig::parse(&text).unwrap(), c);
    }

    #[test]
    fn empty_document_takes_defaults() {
        assert_eq!(ExperimentConfig::parse("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn field_paths_in_errors() {
        let mut c = ExperimentConfig::default();
        c.model.heads = 3;
        assert_eq!(c.validate().unwrap_err().to_string(), "invalid config field model.heads: must divide model.dim");
        let mut c = ExperimentConfig::default();
        c.pretrain.mask_ratio = 1.5;
        assert!(c.validate().unwrap_err().to_string().contains("pretrain.mask_ratio"));
        let mut c = ExperimentConfig::default();
        c.tubelet.frames = 3;
        assert!(c.validate().unwrap_err().to_string().contains("tubelet"));
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(ExperimentConfig::parse("[model]\nwidth = 3\n").is_err());
    }

    #[test]
    fn manifest_source_parses() {
        let text = r#"
            [data]
            source = "manifest"
            manifest = "m.csv"
            shape = [1, 45, 32, 32]
            class_names = ["walk", "sit"]
        "#;
        let c = ExperimentConfig::parse(text).unwrap();
        assert_eq!(c.data.classes(), 2);
        assert_eq!(c.data.shape(), TensorShape::new(1, 45, 32, 32));
    }
}
