//! TOML run configuration.

use std::path::{Path, PathBuf};

use cxr_forge::data::{AugmentPolicy, Split};
use cxr_forge::model::{default_classes, preset, LayerSpec};
use cxr_forge::train::{OptimizerSpec, ScheduleSpec};
use serde::{Deserialize, Serialize};

use crate::Failure;

fn default_image_size() -> usize {
    80
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/latest")
}

fn default_smoothing() -> f64 {
    0.1
}

fn default_validation() -> Option<Split> {
    Some(Split::Test)
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset_root: PathBuf,
    #[serde(default = "default_classes")]
    pub classes: Vec<String>,
    #[serde(default = "default_image_size")]
    pub image_size: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub model: ModelConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub augment: AugmentPolicy,
}

/// Either a named preset or an explicit layer list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<LayerSpec>>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            preset: Some("paper-default".into()),
            layers: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassWeights {
    /// `"balanced"` (inverse frequency) or `"none"`.
    Named(String),
    Explicit(Vec<f64>),
}

impl Default for ClassWeights {
    fn default() -> Self {
        ClassWeights::Named("balanced".into())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default = "default_smoothing")]
    pub smoothing: f64,
    #[serde(default)]
    pub class_weights: ClassWeights,
    #[serde(default)]
    pub optimizer: OptimizerSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleSpec>,
    /// Apply the `[augment]` policy to training batches.
    #[serde(default = "yes")]
    pub augment: bool,
    /// Split evaluated after every epoch; `"none"` disables it.
    #[serde(default = "default_validation", with = "split_or_none")]
    pub validation_split: Option<Split>,
}

mod split_or_none {
    use cxr_forge::data::Split;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Split>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(v.map_or("none", |x| x.as_str()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Split>, D::Error> {
        let s = String::deserialize(d)?;
        match s.as_str() {
            "none" => Ok(None),
            other => other.parse().map(Some).map_err(serde::de::Error::custom),
        }
    }
}

fn bad(key: &str, reason: impl std::fmt::Display) -> Failure {
    Failure::config(format!("invalid config key `{key}`: {reason}"))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
        if cfg.dataset_root.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.dataset_root = dir.join(&cfg.dataset_root);
            }
        }
        Ok(cfg)
    }

    /// Checks every key, reporting the first offending one.
    pub fn validate(&self) -> Result<(), Failure> {
        if self.classes.is_empty() {
            return Err(bad("classes", "must not be empty"));
        }
        for (i, c) in self.classes.iter().enumerate() {
            if self.classes[..i].contains(c) {
                return Err(bad("classes", format!("duplicate class `{c}`")));
            }
        }
        if self.image_size == 0 {
            return Err(bad("image_size", "must be positive"));
        }
        if !self.dataset_root.is_dir() {
            return Err(bad(
                "dataset_root",
                format!("{} is not a directory", self.dataset_root.display()),
            ));
        }
        match (&self.model.preset, &self.model.layers) {
            (Some(_), Some(_)) => return Err(bad("model", "set either `preset` or `layers`, not both")),
            (None, None) => return Err(bad("model", "needs `preset` or `layers`")),
            (Some(name), None) if preset(name, self.classes.len()).is_none() => {
                return Err(bad("model.preset", format!("unknown preset `{name}`")))
            }
            _ => {}
        }
        let t = &self.train;
        if t.batch_size == 0 {
            return Err(bad("train.batch_size", "must be positive"));
        }
        if !(t.learning_rate.is_finite() && t.learning_rate > 0.0) {
            return Err(bad("train.learning_rate", "must be positive"));
        }
        if !(0.0..1.0).contains(&t.smoothing) {
            return Err(bad("train.smoothing", "must be in [0, 1)"));
        }
        match &t.class_weights {
            ClassWeights::Named(n) if n != "balanced" && n != "none" => {
                return Err(bad("train.class_weights", format!("expected \"balanced\", \"none\" or a list, got `{n}`")))
            }
            ClassWeights::Explicit(w) if w.len() != self.classes.len() => {
                return Err(bad(
                    "train.class_weights",
                    format!("{} weights for {} classes", w.len(), self.classes.len()),
                ))
            }
            ClassWeights::Explicit(w) if w.iter().any(|&x| !(x.is_finite() && x > 0.0)) => {
                return Err(bad("train.class_weights", "weights must be positive"))
            }
            _ => {}
        }
        t.optimizer.validate().map_err(|e| bad("train.optimizer", e))?;
        if let Some(s) = &t.schedule {
            s.validate().map_err(|e| bad("train.schedule", e))?;
            if s.peak_lr != t.learning_rate {
                return Err(bad("train.schedule.peak_lr", "must equal train.learning_rate"));
            }
        }
        self.augment.validate().map_err(|e| bad("augment", e))?;
        Ok(())
    }

    pub fn layers(&self) -> Vec<LayerSpec> {
        match (&self.model.preset, &self.model.layers) {
            (_, Some(layers)) => layers.clone(),
            (Some(name), None) => preset(name, self.classes.len()).expect("validated preset"),
            (None, None) => unreachable!("validated model config"),
        }
    }

    pub fn to_toml(&self) -> Result<String, Failure> {
        toml::to_string(self).map_err(|e| Failure::config(format!("cannot serialize config: {e}")))
    }
}
