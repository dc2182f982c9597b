//! Experiment configuration: a versioned JSON document uniting dataset,
//! detector, trainer and evaluation settings. Unknown keys are rejected;
//! omitted keys take defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detector::DetectorConfig;
use crate::error::{Error, Result};
use crate::evalkit::EvalConfig;
use crate::norm::NormKind;
use crate::scenes::DatasetConfig;
use crate::trainer::TrainConfig;

pub const CONFIG_SCHEMA: &str = "ossod-experiment/v1";

/// Environment variable rebasing relative output/dataset paths.
pub const OUTPUT_ROOT_ENV: &str = "OSSOD_OUTPUT_ROOT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub schema: String,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub detector: DetectorConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema: CONFIG_SCHEMA.to_string(),
            seed: 7,
            output_dir: PathBuf::from("runs/default"),
            dataset: DatasetConfig::default(),
            detector: DetectorConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parse a JSON document, apply `key=value` overrides (dotted paths),
    /// validate the schema id, and resolve the output-root override.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("reading {}: {e}", path.display())))?;
        let mut value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("parsing {}: {e}", path.display())))?;
        for ov in overrides {
            apply_override(&mut value, ov)?;
        }
        let cfg: ExperimentConfig = serde_json::from_value(value)
            .map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg.resolve_roots())
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != CONFIG_SCHEMA {
            return Err(Error::Config(format!(
                "unsupported schema {:?} (expected {CONFIG_SCHEMA:?})",
                self.schema
            )));
        }
        self.dataset.validate()?;
        self.train.validate()?;
        self.effective_detector().validate()?;
        Ok(())
    }

    /// Detector configuration with the class count taken from the dataset
    /// vocabulary and the norm flavor from the `dbn` toggle.
    pub fn effective_detector(&self) -> DetectorConfig {
        DetectorConfig {
            num_known: self.dataset.known.len(),
            norm: if self.train.dbn { NormKind::DataSpecific } else { NormKind::Batch },
            image_size: self.dataset.image_size,
            ..self.detector.clone()
        }
    }

    /// Rebase relative paths under `OSSOD_OUTPUT_ROOT` when set.
    fn resolve_roots(mut self) -> Self {
        if let Ok(root) = std::env::var(OUTPUT_ROOT_ENV) {
            let root = PathBuf::from(root);
            if self.output_dir.is_relative() {
                self.output_dir = root.join(&self.output_dir);
            }
            if self.dataset.dir.is_relative() {
                self.dataset.dir = root.join(&self.dataset.dir);
            }
        }
        self
    }

    /// The config with machine-local paths cleared, so identical experiments
    /// in different directories serialize identically.
    pub fn portable(&self) -> Self {
        let mut cfg = self.clone();
        cfg.output_dir = PathBuf::new();
        cfg.dataset.dir = PathBuf::new();
        cfg
    }

    /// Canonical JSON echo stored in checkpoints and reports. Paths are
    /// cleared so that checkpoints of identical runs are byte-identical
    /// regardless of where they live.
    pub fn echo(&self) -> String {
        serde_json::to_string(&self.portable()).expect("config serialization")
    }

    /// The part of the config that determines the training trajectory:
    /// everything except paths, schedule length and logging cadence. Resuming
    /// with a different fingerprint would silently change the run, so it is
    /// checked.
    pub fn trajectory_fingerprint(&self) -> serde_json::Value {
        let portable = self.portable();
        let mut train = portable.train.clone();
        train.total_iterations = 0;
        train.log_every = 1;
        train.eval_every = 0;
        train.checkpoint_every = 0;
        serde_json::json!({
            "seed": portable.seed,
            "dataset": portable.dataset,
            "detector": portable.effective_detector(),
            "train": train,
        })
    }
}

/// Apply one `dotted.path=json_value` override onto a JSON document. Values
/// that fail to parse as JSON are taken as strings.
fn apply_override(doc: &mut serde_json::Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not key=value")))?;
    let value: serde_json::Value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut cursor = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(Error::Config(format!("override {spec:?} has an empty path segment")));
        }
        let obj = cursor
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override path {path:?} crosses a non-object")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cursor = obj
            .entry(part.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    unreachable!("override application always returns inside the loop")
}
