//! Synthetic open-scene benchmark: pools of shape scenes with
//! unknown-category contamination in the unlabeled/test pools and a
//! brightness/noise distribution shift between the labeled pool and the rest.

mod augment;
mod generate;
pub mod io;

pub use augment::{
    augment_pair, flip_box_horizontal, flip_horizontal, strong_augment, strong_augment_with,
    weak_augment, weak_augment_with, AugmentedPair, StrongAugConfig, WeakAugConfig,
};
pub use generate::generate_pools;

use serde::{Deserialize, Serialize};
use std::path::PathBuf;

use crate::boxes::BoundingBox;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Known categories are those the labeled pool exposes; unknown categories
/// appear only inside unlabeled/test imagery. Category ids are global:
/// `0..known.len()` for known, then the unknown ones.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryVocabulary {
    pub known: Vec<String>,
    pub unknown: Vec<String>,
}

impl CategoryVocabulary {
    pub fn validate(&self) -> Result<()> {
        if self.known.len() < 2 {
            return Err(Error::Config(format!(
                "need at least 2 known categories, got {}",
                self.known.len()
            )));
        }
        for u in &self.unknown {
            if self.known.contains(u) {
                return Err(Error::Config(format!(
                    "category {u:?} is both known and unknown"
                )));
            }
        }
        Ok(())
    }

    /// Number of known categories (the detector's class count).
    pub fn num_known(&self) -> usize {
        self.known.len()
    }

    pub fn num_total(&self) -> usize {
        self.known.len() + self.unknown.len()
    }

    pub fn is_known(&self, id: usize) -> bool {
        id < self.known.len()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        if id < self.known.len() {
            self.known.get(id).map(String::as_str)
        } else {
            self.unknown.get(id - self.known.len()).map(String::as_str)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolTag {
    Labeled,
    Unlabeled,
    Test,
}

/// One image plus its generation-time annotations. Unlabeled-pool annotations
/// are diagnostics only; the trainer never reads them. Test-pool annotations
/// are already filtered to known categories.
#[derive(Clone, Debug)]
pub struct Scene {
    /// `[H, W, 3]` intensities in [0,1], quantized to the 8-bit grid so that
    /// in-memory pools and PNG round trips are identical.
    pub image: Tensor<f32>,
    pub annotations: Vec<BoundingBox>,
    pub pool_tag: PoolTag,
}

#[derive(Clone, Debug)]
pub struct SamplePools {
    pub labeled: Vec<Scene>,
    pub unlabeled: Vec<Scene>,
    pub test: Vec<Scene>,
    pub vocab: CategoryVocabulary,
    pub config: DatasetConfig,
    pub seed: u64,
}

/// Generation parameters for the synthetic benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Where the rendered dataset lives on disk.
    pub dir: PathBuf,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub n_test: usize,
    pub known: Vec<String>,
    pub unknown: Vec<String>,
    /// Probability that an unlabeled/test scene carries unknown objects.
    pub unknown_rate: f64,
    pub image_size: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub max_unknown_objects: usize,
    pub object_size_min: f64,
    pub object_size_max: f64,
    /// Base background intensity of the labeled pool.
    pub labeled_brightness: f64,
    /// Added to the background intensity in the unlabeled/test pools.
    pub shift_brightness: f64,
    /// Gaussian pixel-noise sigma in the labeled pool.
    pub labeled_noise: f64,
    /// Noise multiplier in the unlabeled/test pools.
    pub noise_scale: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            dir: PathBuf::from("dataset"),
            n_labeled: 200,
            n_unlabeled: 2000,
            n_test: 200,
            known: vec!["circle".into(), "square".into(), "triangle".into()],
            unknown: vec!["cross".into(), "star".into(), "ring".into()],
            unknown_rate: 0.5,
            image_size: 64,
            min_objects: 1,
            max_objects: 3,
            max_unknown_objects: 2,
            object_size_min: 8.0,
            object_size_max: 24.0,
            labeled_brightness: 0.25,
            shift_brightness: 0.15,
            labeled_noise: 0.02,
            noise_scale: 2.0,
        }
    }
}

impl DatasetConfig {
    pub fn vocabulary(&self) -> CategoryVocabulary {
        CategoryVocabulary { known: self.known.clone(), unknown: self.unknown.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        self.vocabulary().validate()?;
        if !(0.0..=1.0).contains(&self.unknown_rate) {
            return Err(Error::Config(format!("unknown_rate {} outside [0,1]", self.unknown_rate)));
        }
        if self.image_size < 16 {
            return Err(Error::Config(format!("image_size {} too small", self.image_size)));
        }
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return Err(Error::Config(format!(
                "invalid object count range {}..={}",
                self.min_objects, self.max_objects
            )));
        }
        if self.object_size_min < 4.0
            || self.object_size_min > self.object_size_max
            || self.object_size_max >= self.image_size as f64
        {
            return Err(Error::Config(format!(
                "invalid object size range {}..{} for image size {}",
                self.object_size_min, self.object_size_max, self.image_size
            )));
        }
        if self.labeled_noise < 0.0 || self.noise_scale < 0.0 {
            return Err(Error::Config("negative noise parameters".into()));
        }
        Ok(())
    }
}

/// Object counts per category plus the unknown-contamination rate of a pool.
#[derive(Clone, Debug, Serialize)]
pub struct PoolStats {
    pub scenes: usize,
    pub objects_per_category: Vec<(String, usize)>,
    pub total_objects: usize,
    /// Fraction of scenes containing at least one unknown-category object.
    pub contamination_rate: f64,
}

pub fn pool_statistics(scenes: &[Scene], vocab: &CategoryVocabulary) -> PoolStats {
    let mut counts = vec![0usize; vocab.num_total()];
    let mut contaminated = 0usize;
    for scene in scenes {
        let mut has_unknown = false;
        for b in &scene.annotations {
            if let Some(c) = b.category {
                if c < counts.len() {
                    counts[c] += 1;
                }
                has_unknown |= !vocab.is_known(c);
            }
        }
        contaminated += usize::from(has_unknown);
    }
    let total = counts.iter().sum();
    PoolStats {
        scenes: scenes.len(),
        objects_per_category: counts
            .iter()
            .enumerate()
            .map(|(i, &c)| (vocab.name(i).unwrap_or("?").to_string(), c))
            .collect(),
        total_objects: total,
        contamination_rate: if scenes.is_empty() {
            0.0
        } else {
            contaminated as f64 / scenes.len() as f64
        },
    }
}
