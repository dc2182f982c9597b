//! Desk-scale laboratory for open-scene semi-supervised object detection
//! (O-SSOD): a synthetic shape benchmark with unknown-category contamination
//! and cross-pool distribution shift, a miniature two-stage detector, a
//! teacher-student trainer with flexible labels and data-specific batch
//! normalization, and an evaluation kit with ablation and threshold-sweep
//! harnesses.

pub mod boxes;
pub mod config;
pub mod detector;
pub mod error;
pub mod evalkit;
pub mod graph;
pub mod labeling;
pub mod losses;
pub mod metrics;
pub mod norm;
pub mod ops;
pub mod rng;
pub mod scenes;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
