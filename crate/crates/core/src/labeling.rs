//! Pseudo-object filtering and flexible-label construction, plus the
//! classical IoU-assignment route used when interactive teaching is toggled
//! off.
//!
//! A flexible label splits the (n+1)-way teacher prediction for a candidate
//! box into credible entries (set hard to 1 or 0) and uncertain entries (the
//! teacher's soft probability, kept verbatim). The vector is deliberately not
//! renormalized; the classification loss consumes it entry by entry.

use crate::boxes::{match_to_ground_truth, Assignment, BoundingBox};
use crate::detector::Detection;
use crate::error::{Error, Result};

/// A teacher detection promoted to a pseudo ground-truth object: box with
/// category and score, plus the full soft class vector behind it.
#[derive(Clone, Debug)]
pub struct PseudoObject {
    pub bbox: BoundingBox,
    pub probs: Vec<f64>,
}

/// Per-entry credibility of a flexible label.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Credibility {
    /// Entry forced to exactly 1.
    Positive,
    /// Entry forced to exactly 0.
    Negative,
    /// Teacher probability kept unchanged.
    Uncertain,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlexibleLabel {
    pub values: Vec<f64>,
    pub mask: Vec<Credibility>,
}

/// Keep detections with score >= sigma, ordered by descending score.
/// Detections must already be NMS-deduplicated (the detector guarantees it).
pub fn filter_pseudo_objects(detections: &[Detection], sigma: f64) -> Result<Vec<PseudoObject>> {
    if !(0.0 < sigma && sigma < 1.0) {
        return Err(Error::Config(format!("pseudo filter sigma {sigma} outside (0,1)")));
    }
    let mut kept: Vec<PseudoObject> = detections
        .iter()
        .filter(|d| d.bbox.score.unwrap_or(0.0) >= sigma)
        .map(|d| PseudoObject { bbox: d.bbox.clone(), probs: d.probs.clone() })
        .collect();
    kept.sort_by(|a, b| b.bbox.score.partial_cmp(&a.bbox.score).unwrap());
    Ok(kept)
}

/// Build a flexible label from a simplex vector: entries strictly above
/// `tau_up` become credible positives (1), entries strictly below `tau_low`
/// become credible negatives (0), the rest stay unchanged.
pub fn make_flexible_label(p: &[f64], tau_up: f64, tau_low: f64) -> Result<FlexibleLabel> {
    if !(0.0 < tau_low && tau_low < tau_up && tau_up < 1.0) {
        return Err(Error::Config(format!(
            "thresholds must satisfy 0 < tau_low < tau_up < 1, got ({tau_low}, {tau_up})"
        )));
    }
    let sum: f64 = p.iter().sum();
    if p.iter().any(|&v| v < 0.0) || (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Input(format!(
            "flexible label input must be on the simplex (sum {sum:.8})"
        )));
    }
    let mut values = Vec::with_capacity(p.len());
    let mut mask = Vec::with_capacity(p.len());
    for &v in p {
        if v > tau_up {
            values.push(1.0);
            mask.push(Credibility::Positive);
        } else if v < tau_low {
            values.push(0.0);
            mask.push(Credibility::Negative);
        } else {
            values.push(v);
            mask.push(Credibility::Uncertain);
        }
    }
    Ok(FlexibleLabel { values, mask })
}

/// Target flavor for the IoU-assignment route.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AssignMode {
    /// Matched candidates get the pseudo object's category one-hot.
    OneHot,
    /// Matched candidates get the teacher's soft vector for that pseudo
    /// object (the mainstream soft-pseudo-label baseline).
    Soft,
}

/// One candidate's classification target; weight 0 marks the ignore band.
#[derive(Clone, Debug)]
pub struct RoiTarget {
    pub values: Vec<f64>,
    pub weight: f64,
    pub assignment: Assignment,
}

/// Classical pseudo-label assignment: candidates matched to pseudo objects by
/// IoU (same matching rule as ground truth, including the force-claim).
/// Background candidates get the background one-hot; the ignore band gets
/// zero loss weight.
pub fn assign_by_iou(
    candidates: &[BoundingBox],
    pseudo_objects: &[PseudoObject],
    num_classes: usize,
    pos_thr: f64,
    neg_thr: f64,
    mode: AssignMode,
) -> Result<Vec<RoiTarget>> {
    let truths: Vec<BoundingBox> = pseudo_objects.iter().map(|p| p.bbox.clone()).collect();
    let assignments = match_to_ground_truth(candidates, &truths, pos_thr, neg_thr)?;
    let background = num_classes - 1;
    let one_hot = |c: usize| -> Vec<f64> {
        let mut v = vec![0.0; num_classes];
        v[c] = 1.0;
        v
    };
    Ok(assignments
        .into_iter()
        .map(|a| match a {
            Assignment::Matched(t) => {
                let values = match mode {
                    AssignMode::OneHot => {
                        one_hot(pseudo_objects[t].bbox.category.expect("pseudo category"))
                    }
                    AssignMode::Soft => pseudo_objects[t].probs.clone(),
                };
                RoiTarget { values, weight: 1.0, assignment: a }
            }
            Assignment::Background => {
                RoiTarget { values: one_hot(background), weight: 1.0, assignment: a }
            }
            Assignment::Ignore => {
                RoiTarget { values: one_hot(background), weight: 0.0, assignment: a }
            }
        })
        .collect())
}
