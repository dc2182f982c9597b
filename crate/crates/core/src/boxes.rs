//! Box geometry: IoU, non-maximum suppression, delta encoding and
//! ground-truth matching for the two-stage detector.
//!
//! Coordinates are continuous `(x1, y1, x2, y2)` intervals; areas are
//! `(x2-x1)*(y2-y1)` with no +1 pixel convention.

use crate::error::{Error, Result};

/// Axis-aligned box with optional category id and confidence score.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub category: Option<usize>,
    pub score: Option<f64>,
}

impl BoundingBox {
    /// Construct a plain box; rejects degenerate extents.
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        if !(x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite()) {
            return Err(Error::Input(format!("non-finite box [{x1},{y1},{x2},{y2}]")));
        }
        if x1 >= x2 || y1 >= y2 {
            return Err(Error::Input(format!(
                "degenerate box [{x1},{y1},{x2},{y2}]: require x1 < x2 and y1 < y2"
            )));
        }
        Ok(BoundingBox { x1, y1, x2, y2, category: None, score: None })
    }

    pub fn with_category(mut self, category: usize) -> Self {
        self.category = Some(category);
        self
    }

    pub fn with_score(self, score: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::Input(format!("score {score} outside [0,1]")));
        }
        Ok(BoundingBox { score: Some(score), ..self })
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn cx(&self) -> f64 {
        0.5 * (self.x1 + self.x2)
    }

    pub fn cy(&self) -> f64 {
        0.5 * (self.y1 + self.y2)
    }
}

/// Dimensionless regression targets: center offsets normalized by anchor
/// size, log size ratios.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxDelta {
    pub tx: f64,
    pub ty: f64,
    pub tw: f64,
    pub th: f64,
}

/// Intersection-over-union; 0 for disjoint boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ix = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let iy = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = ix * iy;
    if inter <= 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// Greedy non-maximum suppression in descending score order, score ties
/// broken by lower original index. A box is removed when its IoU with an
/// already-kept box strictly exceeds `overlap_threshold`. Returns kept
/// indices in processing (descending-score) order.
pub fn nms(boxes: &[BoundingBox], overlap_threshold: f64) -> Result<Vec<usize>> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    for (i, b) in boxes.iter().enumerate() {
        if b.score.is_none() {
            return Err(Error::Input(format!("nms: box {i} has no score")));
        }
    }
    order.sort_by(|&a, &b| {
        let sa = boxes[a].score.unwrap();
        let sb = boxes[b].score.unwrap();
        sb.partial_cmp(&sa).unwrap().then(a.cmp(&b))
    });

    let mut kept: Vec<usize> = Vec::new();
    for &idx in &order {
        let suppressed = kept
            .iter()
            .any(|&k| iou(&boxes[k], &boxes[idx]) > overlap_threshold);
        if !suppressed {
            kept.push(idx);
        }
    }
    Ok(kept)
}

/// Regression targets taking `anchor` onto `target`.
pub fn encode_delta(anchor: &BoundingBox, target: &BoundingBox) -> BoxDelta {
    BoxDelta {
        tx: (target.cx() - anchor.cx()) / anchor.width(),
        ty: (target.cy() - anchor.cy()) / anchor.height(),
        tw: (target.width() / anchor.width()).ln(),
        th: (target.height() / anchor.height()).ln(),
    }
}

/// Exact inverse of [`encode_delta`].
pub fn decode_delta(anchor: &BoundingBox, delta: &BoxDelta) -> BoundingBox {
    let cx = anchor.cx() + delta.tx * anchor.width();
    let cy = anchor.cy() + delta.ty * anchor.height();
    let w = anchor.width() * delta.tw.exp();
    let h = anchor.height() * delta.th.exp();
    BoundingBox {
        x1: cx - 0.5 * w,
        y1: cy - 0.5 * h,
        x2: cx + 0.5 * w,
        y2: cy + 0.5 * h,
        category: None,
        score: None,
    }
}

/// Result of matching one candidate against the ground-truth set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Assignment {
    /// Index into the truth list.
    Matched(usize),
    Background,
    Ignore,
}

/// Assign candidates to truths by IoU.
///
/// A candidate matches its argmax-IoU truth when that IoU >= `pos_thr`, is
/// background when its max IoU < `neg_thr`, and is ignored in between.
/// Additionally every truth force-claims its single best-overlapping
/// candidate (ties to the lowest candidate index, truths processed in index
/// order) so that no object is left without a positive; claims require
/// strictly positive overlap.
pub fn match_to_ground_truth(
    candidates: &[BoundingBox],
    truths: &[BoundingBox],
    pos_thr: f64,
    neg_thr: f64,
) -> Result<Vec<Assignment>> {
    if pos_thr < neg_thr {
        return Err(Error::Input(format!(
            "pos_thr {pos_thr} must be >= neg_thr {neg_thr}"
        )));
    }
    if truths.is_empty() {
        return Ok(vec![Assignment::Background; candidates.len()]);
    }

    let mut out = Vec::with_capacity(candidates.len());
    for cand in candidates {
        let mut best = 0.0f64;
        let mut best_idx = 0usize;
        for (t, truth) in truths.iter().enumerate() {
            let v = iou(cand, truth);
            if v > best {
                best = v;
                best_idx = t;
            }
        }
        out.push(if best >= pos_thr {
            Assignment::Matched(best_idx)
        } else if best < neg_thr {
            Assignment::Background
        } else {
            Assignment::Ignore
        });
    }

    for (t, truth) in truths.iter().enumerate() {
        let mut best = 0.0f64;
        let mut best_cand: Option<usize> = None;
        for (c, cand) in candidates.iter().enumerate() {
            let v = iou(cand, truth);
            if v > best {
                best = v;
                best_cand = Some(c);
            }
        }
        if let Some(c) = best_cand {
            out[c] = Assignment::Matched(t);
        }
    }

    Ok(out)
}
