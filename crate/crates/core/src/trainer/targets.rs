//! Assembly of per-anchor and per-box loss targets from matching decisions.
//! Everything here is constant with respect to the tape: boxes, matches and
//! targets are plan data, not differentiable quantities.

use crate::boxes::{encode_delta, match_to_ground_truth, Assignment, BoundingBox};
use crate::detector::Proposal;
use crate::error::Result;
use crate::losses::{RoiClsTargets, RoiRegTargets, RpnTargets};
use crate::ops::RoiWindow;
use crate::tensor::{Scalar, Tensor};

/// Build RPN classification/regression targets for a batch.
///
/// `skip_empty` realizes the unsupervised rule: an image whose pseudo set is
/// empty contributes no anchors at all (instead of flooding the loss with
/// background). Supervised batches pass `false`, where an empty ground-truth
/// list legitimately means all-background.
pub fn build_rpn_targets<T: Scalar>(
    anchors: &[BoundingBox],
    truths_per_image: &[Vec<BoundingBox>],
    num_anchor_sizes: usize,
    feature_size: usize,
    pos_thr: f64,
    neg_thr: f64,
    skip_empty: bool,
) -> Result<RpnTargets<T>> {
    let n = truths_per_image.len();
    let per_image = anchors.len();
    debug_assert_eq!(per_image, feature_size * feature_size * num_anchor_sizes);

    let mut obj_labels = Tensor::zeros(&[n, feature_size, feature_size, num_anchor_sizes]);
    let mut obj_weights = Tensor::zeros(&[n, feature_size, feature_size, num_anchor_sizes]);
    let mut reg_targets = Tensor::zeros(&[n, feature_size, feature_size, 4 * num_anchor_sizes]);
    let mut reg_weights = Tensor::zeros(&[n, feature_size, feature_size, 4 * num_anchor_sizes]);
    let mut obj_count = 0usize;
    let mut reg_count = 0usize;

    for (img, truths) in truths_per_image.iter().enumerate() {
        if skip_empty && truths.is_empty() {
            continue;
        }
        let assignments = match_to_ground_truth(anchors, truths, pos_thr, neg_thr)?;
        for (ai, assignment) in assignments.iter().enumerate() {
            let flat = img * per_image + ai;
            match assignment {
                Assignment::Matched(t) => {
                    obj_labels.data_mut()[flat] = T::one();
                    obj_weights.data_mut()[flat] = T::one();
                    obj_count += 1;
                    let d = encode_delta(&anchors[ai], &truths[*t]);
                    let cell = ai / num_anchor_sizes;
                    let a = ai % num_anchor_sizes;
                    let base = (img * feature_size * feature_size + cell) * 4 * num_anchor_sizes
                        + 4 * a;
                    for (off, v) in [d.tx, d.ty, d.tw, d.th].into_iter().enumerate() {
                        reg_targets.data_mut()[base + off] = T::from_f64(v);
                        reg_weights.data_mut()[base + off] = T::one();
                    }
                    reg_count += 1;
                }
                Assignment::Background => {
                    obj_weights.data_mut()[flat] = T::one();
                    obj_count += 1;
                }
                Assignment::Ignore => {}
            }
        }
    }

    Ok(RpnTargets {
        obj_labels,
        obj_weights,
        obj_count,
        reg_targets,
        reg_weights,
        reg_count,
    })
}

/// Flatten per-image proposals into ROI windows for the crop op.
pub fn proposals_to_windows(proposals: &[Vec<Proposal>]) -> Vec<RoiWindow> {
    let mut out = Vec::new();
    for (img, props) in proposals.iter().enumerate() {
        for p in props {
            out.push(RoiWindow {
                image_index: img,
                x1: p.bbox.x1,
                y1: p.bbox.y1,
                x2: p.bbox.x2,
                y2: p.bbox.y2,
            });
        }
    }
    out
}

/// Supervised ROI targets: hard one-hot categories for matched proposals,
/// background one-hot for negatives, zero weight for the ignore band, and
/// encoded box deltas for the positives.
pub fn build_supervised_roi_targets<T: Scalar>(
    proposals: &[Vec<Proposal>],
    truths_per_image: &[Vec<BoundingBox>],
    num_classes: usize,
    pos_thr: f64,
    neg_thr: f64,
) -> Result<(RoiClsTargets<T>, RoiRegTargets<T>)> {
    let total: usize = proposals.iter().map(Vec::len).sum();
    let background = num_classes - 1;
    let mut cls_targets = Tensor::zeros(&[total.max(1), num_classes]);
    let mut cls_weights = vec![T::zero(); total.max(1)];
    let mut reg_targets = Tensor::zeros(&[total.max(1), 4]);
    let mut reg_weights = Tensor::zeros(&[total.max(1), 4]);
    let mut cls_count = 0usize;
    let mut reg_count = 0usize;

    let mut row = 0usize;
    for (img, props) in proposals.iter().enumerate() {
        if props.is_empty() {
            continue;
        }
        let candidates: Vec<BoundingBox> = props.iter().map(|p| p.bbox.clone()).collect();
        let truths = &truths_per_image[img];
        let assignments = match_to_ground_truth(&candidates, truths, pos_thr, neg_thr)?;
        for (p, assignment) in props.iter().zip(assignments.iter()) {
            match assignment {
                Assignment::Matched(t) => {
                    let category = truths[*t].category.expect("ground truth category");
                    cls_targets.data_mut()[row * num_classes + category] = T::one();
                    cls_weights[row] = T::one();
                    cls_count += 1;
                    let d = encode_delta(&p.bbox, &truths[*t]);
                    for (off, v) in [d.tx, d.ty, d.tw, d.th].into_iter().enumerate() {
                        reg_targets.data_mut()[row * 4 + off] = T::from_f64(v);
                        reg_weights.data_mut()[row * 4 + off] = T::one();
                    }
                    reg_count += 1;
                }
                Assignment::Background => {
                    cls_targets.data_mut()[row * num_classes + background] = T::one();
                    cls_weights[row] = T::one();
                    cls_count += 1;
                }
                Assignment::Ignore => {}
            }
            row += 1;
        }
    }

    Ok((
        RoiClsTargets { targets: cls_targets, weights: cls_weights, count: cls_count },
        RoiRegTargets { targets: reg_targets, weights: reg_weights, count: reg_count },
    ))
}
