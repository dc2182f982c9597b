//! Training objectives: per-entry soft cross-entropy for flexible labels,
//! binary objectness loss, smooth-L1 box regression, and the lambda-balanced
//! combination of the supervised and unsupervised processes.
//!
//! Every term averages over its own contributing set (anchors or boxes)
//! before the terms are summed, so the balance factor is independent of batch
//! composition. Soft targets are treated entry by entry and never
//! renormalized.

use serde::{Deserialize, Serialize};

use crate::boxes::{Assignment, BoxDelta};
use crate::graph::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

/// Probability clamp floor used inside the classification losses.
pub const PROB_FLOOR: f64 = 1e-12;

/// All loss components of one training step. Unsupervised fields stay zero
/// during burn-in, with `lambda = 0`, and for the supervised baseline.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub sup_rpn_cls: f64,
    pub sup_rpn_reg: f64,
    pub sup_roi_cls: f64,
    pub sup_roi_reg: f64,
    pub unsup_rpn_cls: f64,
    pub unsup_rpn_reg: f64,
    pub unsup_roi_cls: f64,
    /// Optional second-stage regression on pseudo boxes; zero unless the
    /// config flag enables it.
    pub unsup_roi_reg: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn supervised_sum(&self) -> f64 {
        self.sup_rpn_cls + self.sup_rpn_reg + self.sup_roi_cls + self.sup_roi_reg
    }

    pub fn unsupervised_sum(&self) -> f64 {
        self.unsup_rpn_cls + self.unsup_rpn_reg + self.unsup_roi_cls + self.unsup_roi_reg
    }

    pub fn is_finite(&self) -> bool {
        [
            self.sup_rpn_cls,
            self.sup_rpn_reg,
            self.sup_roi_cls,
            self.sup_roi_reg,
            self.unsup_rpn_cls,
            self.unsup_rpn_reg,
            self.unsup_roi_cls,
            self.unsup_roi_reg,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// -sum_c target_c * log(p_c) with per-entry targets in [0,1] and no target
/// renormalization. Probabilities are clamped at [`PROB_FLOOR`].
pub fn soft_cross_entropy(target: &[f64], p: &[f64]) -> f64 {
    assert_eq!(target.len(), p.len(), "soft CE length mismatch");
    let mut total = 0.0;
    for (&t, &pi) in target.iter().zip(p.iter()) {
        if t != 0.0 {
            total -= t * pi.max(PROB_FLOOR).ln();
        }
    }
    total
}

/// Binary cross-entropy over positive/background assignments, mean over the
/// contributing (non-ignored) entries. Returns `(loss, contributing)`; a zero
/// contributing count yields loss 0 and is the caller's cue to log it.
pub fn binary_objectness_loss(logits: &[f64], assignments: &[Assignment]) -> (f64, usize) {
    assert_eq!(logits.len(), assignments.len(), "objectness length mismatch");
    let mut total = 0.0;
    let mut count = 0usize;
    for (&z, a) in logits.iter().zip(assignments.iter()) {
        let y = match a {
            Assignment::Matched(_) => 1.0,
            Assignment::Background => 0.0,
            Assignment::Ignore => continue,
        };
        total += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        count += 1;
    }
    if count == 0 {
        (0.0, 0)
    } else {
        (total / count as f64, count)
    }
}

/// Smooth-L1 over the four delta coordinates of one box:
/// 0.5 d^2 for |d| < 1, |d| - 0.5 otherwise, summed over coordinates.
pub fn smooth_l1(pred: &BoxDelta, target: &BoxDelta) -> f64 {
    let one = |d: f64| {
        let a = d.abs();
        if a < 1.0 {
            0.5 * d * d
        } else {
            a - 0.5
        }
    };
    one(pred.tx - target.tx) + one(pred.ty - target.ty) + one(pred.tw - target.tw) + one(pred.th - target.th)
}

/// Flattened per-anchor targets for one RPN loss (classification +
/// regression), assembled by the trainer from anchor matching.
#[derive(Clone)]
pub struct RpnTargets<T> {
    pub obj_labels: Tensor<T>,
    pub obj_weights: Tensor<T>,
    /// Count of contributing anchors; 0 means the term is skipped.
    pub obj_count: usize,
    pub reg_targets: Tensor<T>,
    pub reg_weights: Tensor<T>,
    /// Count of positive anchors (each spans four delta coordinates).
    pub reg_count: usize,
}

/// Per-box classification targets for one ROI loss.
#[derive(Clone)]
pub struct RoiClsTargets<T> {
    pub targets: Tensor<T>,
    pub weights: Vec<T>,
    pub count: usize,
}

/// Per-box regression targets for the supervised ROI loss.
#[derive(Clone)]
pub struct RoiRegTargets<T> {
    pub targets: Tensor<T>,
    pub weights: Tensor<T>,
    pub count: usize,
}

/// Student head outputs for one branch (tape handles).
pub struct BranchOutputs {
    pub rpn_obj: Var,
    pub rpn_reg: Var,
    /// Missing when the branch produced no candidate boxes.
    pub roi_cls: Option<Var>,
    pub roi_reg: Option<Var>,
}

/// Scalar loss terms of the supervised process.
pub struct SupervisedLoss {
    pub rpn_cls: Var,
    pub rpn_reg: Var,
    pub roi_cls: Var,
    pub roi_reg: Var,
}

/// Scalar loss terms of the unsupervised process (no ROI regression term by
/// default).
pub struct UnsupervisedLoss {
    pub rpn_cls: Var,
    pub rpn_reg: Var,
    pub roi_cls: Var,
    pub roi_reg: Option<Var>,
}

fn zero_scalar<T: Scalar>(tape: &mut Tape<T>) -> Var {
    tape.leaf(Tensor::scalar(T::zero()), false)
}

fn denom<T: Scalar>(count: usize) -> T {
    T::from_f64(count.max(1) as f64)
}

/// Classification + regression losses of the RPN stage for one branch.
fn rpn_losses<T: Scalar>(tape: &mut Tape<T>, outputs: &BranchOutputs, t: RpnTargets<T>) -> (Var, Var) {
    let cls = if t.obj_count == 0 {
        zero_scalar(tape)
    } else {
        tape.bce_logits(outputs.rpn_obj, t.obj_labels, t.obj_weights, denom::<T>(t.obj_count))
    };
    let reg = if t.reg_count == 0 {
        zero_scalar(tape)
    } else {
        tape.smooth_l1(outputs.rpn_reg, t.reg_targets, t.reg_weights, denom::<T>(t.reg_count))
    };
    (cls, reg)
}

/// Supervised loss terms against ground truth: RPN cls+reg plus hard
/// cross-entropy and smooth-L1 on the ROI head.
pub fn supervised_loss<T: Scalar>(
    tape: &mut Tape<T>,
    outputs: &BranchOutputs,
    rpn: RpnTargets<T>,
    roi_cls: RoiClsTargets<T>,
    roi_reg: RoiRegTargets<T>,
) -> SupervisedLoss {
    let (rpn_cls, rpn_reg) = rpn_losses(tape, outputs, rpn);
    let roi_cls_var = match (outputs.roi_cls, roi_cls.count) {
        (Some(logits), c) if c > 0 => {
            tape.soft_ce_logits(logits, roi_cls.targets, roi_cls.weights, denom::<T>(c))
        }
        _ => zero_scalar(tape),
    };
    let roi_reg_var = match (outputs.roi_reg, roi_reg.count) {
        (Some(pred), c) if c > 0 => {
            tape.smooth_l1(pred, roi_reg.targets, roi_reg.weights, denom::<T>(c))
        }
        _ => zero_scalar(tape),
    };
    SupervisedLoss { rpn_cls, rpn_reg, roi_cls: roi_cls_var, roi_reg: roi_reg_var }
}

/// Unsupervised loss terms: RPN cls+reg against pseudo objects and soft
/// cross-entropy against the per-candidate soft targets. The optional
/// regression term stays `None` unless explicitly enabled.
pub fn unsupervised_loss<T: Scalar>(
    tape: &mut Tape<T>,
    outputs: &BranchOutputs,
    rpn: RpnTargets<T>,
    roi_cls: RoiClsTargets<T>,
    roi_reg: Option<RoiRegTargets<T>>,
) -> UnsupervisedLoss {
    let (rpn_cls, rpn_reg) = rpn_losses(tape, outputs, rpn);
    let roi_cls_var = match (outputs.roi_cls, roi_cls.count) {
        (Some(logits), c) if c > 0 => {
            tape.soft_ce_logits(logits, roi_cls.targets, roi_cls.weights, denom::<T>(c))
        }
        _ => zero_scalar(tape),
    };
    let roi_reg_var = match (outputs.roi_reg, roi_reg) {
        (Some(pred), Some(t)) if t.count > 0 => {
            Some(tape.smooth_l1(pred, t.targets, t.weights, denom::<T>(t.count)))
        }
        _ => None,
    };
    UnsupervisedLoss { rpn_cls, rpn_reg, roi_cls: roi_cls_var, roi_reg: roi_reg_var }
}

/// total = L_s + lambda * L_u.
pub fn total_loss<T: Scalar>(
    tape: &mut Tape<T>,
    sup: &SupervisedLoss,
    unsup: Option<&UnsupervisedLoss>,
    lambda: f64,
) -> Var {
    let one = T::one();
    let lam = T::from_f64(lambda);
    let mut terms = vec![
        (sup.rpn_cls, one),
        (sup.rpn_reg, one),
        (sup.roi_cls, one),
        (sup.roi_reg, one),
    ];
    if let Some(u) = unsup {
        terms.push((u.rpn_cls, lam));
        terms.push((u.rpn_reg, lam));
        terms.push((u.roi_cls, lam));
        if let Some(r) = u.roi_reg {
            terms.push((r, lam));
        }
    }
    tape.weighted_sum(&terms)
}
