//! Teacher-student training engine: interleaved supervised/unsupervised
//! steps, the interactive teaching exchange, EMA teacher updates, SGD, and
//! checkpointed runs.
//!
//! Step order within one iteration:
//! 1. student supervised forward/loss on a labeled batch (labeled norm split);
//! 2. teacher inference on the weak-augmented unlabeled batch (merged-stat
//!    inference) -> pseudo objects above the confidence filter;
//! 3. student forward on the strong-augmented batch (unlabeled split) with
//!    RPN losses against the pseudo objects;
//! 4. the student's proposal coordinates go to the teacher, which scores
//!    those exact boxes on the weak view and returns per-box targets
//!    (flexible labels on the interactive route, IoU-assigned soft targets
//!    otherwise);
//! 5. student ROI soft cross-entropy against those targets;
//! 6. one SGD-with-momentum update of the student on the balanced total;
//! 7. EMA update of the teacher (plain copy during burn-in), running
//!    statistics copied from the student.
//!
//! Gradients never flow into the teacher: its outputs enter the step as
//! constants.

mod checkpoint;
mod sgd;
mod targets;

pub use checkpoint::{load_checkpoint, read_checkpoint_header, save_checkpoint};
pub use sgd::SgdState;
pub use targets::{build_rpn_targets, build_supervised_roi_targets, proposals_to_windows};

use std::collections::HashMap;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::boxes::BoundingBox;
use crate::detector::{DetectSettings, DetectorConfig, DetectorState};
use crate::error::{Error, Result};
use crate::evalkit::{evaluate, EvalConfig};
use crate::graph::Tape;
use crate::labeling::{assign_by_iou, filter_pseudo_objects, make_flexible_label, AssignMode};
use crate::losses::{self, BranchOutputs, LossBreakdown, RoiClsTargets, RoiRegTargets};
use crate::metrics::{MetricsRecord, MetricsWriter};
use crate::norm::Split;
use crate::rng::stream_rng;
use crate::scenes::{augment_pair, SamplePools, Scene, StrongAugConfig, WeakAugConfig};
use crate::tensor::{stack, Scalar, Tensor};

/// Detection settings used when the teacher generates pseudo objects (same
/// emission recipe as evaluation).
pub const PSEUDO_DETECT: DetectSettings =
    DetectSettings { score_threshold: 0.05, nms_threshold: 0.5, max_detections: 32 };

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Confidence filter for pseudo objects.
    pub sigma: f64,
    pub tau_up: f64,
    pub tau_low: f64,
    /// Balance factor on the unsupervised loss.
    pub lambda: f64,
    pub learning_rate: f64,
    pub sgd_momentum: f64,
    pub ema_decay: f64,
    /// Iterations of supervised-only training before pseudo labels activate;
    /// the teacher mirrors the student exactly until then.
    pub burn_in: u64,
    pub total_iterations: u64,
    pub labeled_batch: usize,
    pub unlabeled_batch: usize,
    pub log_every: u64,
    pub eval_every: u64,
    pub checkpoint_every: u64,
    pub flexible_labels: bool,
    pub interactive_teaching: bool,
    pub dbn: bool,
    /// Optional unsupervised ROI regression term (off by default; the
    /// default objective carries no such term).
    pub unsup_roi_reg: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            sigma: 0.9,
            tau_up: 0.8,
            tau_low: 0.05,
            lambda: 2.0,
            learning_rate: 0.01,
            sgd_momentum: 0.9,
            ema_decay: 0.996,
            burn_in: 500,
            total_iterations: 4000,
            labeled_batch: 8,
            unlabeled_batch: 8,
            log_every: 50,
            eval_every: 500,
            checkpoint_every: 1000,
            flexible_labels: true,
            interactive_teaching: true,
            dbn: true,
            unsup_roi_reg: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.sigma && self.sigma < 1.0) {
            return Err(Error::Config(format!("sigma {} outside (0,1)", self.sigma)));
        }
        if !(0.0 < self.tau_low && self.tau_low < self.tau_up && self.tau_up < 1.0) {
            return Err(Error::Config(format!(
                "need 0 < tau_low < tau_up < 1, got ({}, {})",
                self.tau_low, self.tau_up
            )));
        }
        if self.lambda < 0.0 {
            return Err(Error::Config(format!("lambda {} negative", self.lambda)));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return Err(Error::Config(format!("ema_decay {} outside [0,1]", self.ema_decay)));
        }
        if self.labeled_batch < 2 || self.unlabeled_batch < 2 {
            return Err(Error::Config(
                "batch sizes must be >= 2 (batch statistics need two samples)".into(),
            ));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be positive".into()));
        }
        Ok(())
    }
}

/// Student, its EMA teacher, and the optimizer buffers.
#[derive(Clone, Debug)]
pub struct TrainerState<T: Scalar> {
    pub student: DetectorState<T>,
    pub teacher: DetectorState<T>,
    pub opt: SgdState<T>,
    pub iteration: u64,
}

/// Event counters surfaced in logs (not part of the checkpoint).
#[derive(Clone, Debug, Default, Serialize)]
pub struct RunDiagnostics {
    /// Loss terms skipped because no anchor/box contributed.
    pub empty_rpn_contributions: u64,
    /// Steps whose proposal set was empty batch-wide.
    pub empty_proposal_steps: u64,
    /// Unlabeled images whose filtered pseudo set was empty.
    pub empty_pseudo_images: u64,
}

/// theta_teacher <- m * theta_teacher + (1 - m) * theta_student, elementwise
/// over trainable parameters; norm running statistics are copied outright
/// (they are not trainable, and copying keeps teacher inference aligned with
/// current data).
pub fn ema_update<T: Scalar>(teacher: &mut DetectorState<T>, student: &DetectorState<T>, decay: f64) {
    let m = T::from_f64(decay);
    let one_minus = T::one() - m;
    let student_params = student.params();
    for ((tname, t), (sname, s)) in teacher.params_mut().into_iter().zip(student_params) {
        assert_eq!(tname, sname, "teacher/student parameter order drift");
        assert_eq!(t.shape(), s.shape(), "teacher/student shape mismatch at {tname}");
        for (tv, &sv) in t.data_mut().iter_mut().zip(s.data().iter()) {
            *tv = m * *tv + one_minus * sv;
        }
    }
    teacher.copy_norm_buffers_from(student);
}

/// Draw a batch of pool indices for one step (without replacement when the
/// pool is large enough).
pub fn sample_batch_indices(
    pool_len: usize,
    batch: usize,
    master: u64,
    stream: &str,
    iteration: u64,
) -> Vec<usize> {
    let mut rng = stream_rng(master, stream, iteration);
    if pool_len >= batch {
        rand::seq::index::sample(&mut rng, pool_len, batch).into_vec()
    } else {
        (0..batch).map(|_| rng.random_range(0..pool_len)).collect()
    }
}

/// Stack selected scene images into an `[N, H, W, 3]` batch of `T`.
pub fn stack_scene_images<T: Scalar>(scenes: &[Scene], indices: &[usize]) -> Result<Tensor<T>> {
    let imgs: Vec<Tensor<T>> = indices.iter().map(|&i| scenes[i].image.cast::<T>()).collect();
    stack(&imgs)
}

fn scene_truths(scenes: &[Scene], indices: &[usize]) -> Vec<Vec<BoundingBox>> {
    indices.iter().map(|&i| scenes[i].annotations.clone()).collect()
}

/// Fresh trainer state: seeded student, teacher as an exact copy, zero
/// optimizer buffers. Normalization statistics are warmed with one batch per
/// split (statistics only; no parameter is touched) so that iteration-0
/// evaluation has valid inference statistics.
pub fn init_trainer_state<T: Scalar>(
    pools: &SamplePools,
    det_cfg: &DetectorConfig,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainerState<T>> {
    let mut student = DetectorState::<T>::new(det_cfg.clone(), crate::rng::derive_seed(seed, "model-init", 0))?;

    if pools.labeled.len() >= 2 {
        let idx = sample_batch_indices(
            pools.labeled.len(),
            train_cfg.labeled_batch.min(pools.labeled.len()),
            seed,
            "warm/labeled",
            0,
        );
        let imgs = stack_scene_images::<T>(&pools.labeled, &idx)?;
        student.warm_norm(&imgs, Split::Labeled)?;
    }
    if train_cfg.dbn && pools.unlabeled.len() >= 2 {
        let idx = sample_batch_indices(
            pools.unlabeled.len(),
            train_cfg.unlabeled_batch.min(pools.unlabeled.len()),
            seed,
            "warm/unlabeled",
            0,
        );
        let imgs = stack_scene_images::<T>(&pools.unlabeled, &idx)?;
        student.warm_norm(&imgs, Split::Unlabeled)?;
    }

    let teacher = student.clone();
    let opt = SgdState::new(&student);
    Ok(TrainerState { student, teacher, opt, iteration: 0 })
}

/// One training iteration. See the module docs for the step order.
pub fn train_step<T: Scalar>(
    state: &mut TrainerState<T>,
    pools: &SamplePools,
    cfg: &TrainConfig,
    seed: u64,
    diag: &mut RunDiagnostics,
) -> Result<LossBreakdown> {
    let k = state.iteration;
    let det_cfg = state.student.cfg.clone();
    let nc = det_cfg.num_classes();
    let mut tape: Tape<T> = Tape::new();
    let leaves = state.student.insert_leaves(&mut tape);

    // (a) supervised process on a labeled batch
    let lab_idx =
        sample_batch_indices(pools.labeled.len(), cfg.labeled_batch, seed, "batch/labeled", k);
    let lab_images = stack_scene_images::<T>(&pools.labeled, &lab_idx)?;
    let lab_truths = scene_truths(&pools.labeled, &lab_idx);

    let (feat_l, moments_l) = state.student.backbone_train(&mut tape, &leaves, &lab_images, 2)?;
    state.student.absorb_moments(Split::Labeled, &moments_l);
    let (obj_l, reg_l) = state.student.rpn_train(&mut tape, &leaves, feat_l)?;

    let rpn_plan_l = build_rpn_targets::<T>(
        state.student.anchors(),
        &lab_truths,
        det_cfg.num_anchors(),
        det_cfg.feature_size(),
        det_cfg.rpn_pos_thr,
        det_cfg.rpn_neg_thr,
        false,
    )?;
    if rpn_plan_l.obj_count == 0 {
        diag.empty_rpn_contributions += 1;
        log::debug!("iteration {k}: no contributing supervised RPN anchors");
    }

    let proposals_l = state.student.propose(
        tape.value(obj_l),
        tape.value(reg_l),
        det_cfg.proposal_nms,
        det_cfg.top_k_train,
    )?;
    let (roi_cls_l, roi_reg_l) = build_supervised_roi_targets::<T>(
        &proposals_l,
        &lab_truths,
        nc,
        det_cfg.roi_pos_thr,
        det_cfg.roi_neg_thr,
    )?;
    let windows_l = proposals_to_windows(&proposals_l);
    let (roi_cls_var, roi_reg_var) = if windows_l.is_empty() {
        diag.empty_proposal_steps += 1;
        log::debug!("iteration {k}: supervised proposal set empty, ROI terms skipped");
        (None, None)
    } else {
        let (c, r) = state.student.roi_train(&mut tape, &leaves, feat_l, windows_l)?;
        (Some(c), Some(r))
    };
    let outputs_l =
        BranchOutputs { rpn_obj: obj_l, rpn_reg: reg_l, roi_cls: roi_cls_var, roi_reg: roi_reg_var };
    let sup = losses::supervised_loss(&mut tape, &outputs_l, rpn_plan_l, roi_cls_l, roi_reg_l);

    // (b)-(e) unsupervised process
    let run_unsup = cfg.lambda > 0.0 && !pools.unlabeled.is_empty();
    let burn_in_active = k < cfg.burn_in;
    let mut unsup = None;
    if run_unsup {
        let unlab_idx = sample_batch_indices(
            pools.unlabeled.len(),
            cfg.unlabeled_batch,
            seed,
            "batch/unlabeled",
            k,
        );
        let weak_cfg = WeakAugConfig::default();
        let strong_cfg = StrongAugConfig::default();
        let mut weak_views = Vec::with_capacity(unlab_idx.len());
        let mut strong_views = Vec::with_capacity(unlab_idx.len());
        for (j, &i) in unlab_idx.iter().enumerate() {
            let pair = augment_pair(
                &weak_cfg,
                &strong_cfg,
                &pools.unlabeled[i].image,
                crate::rng::derive_seed(seed, "aug/weak", k.wrapping_mul(1_000_003) + j as u64),
                crate::rng::derive_seed(seed, "aug/strong", k.wrapping_mul(1_000_003) + j as u64),
            );
            weak_views.push(pair.weak.cast::<T>());
            strong_views.push(pair.strong.cast::<T>());
        }
        let strong_batch = stack(&strong_views)?;

        if burn_in_active {
            // statistics warm-up only; all unsupervised terms stay zero
            state.student.warm_norm(&strong_batch, Split::Unlabeled)?;
        } else {
            let weak_batch = stack(&weak_views)?;

            // (b) teacher pseudo objects on the weak views
            let teacher_feat = state.teacher.backbone_infer(&weak_batch)?;
            let teacher_dets = state.teacher.detect_on_features(&teacher_feat, &PSEUDO_DETECT)?;
            let pseudo: Vec<Vec<crate::labeling::PseudoObject>> = teacher_dets
                .iter()
                .map(|dets| filter_pseudo_objects(dets, cfg.sigma))
                .collect::<Result<_>>()?;
            for p in &pseudo {
                if p.is_empty() {
                    diag.empty_pseudo_images += 1;
                }
            }

            // (c) student on the strong views, RPN supervised by pseudo objects
            let (feat_u, moments_u) =
                state.student.backbone_train(&mut tape, &leaves, &strong_batch, 2)?;
            state.student.absorb_moments(Split::Unlabeled, &moments_u);
            let (obj_u, reg_u) = state.student.rpn_train(&mut tape, &leaves, feat_u)?;
            let pseudo_boxes: Vec<Vec<BoundingBox>> = pseudo
                .iter()
                .map(|objs| objs.iter().map(|o| o.bbox.clone()).collect())
                .collect();
            let rpn_plan_u = build_rpn_targets::<T>(
                state.student.anchors(),
                &pseudo_boxes,
                det_cfg.num_anchors(),
                det_cfg.feature_size(),
                det_cfg.rpn_pos_thr,
                det_cfg.rpn_neg_thr,
                true,
            )?;
            if rpn_plan_u.obj_count == 0 {
                diag.empty_rpn_contributions += 1;
            }

            // (d) candidate boxes handed to the teacher
            let proposals_u = state.student.propose(
                tape.value(obj_u),
                tape.value(reg_u),
                det_cfg.proposal_nms,
                det_cfg.top_k_train,
            )?;
            let windows_u = proposals_to_windows(&proposals_u);

            let (roi_cls_u, roi_reg_u, cls_targets, reg_targets) = if windows_u.is_empty() {
                diag.empty_proposal_steps += 1;
                log::debug!("iteration {k}: unlabeled proposal set empty, flexible term skipped");
                (None, None, RoiClsTargets { targets: Tensor::zeros(&[1, nc]), weights: vec![T::zero()], count: 0 }, None)
            } else {
                let total = windows_u.len();
                let mut targets = Tensor::zeros(&[total, nc]);
                let mut weights = vec![T::one(); total];
                let mut count = total;

                if cfg.interactive_teaching {
                    // teacher scores the student's exact boxes on the weak view
                    let crops = state.teacher.roi_features_infer(&teacher_feat, &windows_u);
                    let (probs, _) = state.teacher.roi_head_infer(&crops);
                    for row in 0..total {
                        let p: Vec<f64> =
                            (0..nc).map(|c| probs.data()[row * nc + c].as_f64()).collect();
                        let values = if cfg.flexible_labels {
                            make_flexible_label(&p, cfg.tau_up, cfg.tau_low)?.values
                        } else {
                            p
                        };
                        for (c, v) in values.iter().enumerate() {
                            targets.data_mut()[row * nc + c] = T::from_f64(*v);
                        }
                    }
                } else {
                    // classical route: IoU assignment against pseudo objects
                    let mut row = 0usize;
                    count = 0;
                    for (img, props) in proposals_u.iter().enumerate() {
                        let candidates: Vec<BoundingBox> =
                            props.iter().map(|p| p.bbox.clone()).collect();
                        let assigned = assign_by_iou(
                            &candidates,
                            &pseudo[img],
                            nc,
                            det_cfg.roi_pos_thr,
                            det_cfg.roi_neg_thr,
                            AssignMode::Soft,
                        )?;
                        for t in assigned {
                            let values = if cfg.flexible_labels && t.weight > 0.0 {
                                make_flexible_label(&t.values, cfg.tau_up, cfg.tau_low)?.values
                            } else {
                                t.values
                            };
                            for (c, v) in values.iter().enumerate() {
                                targets.data_mut()[row * nc + c] = T::from_f64(*v);
                            }
                            weights[row] = T::from_f64(t.weight);
                            count += usize::from(t.weight > 0.0);
                            row += 1;
                        }
                    }
                }

                // optional second-stage regression against matched pseudo boxes
                let reg = if cfg.unsup_roi_reg {
                    let mut reg_t = Tensor::zeros(&[total, 4]);
                    let mut reg_w = Tensor::zeros(&[total, 4]);
                    let mut reg_count = 0usize;
                    let mut row = 0usize;
                    for (img, props) in proposals_u.iter().enumerate() {
                        let candidates: Vec<BoundingBox> =
                            props.iter().map(|p| p.bbox.clone()).collect();
                        let assigned = assign_by_iou(
                            &candidates,
                            &pseudo[img],
                            nc,
                            det_cfg.roi_pos_thr,
                            det_cfg.roi_neg_thr,
                            AssignMode::OneHot,
                        )?;
                        for (p, t) in props.iter().zip(assigned.iter()) {
                            if let crate::boxes::Assignment::Matched(m) = t.assignment {
                                let d = crate::boxes::encode_delta(&p.bbox, &pseudo[img][m].bbox);
                                for (off, v) in [d.tx, d.ty, d.tw, d.th].into_iter().enumerate() {
                                    reg_t.data_mut()[row * 4 + off] = T::from_f64(v);
                                    reg_w.data_mut()[row * 4 + off] = T::one();
                                }
                                reg_count += 1;
                            }
                            row += 1;
                        }
                    }
                    Some(RoiRegTargets { targets: reg_t, weights: reg_w, count: reg_count })
                } else {
                    None
                };

                let (cls_var, reg_var) =
                    state.student.roi_train(&mut tape, &leaves, feat_u, windows_u)?;
                (
                    Some(cls_var),
                    Some(reg_var),
                    RoiClsTargets { targets, weights, count },
                    reg,
                )
            };

            let outputs_u = BranchOutputs {
                rpn_obj: obj_u,
                rpn_reg: reg_u,
                roi_cls: roi_cls_u,
                roi_reg: roi_reg_u,
            };
            unsup = Some(losses::unsupervised_loss(
                &mut tape,
                &outputs_u,
                rpn_plan_u,
                cls_targets,
                reg_targets,
            ));
        }
    }

    // (f) one SGD step on the balanced total
    let total = losses::total_loss(&mut tape, &sup, unsup.as_ref(), cfg.lambda);

    let breakdown = LossBreakdown {
        sup_rpn_cls: tape.scalar(sup.rpn_cls).as_f64(),
        sup_rpn_reg: tape.scalar(sup.rpn_reg).as_f64(),
        sup_roi_cls: tape.scalar(sup.roi_cls).as_f64(),
        sup_roi_reg: tape.scalar(sup.roi_reg).as_f64(),
        unsup_rpn_cls: unsup.as_ref().map_or(0.0, |u| tape.scalar(u.rpn_cls).as_f64()),
        unsup_rpn_reg: unsup.as_ref().map_or(0.0, |u| tape.scalar(u.rpn_reg).as_f64()),
        unsup_roi_cls: unsup.as_ref().map_or(0.0, |u| tape.scalar(u.roi_cls).as_f64()),
        unsup_roi_reg: unsup
            .as_ref()
            .and_then(|u| u.roi_reg)
            .map_or(0.0, |r| tape.scalar(r).as_f64()),
        total: tape.scalar(total).as_f64(),
    };
    if !breakdown.is_finite() {
        return Err(Error::Train(format!(
            "non-finite loss at iteration {k}: {breakdown:?}"
        )));
    }

    tape.backward(total);
    let mut grads: HashMap<String, Tensor<T>> = HashMap::new();
    for (name, var) in leaves.entries() {
        if let Some(g) = tape.grad(*var) {
            grads.insert(name.clone(), g.clone());
        }
    }
    state.opt.step(&mut state.student, &grads, cfg.learning_rate, cfg.sgd_momentum);

    // (g) teacher update
    if k < cfg.burn_in {
        state.teacher = state.student.clone();
    } else {
        ema_update(&mut state.teacher, &state.student, cfg.ema_decay);
    }

    state.iteration += 1;
    Ok(breakdown)
}

/// Where a run writes its artifacts; `None` keeps everything in memory.
#[derive(Default)]
pub struct RunContext<'a> {
    pub output_dir: Option<&'a Path>,
    /// Opaque experiment-config JSON echoed into checkpoints.
    pub config_echo: String,
}

pub struct RunOutput<T: Scalar> {
    pub state: TrainerState<T>,
    pub metrics: Vec<MetricsRecord>,
    /// Teacher mAP from the final evaluation, when a test pool exists.
    pub final_map: Option<f64>,
    pub diagnostics: RunDiagnostics,
}

/// Run (or resume) a training schedule. The teacher is the evaluated and
/// exported model. Resuming from `<output_dir>/state.ckpt` continues the
/// exact trajectory because every step re-derives its randomness from
/// `(seed, stream, iteration)`.
pub fn run_training<T: Scalar>(
    pools: &SamplePools,
    det_cfg: &DetectorConfig,
    train_cfg: &TrainConfig,
    eval_cfg: &EvalConfig,
    seed: u64,
    ctx: &RunContext,
) -> Result<RunOutput<T>> {
    train_cfg.validate()?;
    det_cfg.validate()?;
    if pools.labeled.is_empty() {
        return Err(Error::Train("labeled pool is empty".into()));
    }

    let ckpt_path = ctx.output_dir.map(|d| d.join("state.ckpt"));
    let mut state = match &ckpt_path {
        Some(p) if p.exists() => {
            let (state, _echo) = load_checkpoint::<T>(p, det_cfg)?;
            log::info!("resumed from {} at iteration {}", p.display(), state.iteration);
            state
        }
        _ => init_trainer_state(pools, det_cfg, train_cfg, seed)?,
    };

    let mut writer = match ctx.output_dir {
        Some(dir) => Some(MetricsWriter::append(&dir.join("metrics.jsonl"))?),
        None => None,
    };

    let start = Instant::now();
    let mut metrics = Vec::new();
    let mut diag = RunDiagnostics::default();
    let mut final_map = None;
    let total = train_cfg.total_iterations;

    while state.iteration < total {
        let losses = train_step(&mut state, pools, train_cfg, seed, &mut diag)?;
        let done = state.iteration;

        let eval_due = !pools.test.is_empty()
            && (done == total || (train_cfg.eval_every > 0 && done % train_cfg.eval_every == 0));
        let map = if eval_due {
            let report = evaluate(&state.teacher, &pools.test, &pools.vocab, eval_cfg, seed)?;
            if done == total {
                final_map = Some(report.map);
            }
            Some(report.map)
        } else {
            None
        };

        if done % train_cfg.log_every == 0 || done == total {
            let record = MetricsRecord {
                iteration: done,
                losses,
                map,
                wall_seconds: start.elapsed().as_secs_f64(),
            };
            if let Some(w) = writer.as_mut() {
                w.write(&record)?;
            }
            metrics.push(record);
        }

        let ckpt_due = done == total
            || (train_cfg.checkpoint_every > 0 && done % train_cfg.checkpoint_every == 0);
        if ckpt_due {
            if let Some(p) = &ckpt_path {
                save_checkpoint(p, &state, &ctx.config_echo)?;
            }
        }
    }

    Ok(RunOutput { state, metrics, final_map, diagnostics: diag })
}
