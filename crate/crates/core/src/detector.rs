//! Miniature two-stage detector: a three-block conv backbone (stride 8) with
//! pluggable normalization, an anchor-based proposal stage, and an ROI head
//! with class-agnostic box regression. Small enough for CPU training and
//! finite-difference auditing.

use std::collections::HashMap;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::boxes::{decode_delta, nms, BoundingBox, BoxDelta};
use crate::error::{Error, Result};
use crate::graph::{BatchMoments, Tape, Var};
use crate::norm::{NormKind, NormState, Split, VarianceMerge};
use crate::ops::{self, RoiWindow};
use crate::rng::stream_rng;
use crate::tensor::{Scalar, Tensor};

/// Backbone downsampling factor (three stride-2 convolutions).
pub const STRIDE: usize = 8;
/// Predicted log-size deltas are clamped to this magnitude before decoding.
pub const DELTA_CLAMP: f64 = 4.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    /// Derived from the dataset config at the experiment level.
    #[serde(skip)]
    pub image_size: usize,
    pub channels: [usize; 3],
    /// Number of known categories (the ROI head emits this plus background).
    /// Derived from the dataset vocabulary at the experiment level.
    #[serde(skip)]
    pub num_known: usize,
    pub anchor_sizes: Vec<f64>,
    pub hidden: usize,
    pub roi_grid: usize,
    pub proposal_nms: f64,
    pub top_k_train: usize,
    pub top_k_infer: usize,
    pub rpn_pos_thr: f64,
    pub rpn_neg_thr: f64,
    pub roi_pos_thr: f64,
    pub roi_neg_thr: f64,
    /// Derived from the `dbn` trainer toggle at the experiment level.
    #[serde(skip)]
    pub norm: NormKind,
    pub norm_eps: f64,
    pub norm_rho: f64,
    pub variance_merge: VarianceMerge,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            image_size: 64,
            channels: [16, 32, 32],
            num_known: 3,
            anchor_sizes: vec![12.0, 24.0],
            hidden: 128,
            roi_grid: 4,
            proposal_nms: 0.7,
            top_k_train: 64,
            top_k_infer: 32,
            rpn_pos_thr: 0.7,
            rpn_neg_thr: 0.3,
            roi_pos_thr: 0.5,
            roi_neg_thr: 0.3,
            norm: NormKind::DataSpecific,
            norm_eps: 1e-5,
            norm_rho: 0.1,
            variance_merge: VarianceMerge::Variance,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.image_size.is_multiple_of(STRIDE) || self.image_size < 2 * STRIDE {
            return Err(Error::Config(format!(
                "image_size {} must be a multiple of {STRIDE}",
                self.image_size
            )));
        }
        if self.num_known < 2 {
            return Err(Error::Config("need at least 2 known categories".into()));
        }
        if self.anchor_sizes.is_empty() {
            return Err(Error::Config("need at least one anchor size".into()));
        }
        if !(0.0..1.0).contains(&self.proposal_nms) {
            return Err(Error::Config(format!("proposal_nms {}", self.proposal_nms)));
        }
        if self.rpn_pos_thr < self.rpn_neg_thr || self.roi_pos_thr < self.roi_neg_thr {
            return Err(Error::Config("matching thresholds out of order".into()));
        }
        Ok(())
    }

    pub fn feature_size(&self) -> usize {
        self.image_size / STRIDE
    }

    pub fn num_anchors(&self) -> usize {
        self.anchor_sizes.len()
    }

    /// ROI head class count: known categories plus background (last index).
    pub fn num_classes(&self) -> usize {
        self.num_known + 1
    }
}

/// A proposal: a clipped box scored by objectness.
#[derive(Clone, Debug)]
pub struct Proposal {
    pub bbox: BoundingBox,
}

/// Final detection with the full class-probability vector of its source
/// proposal (the teacher's soft output, reused for pseudo-label targets).
#[derive(Clone, Debug)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub probs: Vec<f64>,
}

/// Inference-time emission settings.
#[derive(Clone, Copy, Debug)]
pub struct DetectSettings {
    pub score_threshold: f64,
    pub nms_threshold: f64,
    pub max_detections: usize,
}

/// Full detector parameters plus per-layer normalization state.
#[derive(Clone, Debug)]
pub struct DetectorState<T: Scalar> {
    pub cfg: DetectorConfig,
    pub conv_w: [Tensor<T>; 3],
    pub conv_b: [Tensor<T>; 3],
    pub norms: [NormState<T>; 3],
    pub rpn_obj_w: Tensor<T>,
    pub rpn_obj_b: Tensor<T>,
    pub rpn_reg_w: Tensor<T>,
    pub rpn_reg_b: Tensor<T>,
    pub roi_fc1_w: Tensor<T>,
    pub roi_fc1_b: Tensor<T>,
    pub roi_cls_w: Tensor<T>,
    pub roi_cls_b: Tensor<T>,
    pub roi_reg_w: Tensor<T>,
    pub roi_reg_b: Tensor<T>,
    anchors: Vec<BoundingBox>,
}

fn he_normal<T: Scalar>(shape: &[usize], fan_in: usize, seed: u64, idx: u64) -> Tensor<T> {
    let mut rng = stream_rng(seed, "init", idx);
    let normal = Normal::new(0.0f64, (2.0 / fan_in as f64).sqrt()).expect("he std");
    let len: usize = shape.iter().product();
    let data: Vec<T> = (0..len).map(|_| T::from_f64(normal.sample(&mut rng))).collect();
    Tensor::from_vec(shape, data).expect("init shape")
}

/// Anchor list in (row, col, size) order; centers at cell centers, unclipped.
fn build_anchors(cfg: &DetectorConfig) -> Vec<BoundingBox> {
    let f = cfg.feature_size();
    let mut anchors = Vec::with_capacity(f * f * cfg.num_anchors());
    for fy in 0..f {
        for fx in 0..f {
            let cx = (fx as f64 + 0.5) * STRIDE as f64;
            let cy = (fy as f64 + 0.5) * STRIDE as f64;
            for &s in &cfg.anchor_sizes {
                let h = s / 2.0;
                anchors.push(
                    BoundingBox::new(cx - h, cy - h, cx + h, cy + h).expect("anchor box"),
                );
            }
        }
    }
    anchors
}

impl<T: Scalar> DetectorState<T> {
    pub fn new(cfg: DetectorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let [c0, c1, c2] = cfg.channels;
        let nc = cfg.num_classes();
        let a = cfg.num_anchors();
        let grid = cfg.roi_grid;
        let mk_norm = |c: usize| {
            NormState::new(cfg.norm, c, cfg.norm_eps, cfg.norm_rho, cfg.variance_merge)
        };
        let anchors = build_anchors(&cfg);
        Ok(DetectorState {
            conv_w: [
                he_normal(&[3, 3, 3, c0], 3 * 3 * 3, seed, 0),
                he_normal(&[3, 3, c0, c1], 3 * 3 * c0, seed, 1),
                he_normal(&[3, 3, c1, c2], 3 * 3 * c1, seed, 2),
            ],
            conv_b: [Tensor::zeros(&[c0]), Tensor::zeros(&[c1]), Tensor::zeros(&[c2])],
            norms: [mk_norm(c0), mk_norm(c1), mk_norm(c2)],
            rpn_obj_w: he_normal(&[c2, a], c2, seed, 3),
            rpn_obj_b: Tensor::zeros(&[a]),
            rpn_reg_w: he_normal(&[c2, 4 * a], c2, seed, 4),
            rpn_reg_b: Tensor::zeros(&[4 * a]),
            roi_fc1_w: he_normal(&[grid * grid * c2, cfg.hidden], grid * grid * c2, seed, 5),
            roi_fc1_b: Tensor::zeros(&[cfg.hidden]),
            roi_cls_w: he_normal(&[cfg.hidden, nc], cfg.hidden, seed, 6),
            roi_cls_b: Tensor::zeros(&[nc]),
            roi_reg_w: he_normal(&[cfg.hidden, 4], cfg.hidden, seed, 7),
            roi_reg_b: Tensor::zeros(&[4]),
            anchors,
            cfg,
        })
    }

    pub fn anchors(&self) -> &[BoundingBox] {
        &self.anchors
    }

    /// Trainable parameters in a fixed, documented order. This order defines
    /// optimizer-buffer alignment and the checkpoint layout.
    pub fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<(String, &Tensor<T>)> = Vec::new();
        for i in 0..3 {
            out.push((format!("backbone.conv{i}.w"), &self.conv_w[i]));
            out.push((format!("backbone.conv{i}.b"), &self.conv_b[i]));
            out.push((format!("backbone.norm{i}.alpha"), self.norms[i].alpha()));
            out.push((format!("backbone.norm{i}.beta"), self.norms[i].beta()));
        }
        out.push(("rpn.obj.w".into(), &self.rpn_obj_w));
        out.push(("rpn.obj.b".into(), &self.rpn_obj_b));
        out.push(("rpn.reg.w".into(), &self.rpn_reg_w));
        out.push(("rpn.reg.b".into(), &self.rpn_reg_b));
        out.push(("roi.fc1.w".into(), &self.roi_fc1_w));
        out.push(("roi.fc1.b".into(), &self.roi_fc1_b));
        out.push(("roi.cls.w".into(), &self.roi_cls_w));
        out.push(("roi.cls.b".into(), &self.roi_cls_b));
        out.push(("roi.reg.w".into(), &self.roi_reg_w));
        out.push(("roi.reg.b".into(), &self.roi_reg_b));
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out: Vec<(String, &mut Tensor<T>)> = Vec::new();
        let [n0, n1, n2] = &mut self.norms;
        for (i, (cw, (cb, norm))) in self
            .conv_w
            .iter_mut()
            .zip(self.conv_b.iter_mut().zip([n0, n1, n2]))
            .enumerate()
        {
            out.push((format!("backbone.conv{i}.w"), cw));
            out.push((format!("backbone.conv{i}.b"), cb));
            match norm {
                NormState::Batch(s) => {
                    out.push((format!("backbone.norm{i}.alpha"), &mut s.alpha));
                    out.push((format!("backbone.norm{i}.beta"), &mut s.beta));
                }
                NormState::DataSpecific(s) => {
                    out.push((format!("backbone.norm{i}.alpha"), &mut s.alpha));
                    out.push((format!("backbone.norm{i}.beta"), &mut s.beta));
                }
            }
        }
        out.push(("rpn.obj.w".into(), &mut self.rpn_obj_w));
        out.push(("rpn.obj.b".into(), &mut self.rpn_obj_b));
        out.push(("rpn.reg.w".into(), &mut self.rpn_reg_w));
        out.push(("rpn.reg.b".into(), &mut self.rpn_reg_b));
        out.push(("roi.fc1.w".into(), &mut self.roi_fc1_w));
        out.push(("roi.fc1.b".into(), &mut self.roi_fc1_b));
        out.push(("roi.cls.w".into(), &mut self.roi_cls_w));
        out.push(("roi.cls.b".into(), &mut self.roi_cls_b));
        out.push(("roi.reg.w".into(), &mut self.roi_reg_w));
        out.push(("roi.reg.b".into(), &mut self.roi_reg_b));
        out
    }

    /// Norm running-statistics buffers, named for checkpointing.
    pub fn norm_buffers(&self) -> Vec<(String, Vec<T>, u64)> {
        let mut out = Vec::new();
        for (i, norm) in self.norms.iter().enumerate() {
            for (suffix, data, updates) in norm.buffers() {
                out.push((format!("backbone.norm{i}.{suffix}"), data.to_vec(), updates));
            }
        }
        out
    }

    pub fn set_norm_buffer(&mut self, name: &str, data: &[T], updates: u64) -> Result<()> {
        for i in 0..3 {
            let prefix = format!("backbone.norm{i}.");
            if let Some(suffix) = name.strip_prefix(&prefix) {
                return self.norms[i].set_buffer(suffix, data, updates);
            }
        }
        Err(Error::Checkpoint(format!("unknown norm buffer {name}")))
    }

    /// Copy running statistics from another detector (teacher sync).
    pub fn copy_norm_buffers_from(&mut self, other: &Self) {
        for (dst, src) in self.norms.iter_mut().zip(other.norms.iter()) {
            dst.copy_buffers_from(src);
        }
    }

    fn check_images(&self, images: &Tensor<T>) -> Result<()> {
        let s = images.shape();
        if s.len() != 4 || s[1] != self.cfg.image_size || s[2] != self.cfg.image_size || s[3] != 3 {
            return Err(Error::Shape(format!(
                "expected [N, {0}, {0}, 3] images, got {s:?}",
                self.cfg.image_size
            )));
        }
        Ok(())
    }

    // ----- inference path (no tape, no state mutation) -----

    /// Backbone in inference mode: merged/running statistics, state untouched.
    pub fn backbone_infer(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_images(images)?;
        let mut x = images.clone();
        for i in 0..3 {
            let (y, _) = ops::conv2d_forward(&x, &self.conv_w[i], &self.conv_b[i], 2, 1);
            let y = self.norms[i].forward_infer(&y)?;
            x = ops::relu_forward(&y);
        }
        Ok(x)
    }

    /// Objectness logits `[N, Hf, Wf, A]` and deltas `[N, Hf, Wf, 4A]`.
    pub fn rpn_heads_infer(&self, feat: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
        let obj = ops::dense_forward(feat, &self.rpn_obj_w, &self.rpn_obj_b);
        let reg = ops::dense_forward(feat, &self.rpn_reg_w, &self.rpn_reg_b);
        (obj, reg)
    }

    /// Decode, clip, suppress and rank proposals per image.
    ///
    /// All-equal objectness degenerates to pure NMS tie-breaking by anchor
    /// index, which keeps the output deterministic.
    pub fn propose(
        &self,
        obj_logits: &Tensor<T>,
        deltas: &Tensor<T>,
        nms_thr: f64,
        top_k: usize,
    ) -> Result<Vec<Vec<Proposal>>> {
        let n = obj_logits.shape()[0];
        let per_image = self.anchors.len();
        let size = self.cfg.image_size as f64;
        let mut out = Vec::with_capacity(n);
        for img in 0..n {
            let mut candidates: Vec<BoundingBox> = Vec::with_capacity(per_image);
            for (ai, anchor) in self.anchors.iter().enumerate() {
                let z = obj_logits.data()[img * per_image + ai].as_f64();
                let score = 1.0 / (1.0 + (-z).exp());
                let d = &deltas.data()[(img * per_image + ai) * 4..(img * per_image + ai) * 4 + 4];
                let delta = BoxDelta {
                    tx: d[0].as_f64().clamp(-DELTA_CLAMP, DELTA_CLAMP),
                    ty: d[1].as_f64().clamp(-DELTA_CLAMP, DELTA_CLAMP),
                    tw: d[2].as_f64().clamp(-DELTA_CLAMP, DELTA_CLAMP),
                    th: d[3].as_f64().clamp(-DELTA_CLAMP, DELTA_CLAMP),
                };
                let raw = decode_delta(anchor, &delta);
                let x1 = raw.x1.clamp(0.0, size);
                let y1 = raw.y1.clamp(0.0, size);
                let x2 = raw.x2.clamp(0.0, size);
                let y2 = raw.y2.clamp(0.0, size);
                if x2 - x1 < 1e-3 || y2 - y1 < 1e-3 {
                    continue;
                }
                candidates.push(BoundingBox::new(x1, y1, x2, y2)?.with_score(score)?);
            }
            let kept = nms(&candidates, nms_thr)?;
            let proposals = kept
                .into_iter()
                .take(top_k)
                .map(|i| Proposal { bbox: candidates[i].clone() })
                .collect();
            out.push(proposals);
        }
        Ok(out)
    }

    /// Bilinear ROI crops from an inference feature map.
    pub fn roi_features_infer(&self, feat: &Tensor<T>, rois: &[RoiWindow]) -> Tensor<T> {
        ops::roi_bilinear_forward(feat, rois, self.cfg.roi_grid, STRIDE as f64)
    }

    /// Per-box class probabilities (softmax over n+1) and 4 deltas.
    pub fn roi_head_infer(&self, crops: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
        let b = crops.shape()[0];
        let flat = crops
            .reshaped(&[b, crops.len() / b.max(1)])
            .expect("crop flatten");
        let h = ops::relu_forward(&ops::dense_forward(&flat, &self.roi_fc1_w, &self.roi_fc1_b));
        let logits = ops::dense_forward(&h, &self.roi_cls_w, &self.roi_cls_b);
        let probs = ops::softmax_rows(&logits);
        let deltas = ops::dense_forward(&h, &self.roi_reg_w, &self.roi_reg_b);
        (probs, deltas)
    }

    /// Full inference: proposals, second-stage scoring, per-class NMS, then a
    /// global score-ranked cap per image.
    pub fn detect_on_features(
        &self,
        feat: &Tensor<T>,
        settings: &DetectSettings,
    ) -> Result<Vec<Vec<Detection>>> {
        let (obj, reg) = self.rpn_heads_infer(feat);
        let proposals = self.propose(&obj, &reg, self.cfg.proposal_nms, self.cfg.top_k_infer)?;

        let n = feat.shape()[0];
        let mut rois: Vec<RoiWindow> = Vec::new();
        for (img, props) in proposals.iter().enumerate() {
            for p in props {
                rois.push(RoiWindow {
                    image_index: img,
                    x1: p.bbox.x1,
                    y1: p.bbox.y1,
                    x2: p.bbox.x2,
                    y2: p.bbox.y2,
                });
            }
        }
        if rois.is_empty() {
            return Ok(vec![Vec::new(); n]);
        }
        let crops = self.roi_features_infer(feat, &rois);
        let (probs, deltas) = self.roi_head_infer(&crops);

        let nc = self.cfg.num_classes();
        let size = self.cfg.image_size as f64;
        let mut out: Vec<Vec<Detection>> = vec![Vec::new(); n];
        let mut flat_idx = 0usize;
        for (img, props) in proposals.iter().enumerate() {
            let mut raw: Vec<Detection> = Vec::new();
            for p in props {
                let prow: Vec<f64> =
                    (0..nc).map(|c| probs.data()[flat_idx * nc + c].as_f64()).collect();
                let d = &deltas.data()[flat_idx * 4..flat_idx * 4 + 4];
                let delta = BoxDelta {
                    tx: d[0].as_f64().clamp(-DELTA_CLAMP, DELTA_CLAMP),
                    ty: d[1].as_f64().clamp(-DELTA_CLAMP, DELTA_CLAMP),
                    tw: d[2].as_f64().clamp(-DELTA_CLAMP, DELTA_CLAMP),
                    th: d[3].as_f64().clamp(-DELTA_CLAMP, DELTA_CLAMP),
                };
                let refined = decode_delta(&p.bbox, &delta);
                let x1 = refined.x1.clamp(0.0, size);
                let y1 = refined.y1.clamp(0.0, size);
                let x2 = refined.x2.clamp(0.0, size);
                let y2 = refined.y2.clamp(0.0, size);
                flat_idx += 1;
                if x2 - x1 < 1e-3 || y2 - y1 < 1e-3 {
                    continue;
                }
                for (c, &score) in prow.iter().enumerate().take(self.cfg.num_known) {
                    if score >= settings.score_threshold {
                        raw.push(Detection {
                            bbox: BoundingBox::new(x1, y1, x2, y2)?
                                .with_category(c)
                                .with_score(score)?,
                            probs: prow.clone(),
                        });
                    }
                }
            }
            // per-class NMS, then global cap by score
            let mut kept: Vec<Detection> = Vec::new();
            for c in 0..self.cfg.num_known {
                let class_boxes: Vec<&Detection> =
                    raw.iter().filter(|d| d.bbox.category == Some(c)).collect();
                let boxes: Vec<BoundingBox> =
                    class_boxes.iter().map(|d| d.bbox.clone()).collect();
                for k in nms(&boxes, settings.nms_threshold)? {
                    kept.push(class_boxes[k].clone());
                }
            }
            kept.sort_by(|a, b| {
                b.bbox
                    .score
                    .partial_cmp(&a.bbox.score)
                    .unwrap()
                    .then(a.bbox.category.cmp(&b.bbox.category))
            });
            kept.truncate(settings.max_detections);
            out[img] = kept;
        }
        Ok(out)
    }

    pub fn detect(&self, images: &Tensor<T>, settings: &DetectSettings) -> Result<Vec<Vec<Detection>>> {
        let feat = self.backbone_infer(images)?;
        self.detect_on_features(&feat, settings)
    }

    // ----- training path (tape) -----

    /// Register every trainable parameter as a tape leaf.
    pub fn insert_leaves(&self, tape: &mut Tape<T>) -> TapeLeaves {
        let mut map = HashMap::new();
        for (name, tensor) in self.params() {
            let var = tape.leaf(tensor.clone(), true);
            map.insert(name, var);
        }
        TapeLeaves { map }
    }

    /// Backbone forward in training mode on the tape. Returns the feature Var
    /// plus the per-layer batch moments for running-statistics absorption.
    pub fn backbone_train(
        &self,
        tape: &mut Tape<T>,
        leaves: &TapeLeaves,
        images: &Tensor<T>,
        batch_min: usize,
    ) -> Result<(Var, Vec<BatchMoments<T>>)> {
        self.check_images(images)?;
        if images.shape()[0] < batch_min.max(2) {
            return Err(Error::Norm(format!(
                "training forward needs batch >= 2, got {}",
                images.shape()[0]
            )));
        }
        let mut x = tape.leaf(images.clone(), false);
        let mut moments = Vec::with_capacity(3);
        for i in 0..3 {
            let w = leaves.var(&format!("backbone.conv{i}.w"))?;
            let b = leaves.var(&format!("backbone.conv{i}.b"))?;
            let y = tape.conv2d(x, w, b, 2, 1);
            let alpha = leaves.var(&format!("backbone.norm{i}.alpha"))?;
            let beta = leaves.var(&format!("backbone.norm{i}.beta"))?;
            let (y, m) = tape.bn_train(y, alpha, beta, self.norms[i].eps());
            moments.push(m);
            x = tape.relu(y);
        }
        Ok((x, moments))
    }

    /// Absorb backbone batch moments into the given split's running stats.
    pub fn absorb_moments(&mut self, split: Split, moments: &[BatchMoments<T>]) {
        for (norm, m) in self.norms.iter_mut().zip(moments.iter()) {
            norm.absorb(split, m);
        }
    }

    /// Training-mode backbone forward outside the tape, used purely to warm
    /// running statistics (output discarded, parameters untouched).
    pub fn warm_norm(&mut self, images: &Tensor<T>, split: Split) -> Result<()> {
        self.check_images(images)?;
        let mut x = images.clone();
        for i in 0..3 {
            let (y, _) = ops::conv2d_forward(&x, &self.conv_w[i], &self.conv_b[i], 2, 1);
            let y = self.norms[i].forward_train(&y, split)?;
            x = ops::relu_forward(&y);
        }
        Ok(())
    }

    /// RPN heads on the tape.
    pub fn rpn_train(&self, tape: &mut Tape<T>, leaves: &TapeLeaves, feat: Var) -> Result<(Var, Var)> {
        let obj =
            tape.dense(feat, leaves.var("rpn.obj.w")?, leaves.var("rpn.obj.b")?);
        let reg =
            tape.dense(feat, leaves.var("rpn.reg.w")?, leaves.var("rpn.reg.b")?);
        Ok((obj, reg))
    }

    /// ROI head on the tape over the given boxes: crops, hidden layer, class
    /// logits `[B, n+1]` and deltas `[B, 4]`.
    pub fn roi_train(
        &self,
        tape: &mut Tape<T>,
        leaves: &TapeLeaves,
        feat: Var,
        rois: Vec<RoiWindow>,
    ) -> Result<(Var, Var)> {
        let b = rois.len();
        let grid = self.cfg.roi_grid;
        let c = self.cfg.channels[2];
        let crops = tape.roi_bilinear(feat, rois, grid, STRIDE as f64);
        let flat = tape.reshape(crops, &[b, grid * grid * c]);
        let h = tape.dense(flat, leaves.var("roi.fc1.w")?, leaves.var("roi.fc1.b")?);
        let h = tape.relu(h);
        let cls = tape.dense(h, leaves.var("roi.cls.w")?, leaves.var("roi.cls.b")?);
        let reg = tape.dense(h, leaves.var("roi.reg.w")?, leaves.var("roi.reg.b")?);
        Ok((cls, reg))
    }
}

/// Name -> leaf Var map for one tape.
pub struct TapeLeaves {
    map: HashMap<String, Var>,
}

impl TapeLeaves {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.map
            .get(name)
            .copied()
            .ok_or_else(|| Error::Train(format!("no tape leaf named {name}")))
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.map.iter()
    }
}
