//! Known-class detection evaluation (AP/mAP at IoU 0.5), the component
//! ablation harness, and the threshold sensitivity sweep.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boxes::{iou, BoundingBox};
use crate::detector::{DetectSettings, DetectorConfig, DetectorState};
use crate::error::{Error, Result};
use crate::norm::NormKind;
use crate::scenes::{CategoryVocabulary, SamplePools, Scene};
use crate::tensor::{stack, Scalar};
use crate::trainer::{run_training, RunContext, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub score_threshold: f64,
    pub nms_threshold: f64,
    pub max_detections: usize,
    /// Inference batch size (no effect on results).
    pub batch: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { score_threshold: 0.05, nms_threshold: 0.5, max_detections: 32, batch: 16 }
    }
}

impl EvalConfig {
    pub fn settings(&self) -> DetectSettings {
        DetectSettings {
            score_threshold: self.score_threshold,
            nms_threshold: self.nms_threshold,
            max_detections: self.max_detections,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CategoryAp {
    pub id: usize,
    pub name: String,
    /// Absent when the category has no ground truth in the pool.
    pub ap: Option<f64>,
    pub gt_count: usize,
    pub detection_count: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_category: Vec<CategoryAp>,
    /// Mean AP over known categories with at least one ground truth.
    pub map: f64,
    pub total_gt: usize,
    pub total_detections: usize,
    pub eval: EvalConfig,
    pub seed: u64,
}

/// All-points-interpolated average precision for one category, with
/// detections and truths grouped per image. Greedy matching in descending
/// score order; each truth matches at most one detection. `None` when the
/// category has no ground truth.
pub fn category_average_precision(
    detections_per_image: &[Vec<BoundingBox>],
    truths_per_image: &[Vec<BoundingBox>],
    iou_thr: f64,
) -> Option<f64> {
    assert_eq!(detections_per_image.len(), truths_per_image.len());
    let total_gt: usize = truths_per_image.iter().map(Vec::len).sum();
    if total_gt == 0 {
        return None;
    }

    // global rank: score desc, ties by (image, in-image index)
    let mut order: Vec<(usize, usize)> = Vec::new();
    for (img, dets) in detections_per_image.iter().enumerate() {
        for i in 0..dets.len() {
            order.push((img, i));
        }
    }
    order.sort_by(|&(ia, a), &(ib, b)| {
        let sa = detections_per_image[ia][a].score.unwrap_or(0.0);
        let sb = detections_per_image[ib][b].score.unwrap_or(0.0);
        sb.partial_cmp(&sa).unwrap().then(ia.cmp(&ib)).then(a.cmp(&b))
    });

    let mut used: Vec<Vec<bool>> = truths_per_image.iter().map(|t| vec![false; t.len()]).collect();
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut curve: Vec<(f64, f64)> = Vec::with_capacity(order.len()); // (recall, precision)
    for (img, i) in order {
        let det = &detections_per_image[img][i];
        let mut best: Option<(usize, f64)> = None;
        for (t, truth) in truths_per_image[img].iter().enumerate() {
            if used[img][t] {
                continue;
            }
            let v = iou(det, truth);
            if v >= iou_thr && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((t, v));
            }
        }
        match best {
            Some((t, _)) => {
                used[img][t] = true;
                tp += 1;
            }
            None => fp += 1,
        }
        curve.push((tp as f64 / total_gt as f64, tp as f64 / (tp + fp) as f64));
    }

    // precision envelope over the recall axis, integrated over recall steps
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for k in 0..curve.len() {
        let (r, _) = curve[k];
        if r > prev_recall {
            let envelope =
                curve[k..].iter().map(|&(_, p)| p).fold(0.0f64, f64::max);
            ap += (r - prev_recall) * envelope;
            prev_recall = r;
        }
    }
    Some(ap)
}

/// Flat convenience form: one detection list against one truth list.
pub fn average_precision(
    detections: &[BoundingBox],
    truths: &[BoundingBox],
    iou_thr: f64,
) -> Option<f64> {
    category_average_precision(&[detections.to_vec()], &[truths.to_vec()], iou_thr)
}

fn report_from_detections(
    detections: Vec<Vec<BoundingBox>>,
    test: &[Scene],
    vocab: &CategoryVocabulary,
    cfg: &EvalConfig,
    seed: u64,
) -> EvalReport {
    let n_known = vocab.num_known();
    let mut per_category = Vec::with_capacity(n_known);
    let mut aps = Vec::new();
    let total_detections: usize = detections.iter().map(Vec::len).sum();
    let mut total_gt = 0usize;
    for c in 0..n_known {
        let dets: Vec<Vec<BoundingBox>> = detections
            .iter()
            .map(|d| d.iter().filter(|b| b.category == Some(c)).cloned().collect())
            .collect();
        let truths: Vec<Vec<BoundingBox>> = test
            .iter()
            .map(|s| {
                s.annotations.iter().filter(|b| b.category == Some(c)).cloned().collect()
            })
            .collect();
        let gt_count: usize = truths.iter().map(Vec::len).sum();
        total_gt += gt_count;
        let ap = category_average_precision(&dets, &truths, 0.5);
        if let Some(v) = ap {
            aps.push(v);
        }
        per_category.push(CategoryAp {
            id: c,
            name: vocab.name(c).unwrap_or("?").to_string(),
            ap,
            gt_count,
            detection_count: dets.iter().map(Vec::len).sum(),
        });
    }
    let map = if aps.is_empty() { 0.0 } else { aps.iter().sum::<f64>() / aps.len() as f64 };
    EvalReport { per_category, map, total_gt, total_detections, eval: *cfg, seed }
}

/// Run inference over the test pool and score known-class AP@0.5.
pub fn evaluate<T: Scalar>(
    model: &DetectorState<T>,
    test: &[Scene],
    vocab: &CategoryVocabulary,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::Config("test pool is empty".into()));
    }
    let settings = cfg.settings();
    let mut detections: Vec<Vec<BoundingBox>> = Vec::with_capacity(test.len());
    for chunk in test.chunks(cfg.batch.max(1)) {
        let imgs: Vec<_> = chunk.iter().map(|s| s.image.cast::<T>()).collect();
        let batch = stack(&imgs)?;
        for dets in model.detect(&batch, &settings)? {
            detections.push(dets.into_iter().map(|d| d.bbox).collect());
        }
    }
    Ok(report_from_detections(detections, test, vocab, cfg, seed))
}

/// Score the metric pipeline itself by feeding the ground truth back as
/// detections; mAP is exactly 1.0 on any pool with ground truth.
pub fn evaluate_oracle(
    test: &[Scene],
    vocab: &CategoryVocabulary,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::Config("test pool is empty".into()));
    }
    let detections: Vec<Vec<BoundingBox>> = test
        .iter()
        .map(|s| {
            s.annotations
                .iter()
                .map(|b| b.clone().with_score(1.0).expect("unit score"))
                .collect()
        })
        .collect();
    Ok(report_from_detections(detections, test, vocab, cfg, seed))
}

/// The component toggles of one ablation row.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AblationToggles {
    pub flexible_labels: bool,
    pub interactive_teaching: bool,
    pub dbn: bool,
}

/// The six ablation rows: soft-pseudo-label baseline, each component alone,
/// the flexible+interactive pair, and the full method.
pub const ABLATION_ROWS: [AblationToggles; 6] = [
    AblationToggles { flexible_labels: false, interactive_teaching: false, dbn: false },
    AblationToggles { flexible_labels: true, interactive_teaching: false, dbn: false },
    AblationToggles { flexible_labels: false, interactive_teaching: true, dbn: false },
    AblationToggles { flexible_labels: false, interactive_teaching: false, dbn: true },
    AblationToggles { flexible_labels: true, interactive_teaching: true, dbn: false },
    AblationToggles { flexible_labels: true, interactive_teaching: true, dbn: true },
];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationRow {
    pub index: usize,
    pub flexible_labels: bool,
    pub interactive_teaching: bool,
    pub dbn: bool,
    /// One mAP per seed, in seed order; missing entries failed.
    pub maps: Vec<f64>,
    pub map_mean: f64,
    pub map_min: f64,
    pub map_max: f64,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    pub seeds: Vec<u64>,
}

/// Apply row toggles to a base configuration pair.
pub fn row_config(
    base_train: &TrainConfig,
    base_det: &DetectorConfig,
    t: AblationToggles,
) -> (TrainConfig, DetectorConfig) {
    let train = TrainConfig {
        flexible_labels: t.flexible_labels,
        interactive_teaching: t.interactive_teaching,
        dbn: t.dbn,
        ..base_train.clone()
    };
    let det = DetectorConfig {
        norm: if t.dbn { NormKind::DataSpecific } else { NormKind::Batch },
        ..base_det.clone()
    };
    (train, det)
}

fn train_and_score<T: Scalar>(
    pools: &SamplePools,
    det_cfg: &DetectorConfig,
    train_cfg: &TrainConfig,
    eval_cfg: &EvalConfig,
    seed: u64,
) -> Result<f64> {
    let out = run_training::<T>(pools, det_cfg, train_cfg, eval_cfg, seed, &RunContext::default())?;
    out.final_map
        .ok_or_else(|| Error::Eval("training run produced no final evaluation".into()))
}

/// Train and evaluate every ablation row over the given seeds (identical
/// seeds across rows, so row differences are purely configuration). Rows run
/// in parallel; a failing row is annotated rather than fatal.
pub fn run_ablation<T: Scalar>(
    pools: &SamplePools,
    base_det: &DetectorConfig,
    base_train: &TrainConfig,
    eval_cfg: &EvalConfig,
    seeds: &[u64],
) -> Result<AblationTable> {
    let jobs: Vec<(usize, usize)> = (0..ABLATION_ROWS.len())
        .flat_map(|r| (0..seeds.len()).map(move |s| (r, s)))
        .collect();
    let results: Vec<(usize, usize, std::result::Result<f64, String>)> = jobs
        .into_par_iter()
        .map(|(r, s)| {
            let (train, det) = row_config(base_train, base_det, ABLATION_ROWS[r]);
            let res = train_and_score::<T>(pools, &det, &train, eval_cfg, seeds[s])
                .map_err(|e| e.to_string());
            (r, s, res)
        })
        .collect();

    let mut rows = Vec::with_capacity(ABLATION_ROWS.len());
    for (r, t) in ABLATION_ROWS.iter().enumerate() {
        let mut maps = Vec::new();
        let mut failure = None;
        for s in 0..seeds.len() {
            match results.iter().find(|(rr, ss, _)| *rr == r && *ss == s) {
                Some((_, _, Ok(m))) => maps.push(*m),
                Some((_, _, Err(e))) => failure = Some(e.clone()),
                None => failure = Some("missing result".into()),
            }
        }
        let (mean, min, max) = summarize(&maps);
        rows.push(AblationRow {
            index: r + 1,
            flexible_labels: t.flexible_labels,
            interactive_teaching: t.interactive_teaching,
            dbn: t.dbn,
            maps,
            map_mean: mean,
            map_min: min,
            map_max: max,
            failure,
        });
    }
    Ok(AblationTable { rows, seeds: seeds.to_vec() })
}

fn summarize(maps: &[f64]) -> (f64, f64, f64) {
    if maps.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let mean = maps.iter().sum::<f64>() / maps.len() as f64;
    let min = maps.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = maps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (mean, min, max)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepPoint {
    pub tau_up: f64,
    pub tau_low: f64,
    pub map: Option<f64>,
    /// Set when the pair was invalid or the run failed.
    pub annotation: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepTable {
    pub points: Vec<SweepPoint>,
    pub seed: u64,
}

/// One training run per grid point: the upper grid holds tau_low at the base
/// value, the lower grid holds tau_up. Invalid pairs are skipped with an
/// annotation.
pub fn run_sensitivity_sweep<T: Scalar>(
    pools: &SamplePools,
    base_det: &DetectorConfig,
    base_train: &TrainConfig,
    eval_cfg: &EvalConfig,
    tau_up_grid: &[f64],
    tau_low_grid: &[f64],
    seed: u64,
) -> Result<SweepTable> {
    let mut pairs: Vec<(f64, f64)> = Vec::new();
    for &u in tau_up_grid {
        pairs.push((u, base_train.tau_low));
    }
    for &l in tau_low_grid {
        pairs.push((base_train.tau_up, l));
    }

    let points: Vec<SweepPoint> = pairs
        .into_par_iter()
        .map(|(tau_up, tau_low)| {
            if !(0.0 < tau_low && tau_low < tau_up && tau_up < 1.0) {
                return SweepPoint {
                    tau_up,
                    tau_low,
                    map: None,
                    annotation: Some(format!(
                        "skipped: invalid pair (tau_low {tau_low} >= tau_up {tau_up})"
                    )),
                };
            }
            let train = TrainConfig { tau_up, tau_low, ..base_train.clone() };
            match train_and_score::<T>(pools, base_det, &train, eval_cfg, seed) {
                Ok(map) => SweepPoint { tau_up, tau_low, map: Some(map), annotation: None },
                Err(e) => SweepPoint {
                    tau_up,
                    tau_low,
                    map: None,
                    annotation: Some(format!("failed: {e}")),
                },
            }
        })
        .collect();

    Ok(SweepTable { points, seed })
}

/// CSV rendering of an ablation table (header uses the toggle names).
pub fn ablation_csv(table: &AblationTable) -> String {
    let mut out = String::from("row,flexible_labels,interactive_teaching,dbn,map_mean,map_min,map_max,failure\n");
    for r in &table.rows {
        out.push_str(&format!(
            "{},{},{},{},{:.6},{:.6},{:.6},{}\n",
            r.index,
            r.flexible_labels,
            r.interactive_teaching,
            r.dbn,
            r.map_mean,
            r.map_min,
            r.map_max,
            r.failure.as_deref().unwrap_or("")
        ));
    }
    out
}

pub fn sweep_csv(table: &SweepTable) -> String {
    let mut out = String::from("tau_up,tau_low,map,annotation\n");
    for p in &table.points {
        out.push_str(&format!(
            "{:.4},{:.4},{},{}\n",
            p.tau_up,
            p.tau_low,
            p.map.map_or(String::new(), |m| format!("{m:.6}")),
            p.annotation.as_deref().unwrap_or("")
        ));
    }
    out
}
