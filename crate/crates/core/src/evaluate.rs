//! COCO-style detection evaluation.
//!
//! Detections are matched per image and class: in descending score order (ties keep
//! input order), each detection claims the unmatched ground truth with the highest IoU
//! at or above the threshold (IoU ties go to the lower GT index). Within a size stratum,
//! ground truth outside the stratum is ignored: a detection matched to it counts as
//! neither TP nor FP, and so does an unmatched detection whose own area lies outside the
//! stratum. Non-ignored ground truth is always preferred over ignored ground truth.
//!
//! Per class and threshold the matches of all images are pooled by descending score
//! (ties: image order, then rank within the image) and summarised with 101-point
//! interpolated average precision.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audit::render_table;
use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox, SizeClass, SizeThresholds};
use crate::manifest::Manifest;

pub const IOU_THRESHOLDS: [f64; 10] = [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95];
pub const MAX_DETS: [usize; 3] = [1, 10, 100];
pub const RECALL_POINTS: usize = 101;

/// Result value for metrics whose population is empty.
pub const ABSENT: f64 = -1.0;

const T50: usize = 0;
const T75: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AreaRange {
    All,
    Size(SizeClass),
}

impl AreaRange {
    pub const ALL: [AreaRange; 4] = [
        AreaRange::All,
        AreaRange::Size(SizeClass::Small),
        AreaRange::Size(SizeClass::Medium),
        AreaRange::Size(SizeClass::Large),
    ];

    fn excludes(&self, b: &BoundingBox, t: &SizeThresholds) -> bool {
        match self {
            AreaRange::All => false,
            AreaRange::Size(s) => t.classify(b.area()) != *s,
        }
    }
}

/// A predicted box resolved against a manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub filename: String,
    pub class_id: u32,
    pub bbox: BoundingBox,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassRef {
    Id(u32),
    Name(String),
}

/// One entry of `predictions.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub filename: String,
    pub class: ClassRef,
    pub bbox: [f64; 4],
    pub score: f64,
}

pub fn load_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// Resolves names and ids, rejecting every unknown filename, unknown class, bad score
/// or bad box in one go. Background (id 0 or `"background"`) entries are discarded.
pub fn resolve_predictions(m: &Manifest, records: &[PredictionRecord]) -> Result<Vec<Detection>> {
    let mut problems = Vec::new();
    let mut out = Vec::with_capacity(records.len());
    let mut background = 0usize;
    for (i, r) in records.iter().enumerate() {
        let class_id = match &r.class {
            ClassRef::Id(0) => {
                background += 1;
                continue;
            }
            ClassRef::Name(n) if n == "background" && m.classes.by_name(n).is_none() => {
                background += 1;
                continue;
            }
            ClassRef::Id(id) => m.classes.by_id(*id).map(|c| c.id),
            ClassRef::Name(n) => m.classes.by_name(n).map(|c| c.id),
        };
        let mut bad = Vec::new();
        if !m.images.contains_key(&r.filename) {
            bad.push(format!("unknown image `{}`", r.filename));
        }
        if class_id.is_none() {
            bad.push(format!("unknown class {:?}", r.class));
        }
        if !(0.0..=1.0).contains(&r.score) {
            bad.push(format!("score {} outside [0, 1]", r.score));
        }
        let bbox = BoundingBox::new(r.bbox[0], r.bbox[1], r.bbox[2], r.bbox[3]);
        if !bbox.is_valid() {
            bad.push(format!("invalid box {:?}", r.bbox));
        }
        if bad.is_empty() {
            out.push(Detection {
                filename: r.filename.clone(),
                class_id: class_id.expect("checked"),
                bbox,
                score: r.score,
            });
        } else {
            problems.push(format!("prediction {}: {}", i, bad.join("; ")));
        }
    }
    if background > 0 {
        warn!("ignoring {background} background prediction(s)");
    }
    if problems.is_empty() {
        Ok(out)
    } else {
        Err(Error::Validation(problems))
    }
}

/// Matching of one image+class at one threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Input indices of the processed detections, best score first, truncated to `max_dets`.
    pub order: Vec<usize>,
    /// Matched ground-truth index per processed detection.
    pub matched: Vec<Option<usize>>,
    pub is_tp: Vec<bool>,
    pub n_gt: usize,
}

/// Indices sorted by descending score; equal scores keep input order.
pub fn score_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Tp,
    Fp,
    Ignored,
}

/// Greedy matching over detections already in processing order.
///
/// `ious[d][g]`; returns the matched GT per detection.
fn greedy_match(ious: &[Vec<f64>], gt_ignore: &[bool], thr: f64) -> Vec<Option<usize>> {
    let n_gt = gt_ignore.len();
    let mut taken = vec![false; n_gt];
    let mut out = Vec::with_capacity(ious.len());
    for row in ious {
        // (ignored, iou, index) of the current best candidate
        let mut best: Option<(bool, f64, usize)> = None;
        for g in 0..n_gt {
            if taken[g] || row[g] < thr {
                continue;
            }
            let cand = (gt_ignore[g], row[g], g);
            best = match best {
                None => Some(cand),
                Some(b) => {
                    let better = match (cand.0, b.0) {
                        (false, true) => true,
                        (true, false) => false,
                        _ => cand.1 > b.1,
                    };
                    Some(if better { cand } else { b })
                }
            };
        }
        if let Some((_, _, g)) = best {
            taken[g] = true;
        }
        out.push(best.map(|b| b.2));
    }
    out
}

fn iou_matrix(dets: &[&BoundingBox], gts: &[&BoundingBox]) -> Vec<Vec<f64>> {
    dets.iter().map(|d| gts.iter().map(|g| iou(d, g)).collect()).collect()
}

/// Matches scored detections against the ground truth of one image and class.
pub fn match_detections(gts: &[BoundingBox], dets: &[(BoundingBox, f64)], iou_thr: f64, max_dets: usize) -> MatchResult {
    let scores: Vec<f64> = dets.iter().map(|d| d.1).collect();
    let mut order = score_order(&scores);
    order.truncate(max_dets);
    let det_boxes: Vec<&BoundingBox> = order.iter().map(|&i| &dets[i].0).collect();
    let gt_boxes: Vec<&BoundingBox> = gts.iter().collect();
    let ious = iou_matrix(&det_boxes, &gt_boxes);
    let matched = greedy_match(&ious, &vec![false; gts.len()], iou_thr);
    MatchResult {
        is_tp: matched.iter().map(Option::is_some).collect(),
        order,
        matched,
        n_gt: gts.len(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub precision: f64,
    pub recall: f64,
}

/// Cumulative precision and recall at every rank; `None` when there is no ground truth.
pub fn pr_points(flags: &[bool], n_gt: usize) -> Option<Vec<PrPoint>> {
    if n_gt == 0 {
        return None;
    }
    let mut tp = 0usize;
    Some(
        flags
            .iter()
            .enumerate()
            .map(|(k, &hit)| {
                tp += usize::from(hit);
                PrPoint {
                    precision: tp as f64 / (k + 1) as f64,
                    recall: tp as f64 / n_gt as f64,
                }
            })
            .collect(),
    )
}

/// 101-point interpolated AP over a curve with non-decreasing recall.
pub fn average_precision(points: &[PrPoint]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let mut envelope: Vec<f64> = points.iter().map(|p| p.precision).collect();
    for i in (0..envelope.len() - 1).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut sum = 0.0;
    for i in 0..RECALL_POINTS {
        let r = i as f64 / (RECALL_POINTS - 1) as f64;
        let idx = points.partition_point(|p| p.recall < r);
        if idx < points.len() {
            sum += envelope[idx];
        }
    }
    sum / RECALL_POINTS as f64
}

/// Scores of one class: `[area][threshold]` for AP and `[max_dets][area][threshold]` for recall.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassEvaluation {
    pub class_id: u32,
    pub name: String,
    /// Non-ignored ground truth per area range.
    pub n_gt: [usize; 4],
    pub ap: [[f64; 10]; 4],
    pub recall: [[[f64; 10]; 4]; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub classes: Vec<ClassEvaluation>,
}

/// A pooled detection: score, rank within its image, and outcome per (area, threshold).
struct Pooled {
    score: f64,
    rank: usize,
    outcome: [[Outcome; 10]; 4],
}

fn evaluate_class(
    class_id: u32,
    name: &str,
    gts_by_image: &[Vec<&BoundingBox>],
    dets_by_image: &[Vec<(&BoundingBox, f64)>],
    sizes: &SizeThresholds,
) -> ClassEvaluation {
    let max_keep = *MAX_DETS.last().expect("non-empty");
    let mut n_gt = [0usize; 4];
    let mut pooled: Vec<Pooled> = Vec::new();

    for (gts, dets) in gts_by_image.iter().zip(dets_by_image) {
        for (a, area) in AreaRange::ALL.iter().enumerate() {
            n_gt[a] += gts.iter().filter(|g| !area.excludes(g, sizes)).count();
        }
        if dets.is_empty() {
            continue;
        }
        let scores: Vec<f64> = dets.iter().map(|d| d.1).collect();
        let mut order = score_order(&scores);
        order.truncate(max_keep);
        let det_boxes: Vec<&BoundingBox> = order.iter().map(|&i| dets[i].0).collect();
        let ious = iou_matrix(&det_boxes, gts);

        let mut outcomes = vec![[[Outcome::Fp; 10]; 4]; order.len()];
        for (a, area) in AreaRange::ALL.iter().enumerate() {
            let gt_ignore: Vec<bool> = gts.iter().map(|g| area.excludes(g, sizes)).collect();
            for (t, &thr) in IOU_THRESHOLDS.iter().enumerate() {
                let matched = greedy_match(&ious, &gt_ignore, thr);
                for (d, m) in matched.iter().enumerate() {
                    outcomes[d][a][t] = match m {
                        Some(g) if gt_ignore[*g] => Outcome::Ignored,
                        Some(_) => Outcome::Tp,
                        None if area.excludes(det_boxes[d], sizes) => Outcome::Ignored,
                        None => Outcome::Fp,
                    };
                }
            }
        }
        for (rank, (&i, outcome)) in order.iter().zip(outcomes).enumerate() {
            pooled.push(Pooled {
                score: dets[i].1,
                rank,
                outcome,
            });
        }
    }
    // stable: equal scores stay in image order, then rank order
    pooled.sort_by(|a, b| b.score.total_cmp(&a.score));

    let mut ap = [[ABSENT; 10]; 4];
    let mut recall = [[[ABSENT; 10]; 4]; 3];
    for a in 0..4 {
        if n_gt[a] == 0 {
            continue;
        }
        for t in 0..IOU_THRESHOLDS.len() {
            for (m, &max_dets) in MAX_DETS.iter().enumerate() {
                let flags: Vec<bool> = pooled
                    .iter()
                    .filter(|p| p.rank < max_dets && p.outcome[a][t] != Outcome::Ignored)
                    .map(|p| p.outcome[a][t] == Outcome::Tp)
                    .collect();
                let points = pr_points(&flags, n_gt[a]).expect("n_gt > 0");
                recall[m][a][t] = points.last().map_or(0.0, |p| p.recall);
                if max_dets == max_keep {
                    ap[a][t] = average_precision(&points);
                }
            }
        }
    }
    ClassEvaluation {
        class_id,
        name: name.to_string(),
        n_gt,
        ap,
        recall,
    }
}

/// Runs the full evaluation. Every detection must reference an image and class of `m`.
pub fn evaluate(m: &Manifest, dets: &[Detection]) -> Result<Evaluation> {
    evaluate_with(m, dets, &SizeThresholds::default())
}

pub fn evaluate_with(m: &Manifest, dets: &[Detection], sizes: &SizeThresholds) -> Result<Evaluation> {
    let mut problems = Vec::new();
    for (i, d) in dets.iter().enumerate() {
        if !m.images.contains_key(&d.filename) {
            problems.push(format!("detection {i}: unknown image `{}`", d.filename));
        }
        if m.classes.by_id(d.class_id).is_none() {
            problems.push(format!("detection {i}: unknown class id {}", d.class_id));
        }
        if !(0.0..=1.0).contains(&d.score) {
            problems.push(format!("detection {i}: score {} outside [0, 1]", d.score));
        }
    }
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }

    let image_index: HashMap<&str, usize> = m.images.keys().enumerate().map(|(i, k)| (k.as_str(), i)).collect();
    let class_index: HashMap<u32, usize> = m.classes.iter().enumerate().map(|(i, c)| (c.id, i)).collect();
    let n_images = m.image_count();
    let n_classes = m.classes.len();

    let mut gts: Vec<Vec<Vec<&BoundingBox>>> = vec![vec![Vec::new(); n_images]; n_classes];
    for a in &m.annotations {
        gts[class_index[&a.class_id]][image_index[a.filename.as_str()]].push(&a.bbox);
    }
    let mut pdets: Vec<Vec<Vec<(&BoundingBox, f64)>>> = vec![vec![Vec::new(); n_images]; n_classes];
    for d in dets {
        pdets[class_index[&d.class_id]][image_index[d.filename.as_str()]].push((&d.bbox, d.score));
    }

    let classes = m
        .classes
        .iter()
        .collect::<Vec<_>>()
        .par_iter()
        .enumerate()
        .map(|(k, c)| evaluate_class(c.id, &c.name, &gts[k], &pdets[k], sizes))
        .collect();
    Ok(Evaluation { classes })
}

/// Aggregate metrics. Ratios are in `[0, 1]`; `-1` marks an empty population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub map_50_95: f64,
    pub map_50: f64,
    pub map_75: f64,
    pub map_small: f64,
    pub map_medium: f64,
    pub map_large: f64,
    pub mar_1: f64,
    pub mar_10: f64,
    pub mar_100: f64,
    /// AP@.50 for every class with ground truth.
    pub per_class_ap50: IndexMap<String, f64>,
    /// AP@[.50:.95] for every class with ground truth.
    pub per_class_ap: IndexMap<String, f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        ABSENT
    } else {
        sum / n as f64
    }
}

fn mean10(v: &[f64; 10]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

impl Evaluation {
    fn present(&self, area: usize) -> impl Iterator<Item = &ClassEvaluation> {
        self.classes.iter().filter(move |c| c.n_gt[area] > 0)
    }

    /// Class-mean AP at one threshold index over the "all" range.
    pub fn map_at(&self, t: usize) -> f64 {
        mean(self.present(0).map(|c| c.ap[0][t]))
    }

    pub fn mar_at(&self, max_dets_index: usize) -> f64 {
        mean(self.present(0).map(|c| mean10(&c.recall[max_dets_index][0])))
    }

    pub fn summary(&self) -> EvalSummary {
        let area_map = |a: usize| mean(self.present(a).map(|c| mean10(&c.ap[a])));
        EvalSummary {
            map_50_95: area_map(0),
            map_50: self.map_at(T50),
            map_75: self.map_at(T75),
            map_small: area_map(1),
            map_medium: area_map(2),
            map_large: area_map(3),
            mar_1: self.mar_at(0),
            mar_10: self.mar_at(1),
            mar_100: self.mar_at(2),
            per_class_ap50: self.present(0).map(|c| (c.name.clone(), c.ap[0][T50])).collect(),
            per_class_ap: self.present(0).map(|c| (c.name.clone(), mean10(&c.ap[0]))).collect(),
        }
    }
}

pub fn coco_summary(m: &Manifest, dets: &[Detection]) -> Result<EvalSummary> {
    Ok(evaluate(m, dets)?.summary())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerClassRow {
    pub class: String,
    pub baseline: Option<f64>,
    pub ap: f64,
    pub delta: Option<f64>,
}

/// Per-class AP@.50 rows, best first; with a baseline, each row also carries `ap - baseline`.
pub fn per_class_table(s: &EvalSummary, baseline: Option<&EvalSummary>) -> Vec<PerClassRow> {
    let mut rows: Vec<PerClassRow> = s
        .per_class_ap50
        .iter()
        .map(|(class, &ap)| {
            let base = baseline.and_then(|b| b.per_class_ap50.get(class).copied());
            PerClassRow {
                class: class.clone(),
                baseline: base,
                ap,
                delta: base.map(|b| ap - b),
            }
        })
        .collect();
    rows.sort_by(|a, b| b.ap.total_cmp(&a.ap).then_with(|| a.class.cmp(&b.class)));
    rows
}

fn fmt4(v: f64) -> String {
    if v == ABSENT {
        "-1".to_string()
    } else {
        format!("{v:.4}")
    }
}

fn fmt_delta(v: f64) -> String {
    let s = format!("{v:+.4}");
    if s == "-0.0000" {
        "+0.0000".to_string()
    } else {
        s
    }
}

/// Plain-text report: headline metrics, then the per-class AP@.50 table.
pub fn report_text(s: &EvalSummary, baseline: Option<&EvalSummary>) -> String {
    let metrics: [(&str, f64, Option<f64>); 9] = [
        ("mAP (IoU .50:.95)", s.map_50_95, baseline.map(|b| b.map_50_95)),
        ("mAP@.50", s.map_50, baseline.map(|b| b.map_50)),
        ("mAP@.75", s.map_75, baseline.map(|b| b.map_75)),
        ("mAP (small objects)", s.map_small, baseline.map(|b| b.map_small)),
        ("mAP (medium objects)", s.map_medium, baseline.map(|b| b.map_medium)),
        ("mAP (large objects)", s.map_large, baseline.map(|b| b.map_large)),
        ("mAR (1 Detection)", s.mar_1, baseline.map(|b| b.mar_1)),
        ("mAR (10 Detections)", s.mar_10, baseline.map(|b| b.mar_10)),
        ("mAR (100 Detections)", s.mar_100, baseline.map(|b| b.mar_100)),
    ];
    let mut out = String::new();
    match baseline {
        None => {
            let rows: Vec<[String; 2]> = metrics.iter().map(|(n, v, _)| [n.to_string(), fmt4(*v)]).collect();
            out.push_str(&render_table(&["Metric", "Value"], &rows, false));
        }
        Some(_) => {
            let rows: Vec<[String; 3]> = metrics
                .iter()
                .map(|(n, v, b)| [n.to_string(), fmt4(b.unwrap_or(ABSENT)), fmt4(*v)])
                .collect();
            out.push_str(&render_table(&["Metric", "Baseline", "Value"], &rows, false));
        }
    }

    out.push_str("\nPer-class AP@.50\n");
    let table = per_class_table(s, baseline);
    match baseline {
        None => {
            let rows: Vec<[String; 2]> = table.iter().map(|r| [r.class.clone(), fmt4(r.ap)]).collect();
            out.push_str(&render_table(&["Class", "AP@.50"], &rows, false));
        }
        Some(_) => {
            let rows: Vec<[String; 4]> = table
                .iter()
                .map(|r| {
                    [
                        r.class.clone(),
                        r.baseline.map_or("-".to_string(), fmt4),
                        fmt4(r.ap),
                        r.delta.map_or("-".to_string(), fmt_delta),
                    ]
                })
                .collect();
            out.push_str(&render_table(&["Class", "Baseline", "AP@.50", "Δ"], &rows, false));
        }
    }
    let _ = writeln!(out);
    out
}
