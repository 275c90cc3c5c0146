//! Naive reference evaluator, written straight from the metric definitions.
//!
//! It shares nothing with the library's evaluation path except the input types: every
//! (class, area, threshold, max-dets) cell is recomputed from scratch, detections are
//! ordered by selection, and the 101-point AP uses exact integer recall comparisons.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use cellmerge::evaluate::Detection;
use cellmerge::geometry::BoundingBox;
use cellmerge::manifest::Manifest;

pub const MAX_DETS: [usize; 3] = [1, 10, 100];

pub fn thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

fn overlap(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let left = if a.x > b.x { a.x } else { b.x };
    let top = if a.y > b.y { a.y } else { b.y };
    let right = if a.x + a.w < b.x + b.w { a.x + a.w } else { b.x + b.w };
    let bottom = if a.y + a.h < b.y + b.h { a.y + a.h } else { b.y + b.h };
    if right <= left || bottom <= top {
        return 0.0;
    }
    let inter = (right - left) * (bottom - top);
    let union = a.w * a.h + b.w * b.h - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// 0 = all, 1 = small, 2 = medium, 3 = large.
fn in_area(b: &BoundingBox, area: usize) -> bool {
    let a = b.w * b.h;
    match area {
        0 => true,
        1 => a < 1024.0,
        2 => (1024.0..9216.0).contains(&a),
        _ => a >= 9216.0,
    }
}

/// Ground truth and scored detections of one image, for one class.
type ImageCase = (Vec<BoundingBox>, Vec<(BoundingBox, f64)>);

#[derive(Clone, Copy, PartialEq, Eq)]
enum Status {
    Hit,
    Miss,
    Skip,
}

/// Repeatedly takes the highest remaining score, earliest index on ties.
fn rank_by_score(scores: &[f64]) -> Vec<usize> {
    let mut left: Vec<usize> = (0..scores.len()).collect();
    let mut out = Vec::new();
    while !left.is_empty() {
        let mut best = 0;
        for j in 1..left.len() {
            if scores[left[j]] > scores[left[best]] {
                best = j;
            }
        }
        out.push(left.remove(best));
    }
    out
}

#[derive(Debug, Clone)]
pub struct RefClass {
    pub name: String,
    pub n_gt: [usize; 4],
    /// `[area][threshold]`, -1 when the area has no ground truth.
    pub ap: Vec<Vec<f64>>,
    /// `[max_dets][area][threshold]`.
    pub recall: Vec<Vec<Vec<f64>>>,
}

/// One cell: returns (AP, final recall) or `None` without ground truth.
fn cell(
    images: &[ImageCase],
    area: usize,
    thr: f64,
    max_dets: usize,
) -> Option<(f64, f64)> {
    let n_gt: usize = images.iter().map(|(g, _)| g.iter().filter(|b| in_area(b, area)).count()).sum();
    if n_gt == 0 {
        return None;
    }
    // (score, image, rank, status)
    let mut pooled: Vec<(f64, usize, usize, Status)> = Vec::new();
    for (img, (gts, dets)) in images.iter().enumerate() {
        let scores: Vec<f64> = dets.iter().map(|d| d.1).collect();
        let ranked = rank_by_score(&scores);
        let mut claimed = vec![false; gts.len()];
        for (rank, &di) in ranked.iter().take(max_dets).enumerate() {
            let det = &dets[di].0;
            let mut pick: Option<usize> = None;
            for g in 0..gts.len() {
                if claimed[g] {
                    continue;
                }
                let v = overlap(det, &gts[g]);
                if v < thr {
                    continue;
                }
                pick = match pick {
                    None => Some(g),
                    Some(p) => {
                        let p_in = in_area(&gts[p], area);
                        let g_in = in_area(&gts[g], area);
                        if g_in && !p_in {
                            Some(g)
                        } else if p_in && !g_in {
                            Some(p)
                        } else if v > overlap(det, &gts[p]) {
                            Some(g)
                        } else {
                            Some(p)
                        }
                    }
                };
            }
            let status = match pick {
                Some(g) => {
                    claimed[g] = true;
                    if in_area(&gts[g], area) {
                        Status::Hit
                    } else {
                        Status::Skip
                    }
                }
                None if !in_area(det, area) => Status::Skip,
                None => Status::Miss,
            };
            pooled.push((dets[di].1, img, rank, status));
        }
    }
    pooled.sort_by(|a, b| match b.0.partial_cmp(&a.0).unwrap() {
        Ordering::Equal => (a.1, a.2).cmp(&(b.1, b.2)),
        o => o,
    });
    let mut tp = 0usize;
    let mut k = 0usize;
    let mut curve: Vec<(usize, usize)> = Vec::new(); // (tp, rank)
    for p in pooled.iter().filter(|p| p.3 != Status::Skip) {
        k += 1;
        if p.3 == Status::Hit {
            tp += 1;
        }
        curve.push((tp, k));
    }
    let mut total = 0.0;
    for i in 0..=100usize {
        let mut best = 0.0f64;
        for &(tp_k, rank) in &curve {
            if tp_k * 100 >= i * n_gt {
                let precision = tp_k as f64 / rank as f64;
                if precision > best {
                    best = precision;
                }
            }
        }
        total += best;
    }
    Some((total / 101.0, tp as f64 / n_gt as f64))
}

pub fn reference_classes(m: &Manifest, dets: &[Detection]) -> Vec<RefClass> {
    let image_names: Vec<&String> = m.images.keys().collect();
    let mut out = Vec::new();
    for class in m.classes.iter() {
        let images: Vec<ImageCase> = image_names
            .iter()
            .map(|name| {
                let g = m
                    .annotations
                    .iter()
                    .filter(|a| &&a.filename == name && a.class_id == class.id)
                    .map(|a| a.bbox)
                    .collect();
                let d = dets
                    .iter()
                    .filter(|d| &&d.filename == name && d.class_id == class.id)
                    .map(|d| (d.bbox, d.score))
                    .collect();
                (g, d)
            })
            .collect();
        let mut n_gt = [0usize; 4];
        for (area, slot) in n_gt.iter_mut().enumerate() {
            *slot = images.iter().map(|(g, _)| g.iter().filter(|b| in_area(b, area)).count()).sum();
        }
        let mut ap = vec![vec![-1.0; 10]; 4];
        let mut recall = vec![vec![vec![-1.0; 10]; 4]; 3];
        for area in 0..4 {
            for (t, &thr) in thresholds().iter().enumerate() {
                for (mi, &md) in MAX_DETS.iter().enumerate() {
                    if let Some((a, r)) = cell(&images, area, thr, md) {
                        recall[mi][area][t] = r;
                        if md == 100 {
                            ap[area][t] = a;
                        }
                    }
                }
            }
        }
        out.push(RefClass {
            name: class.name.clone(),
            n_gt,
            ap,
            recall,
        });
    }
    out
}

fn average(values: &[f64]) -> f64 {
    if values.is_empty() {
        -1.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Same labels as `common::summary_values`.
pub fn reference_summary(m: &Manifest, dets: &[Detection]) -> BTreeMap<String, f64> {
    let classes = reference_classes(m, dets);
    let mut out = BTreeMap::new();
    let over = |area: usize, f: &dyn Fn(&RefClass) -> Vec<f64>| -> f64 {
        let v: Vec<f64> = classes.iter().filter(|c| c.n_gt[area] > 0).flat_map(f).collect();
        average(&v)
    };
    out.insert("map_50_95".into(), over(0, &|c| c.ap[0].clone()));
    out.insert("map_50".into(), over(0, &|c| vec![c.ap[0][0]]));
    out.insert("map_75".into(), over(0, &|c| vec![c.ap[0][5]]));
    out.insert("map_small".into(), over(1, &|c| c.ap[1].clone()));
    out.insert("map_medium".into(), over(2, &|c| c.ap[2].clone()));
    out.insert("map_large".into(), over(3, &|c| c.ap[3].clone()));
    out.insert("mar_1".into(), over(0, &|c| c.recall[0][0].clone()));
    out.insert("mar_10".into(), over(0, &|c| c.recall[1][0].clone()));
    out.insert("mar_100".into(), over(0, &|c| c.recall[2][0].clone()));
    for c in classes.iter().filter(|c| c.n_gt[0] > 0) {
        out.insert(format!("ap50[{}]", c.name), c.ap[0][0]);
        out.insert(format!("ap[{}]", c.name), average(&c.ap[0]));
    }
    out
}
