//! Seeded random evaluation scenes: ≤ 10 ground-truth boxes, ≤ 20 detections,
//! ≤ 4 classes, spread over 1–3 images.
//!
//! Coordinates are integers so IoU values are exact, and half of the scores are
//! quantized to create ties; both exercise the tie-breaking rules.

use cellmerge::evaluate::Detection;
use cellmerge::geometry::BoundingBox;
use cellmerge::manifest::{Annotation, ClassRegistry, ImageMeta, Manifest};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Scene {
    pub manifest: Manifest,
    pub detections: Vec<Detection>,
}

const CLASS_NAMES: [&str; 4] = ["lymphocyte", "neutrophil", "platelet", "basophil"];

fn random_side(rng: &mut ChaCha8Rng) -> f64 {
    // spans all three size strata
    match rng.gen_range(0..3) {
        0 => rng.gen_range(4..32) as f64,
        1 => rng.gen_range(28..100) as f64,
        _ => rng.gen_range(90..160) as f64,
    }
}

fn random_box(rng: &mut ChaCha8Rng) -> BoundingBox {
    let w = random_side(rng);
    let h = if rng.gen_bool(0.5) { w } else { random_side(rng) };
    BoundingBox::new(rng.gen_range(0..350) as f64, rng.gen_range(0..350) as f64, w, h)
}

fn jittered(rng: &mut ChaCha8Rng, b: &BoundingBox, spread: i32) -> BoundingBox {
    let d = |rng: &mut ChaCha8Rng| rng.gen_range(-spread..=spread) as f64;
    let w = (b.w + d(rng)).max(1.0);
    let h = (b.h + d(rng)).max(1.0);
    BoundingBox::new((b.x + d(rng)).max(0.0), (b.y + d(rng)).max(0.0), w, h)
}

fn random_score(rng: &mut ChaCha8Rng) -> f64 {
    if rng.gen_bool(0.5) {
        rng.gen_range(1..=20) as f64 / 20.0
    } else {
        rng.gen_range(0.001..=1.0)
    }
}

pub fn scene(seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_classes = rng.gen_range(1..=4);
    let n_images = rng.gen_range(1..=3);
    let mut m = Manifest::new(ClassRegistry::from_names(&CLASS_NAMES[..n_classes]));
    let files: Vec<String> = (0..n_images).map(|i| format!("{:08}.png", i + 1)).collect();
    for f in &files {
        m.images.insert(f.clone(), ImageMeta::with_source("scene"));
    }

    let n_gt = rng.gen_range(0..=10);
    for _ in 0..n_gt {
        let bbox = if !m.annotations.is_empty() && rng.gen_bool(0.15) {
            // overlapping neighbour of an existing GT
            let other = m.annotations[rng.gen_range(0..m.annotations.len())].bbox;
            jittered(&mut rng, &other, 12)
        } else {
            random_box(&mut rng)
        };
        m.annotations.push(Annotation {
            filename: files[rng.gen_range(0..n_images)].clone(),
            class_id: rng.gen_range(1..=n_classes as u32),
            bbox,
        });
    }

    let n_det = rng.gen_range(0..=20);
    let mut dets: Vec<Detection> = Vec::with_capacity(n_det);
    for _ in 0..n_det {
        let roll: f64 = rng.gen();
        let det = if roll < 0.55 && !m.annotations.is_empty() {
            let gt = &m.annotations[rng.gen_range(0..m.annotations.len())];
            let class_id = if rng.gen_bool(0.85) { gt.class_id } else { rng.gen_range(1..=n_classes as u32) };
            let spread = [0, 2, 6, 15][rng.gen_range(0..4)];
            Detection {
                filename: gt.filename.clone(),
                class_id,
                bbox: jittered(&mut rng, &gt.bbox, spread),
                score: random_score(&mut rng),
            }
        } else if roll < 0.7 && !dets.is_empty() {
            let prev = dets[rng.gen_range(0..dets.len())].clone();
            Detection {
                score: random_score(&mut rng),
                ..prev
            }
        } else {
            Detection {
                filename: files[rng.gen_range(0..n_images)].clone(),
                class_id: rng.gen_range(1..=n_classes as u32),
                bbox: random_box(&mut rng),
                score: random_score(&mut rng),
            }
        };
        dets.push(det);
    }
    Scene {
        manifest: m,
        detections: dets,
    }
}

/// Ground truth echoed back as detections with score 1.
pub fn perfect_detections(m: &Manifest) -> Vec<Detection> {
    m.annotations
        .iter()
        .map(|a| Detection {
            filename: a.filename.clone(),
            class_id: a.class_id,
            bbox: a.bbox,
            score: 1.0,
        })
        .collect()
}
