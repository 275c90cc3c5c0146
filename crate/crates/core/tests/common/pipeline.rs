//! The whole command-line workflow on the PNG fixtures.

use std::fs;
use std::path::{Path, PathBuf};

use cellmerge::cli;
use cellmerge::evaluate::{ClassRef, PredictionRecord};
use cellmerge::manifest::Manifest;

use super::fixtures;

pub fn cellmerge(args: &[&str]) -> i32 {
    let mut argv = vec!["cellmerge", "--quiet"];
    argv.extend_from_slice(args);
    cli::run(argv)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Every file whose bytes must not depend on the run.
pub fn artifacts(work: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for dir in ["std_smear", "std_cells", "merged", "audited", "split/train", "split/val"] {
        out.push(work.join(dir).join("annotations.csv"));
        out.push(work.join(dir).join("metadata.json"));
    }
    out.push(work.join("split/train/filelist.txt"));
    out.push(work.join("split/val/filelist.txt"));
    out.push(work.join("eval/report.json"));
    out
}

/// Predictions derived from the validation ground truth: shifted boxes, a spurious
/// low-score box per image, and ranked scores.
fn write_predictions(val: &Manifest, path: &Path) {
    let mut records = Vec::new();
    for (i, a) in val.annotations.iter().enumerate() {
        records.push(PredictionRecord {
            filename: a.filename.clone(),
            class: ClassRef::Name(val.classes.name_of(a.class_id).unwrap().to_string()),
            bbox: [a.bbox.x + (i % 3) as f64, a.bbox.y + 1.0, a.bbox.w, a.bbox.h],
            score: 0.9 - 0.01 * (i % 10) as f64,
        });
    }
    for f in val.images.keys() {
        records.push(PredictionRecord {
            filename: f.clone(),
            class: ClassRef::Id(1),
            bbox: [0.0, 0.0, 40.0, 40.0],
            score: 0.2,
        });
    }
    fs::write(path, serde_json::to_string_pretty(&records).unwrap()).unwrap();
}

/// Standardize → merge → audit/drop → split → evaluate. Panics on any failing step.
pub fn run(work: &Path, seed: u64, threads: Option<usize>) {
    let seed = seed.to_string();
    let threads = threads.map(|t| t.to_string());
    let mut global: Vec<&str> = vec!["--seed", &seed];
    if let Some(t) = &threads {
        global.extend(["--threads", t]);
    }
    let step = |args: &[&str]| {
        let mut all = global.clone();
        all.extend_from_slice(args);
        assert_eq!(cellmerge(&all), cli::EXIT_OK, "step failed: {args:?}");
    };

    let smear = work.join("src_smear");
    let cells = work.join("src_cells");
    if !smear.exists() {
        fixtures::png_box_source(&smear);
        fixtures::png_label_source(&cells);
    }
    let p = |rel: &str| work.join(rel);
    step(&["standardize", "--in", s(&smear), "--out", s(&p("std_smear")), "--name", "Smear"]);
    step(&["standardize", "--in", s(&cells), "--out", s(&p("std_cells")), "--name", "Cells"]);
    step(&["merge", s(&p("std_smear")), s(&p("std_cells")), "--out", s(&p("merged"))]);
    step(&["--format", "json", "audit", s(&p("merged")), "--drop", "platelet", "--out", s(&p("audited"))]);
    step(&["split", s(&p("audited")), "--out", s(&p("split")), "--train-fraction", "0.7"]);
    let val = Manifest::load(&p("split/val")).unwrap();
    write_predictions(&val, &p("preds.json"));
    step(&["evaluate", "--gt", s(&p("split/val")), "--pred", s(&p("preds.json")), "--out", s(&p("eval"))]);
}
