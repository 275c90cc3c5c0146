//! Seeded image-level train/validation partition.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde_json::json;

use crate::error::{Error, Result};
use crate::manifest::Manifest;
use crate::seed;

pub const DEFAULT_TRAIN_FRACTION: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: DEFAULT_TRAIN_FRACTION,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.train_fraction > 0.0 && self.train_fraction < 1.0 {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "train fraction must be strictly between 0 and 1 (got {})",
                self.train_fraction
            )))
        }
    }

    /// `⌊fraction · n⌋`, tolerant of the representation error in fractions like 0.9.
    pub fn train_size(&self, n: usize) -> usize {
        ((self.train_fraction * n as f64) + 1e-9).floor() as usize
    }
}

/// Filenames of the training subset: Fisher–Yates over the sorted filename list,
/// then the first `train_size` entries.
pub fn train_members(m: &Manifest, spec: &SplitSpec) -> HashSet<String> {
    let mut names: Vec<&String> = m.images.keys().collect();
    names.sort_unstable();
    let mut rng = seed::rng_from_seed(spec.seed);
    names.shuffle(&mut rng);
    let k = spec.train_size(names.len());
    names.into_iter().take(k).cloned().collect()
}

fn subset(m: &Manifest, keep: impl Fn(&str) -> bool) -> Manifest {
    Manifest {
        annotations: m.annotations.iter().filter(|a| keep(&a.filename)).cloned().collect(),
        images: m
            .images
            .iter()
            .filter(|(k, _)| keep(k))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect(),
        classes: m.classes.clone(),
        headers: Default::default(),
        images_dir: m.images_dir.clone(),
    }
}

/// Partitions by image; both halves keep the input's image order and full class registry.
pub fn split(m: &Manifest, spec: &SplitSpec) -> Result<(Manifest, Manifest)> {
    spec.validate()?;
    if m.image_count() < 2 {
        return Err(Error::InvalidInput(format!(
            "cannot split a manifest with {} image(s)",
            m.image_count()
        )));
    }
    let train = train_members(m, spec);
    Ok((
        subset(m, |f| train.contains(f)),
        subset(m, |f| !train.contains(f)),
    ))
}

/// Writes `train/` and `val/` under `out_dir`, each with a `filelist.txt`. Images stay
/// where they are; each half records the shared directory in its `_split` header.
pub fn write_split(train: &mut Manifest, val: &mut Manifest, spec: &SplitSpec, out_dir: &Path) -> Result<()> {
    for (name, part) in [("train", &mut *train), ("val", &mut *val)] {
        let images_dir = part
            .images_dir
            .as_ref()
            .map(|d| std::path::absolute(d).unwrap_or_else(|_| d.clone()))
            .map(|d: PathBuf| d.to_string_lossy().into_owned());
        part.headers.insert(
            "_split".to_string(),
            json!({
                "subset": name,
                "train_fraction": spec.train_fraction,
                "seed": spec.seed,
                "images_dir": images_dir,
            }),
        );
        part.save(&out_dir.join(name), true)?;
    }
    Ok(())
}
