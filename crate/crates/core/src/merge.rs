//! Merging standardized datasets into one corpus with sequential image names and a
//! unified class registry.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use log::warn;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::audit::{self, CompositionReport};
use crate::error::{Error, Result};
use crate::manifest::{self, Annotation, ClassRegistry, Manifest, IMAGES_DIR};

/// One input to a merge. `label` identifies the dataset (usually its directory) and
/// guards against the same dataset being listed twice.
#[derive(Debug, Clone, Copy)]
pub struct MergeInput<'a> {
    pub label: &'a str,
    pub manifest: &'a Manifest,
}

impl<'a> MergeInput<'a> {
    pub fn new(label: &'a str, manifest: &'a Manifest) -> Self {
        Self { label, manifest }
    }
}

/// `(dataset label, original filename) → new filename`, in assignment order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FilenameMap {
    entries: IndexMap<(String, String), String>,
}

impl FilenameMap {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of names handed out so far.
    pub fn counter(&self) -> u64 {
        self.entries.len() as u64
    }

    pub fn get(&self, label: &str, filename: &str) -> Option<&str> {
        self.entries
            .get(&(label.to_string(), filename.to_string()))
            .map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, &str)> {
        self.entries.iter().map(|((l, f), n)| (l.as_str(), f.as_str(), n.as_str()))
    }
}

/// Zero-padded eight digit counter followed by the original extension.
pub fn sequential_name(counter: u64, original: &str) -> String {
    match Path::new(original).extension() {
        Some(ext) => format!("{counter:08}.{}", ext.to_string_lossy()),
        None => format!("{counter:08}"),
    }
}

/// Hands out one name per image across all datasets in order. Images without
/// annotations get a name too.
pub fn assign_filenames(datasets: &[MergeInput<'_>]) -> Result<FilenameMap> {
    let mut map = FilenameMap::default();
    let mut duplicates = Vec::new();
    for ds in datasets {
        for filename in ds.manifest.images.keys() {
            let key = (ds.label.to_string(), filename.clone());
            if map.entries.contains_key(&key) {
                duplicates.push(format!("image `{filename}` of dataset `{}` appears twice", ds.label));
                continue;
            }
            let name = sequential_name(map.counter() + 1, filename);
            map.entries.insert(key, name);
        }
    }
    if duplicates.is_empty() {
        Ok(map)
    } else {
        Err(Error::Validation(duplicates))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClassOrigin {
    pub dataset: String,
    pub original_id: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClassProvenance {
    pub name: String,
    pub id: u32,
    pub origins: Vec<ClassOrigin>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnifiedClasses {
    pub registry: ClassRegistry,
    /// Per dataset, original id → unified id.
    pub remaps: Vec<HashMap<u32, u32>>,
    pub provenance: Vec<ClassProvenance>,
    pub warnings: Vec<String>,
}

/// Joins class tables by name; unified ids follow first appearance across the list.
pub fn unify_classes(datasets: &[MergeInput<'_>]) -> UnifiedClasses {
    let mut registry = ClassRegistry::new();
    let mut provenance: Vec<ClassProvenance> = Vec::new();
    let mut remaps = Vec::with_capacity(datasets.len());
    let mut warnings = Vec::new();
    for ds in datasets {
        let mut remap = HashMap::new();
        for class in ds.manifest.classes.iter() {
            let id = match registry.by_name(&class.name) {
                Some(existing) => {
                    if let (Some(a), Some(b)) = (existing.bbox_size, class.bbox_size) {
                        if a != b {
                            let msg = format!(
                                "class `{}`: bbox_size {b} in `{}` conflicts with {a}; keeping {a}",
                                class.name, ds.label
                            );
                            warn!("{msg}");
                            warnings.push(msg);
                        }
                    }
                    existing.id
                }
                None => {
                    let id = registry.push(&class.name, class.bbox_size);
                    provenance.push(ClassProvenance {
                        name: class.name.clone(),
                        id,
                        origins: Vec::new(),
                    });
                    id
                }
            };
            if registry.by_id(id).is_some_and(|e| e.bbox_size.is_none()) {
                registry.set_bbox_size(id, class.bbox_size);
            }
            provenance[(id - 1) as usize].origins.push(ClassOrigin {
                dataset: ds.label.to_string(),
                original_id: class.id,
            });
            remap.insert(class.id, id);
        }
        remaps.push(remap);
    }
    UnifiedClasses {
        registry,
        remaps,
        provenance,
        warnings,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MergeReport {
    pub composition: CompositionReport,
    pub classes: Vec<ClassProvenance>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct MergeOutcome {
    pub manifest: Manifest,
    pub filenames: FilenameMap,
    pub report: MergeReport,
}

/// Distinct `source` values of a dataset in image order, or its label when none are recorded.
fn source_names(ds: &MergeInput<'_>) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for meta in ds.manifest.images.values() {
        if let Some(s) = &meta.source {
            if seen.insert(s.as_str()) {
                out.push(s.clone());
            }
        }
    }
    if out.is_empty() {
        out.push(ds.label.to_string());
    }
    out
}

/// Builds the merged manifest in memory. No files are read or written.
pub fn merge_manifests(datasets: &[MergeInput<'_>]) -> Result<MergeOutcome> {
    if datasets.is_empty() {
        return Err(Error::InvalidInput("merge needs at least one dataset".to_string()));
    }
    let filenames = assign_filenames(datasets)?;
    let unified = unify_classes(datasets);

    let total_annotations: usize = datasets.iter().map(|d| d.manifest.annotation_count()).sum();
    let mut merged = Manifest::new(unified.registry.clone());
    merged.annotations.reserve(total_annotations);
    merged.images.reserve(filenames.len());

    let mut sources = Vec::new();
    for (ds, remap) in datasets.iter().zip(&unified.remaps) {
        let rename = |old: &str| {
            filenames
                .get(ds.label, old)
                .map(str::to_string)
                .ok_or_else(|| Error::Validation(vec![format!("dataset `{}`: unknown image `{old}`", ds.label)]))
        };
        for (old, meta) in &ds.manifest.images {
            merged.images.insert(rename(old)?, meta.clone());
        }
        for (row, a) in ds.manifest.annotations.iter().enumerate() {
            let class_id = *remap.get(&a.class_id).ok_or_else(|| {
                Error::Validation(vec![format!(
                    "dataset `{}` annotation row {}: unknown class id {}",
                    ds.label,
                    row + 1,
                    a.class_id
                )])
            })?;
            merged.annotations.push(Annotation {
                filename: rename(&a.filename)?,
                class_id,
                bbox: a.bbox,
            });
        }
        for s in source_names(ds) {
            if !sources.contains(&s) {
                sources.push(s);
            }
        }
    }
    merged.headers.insert(
        "_merge".to_string(),
        json!({
            "sources": sources,
            "total_images": merged.image_count(),
            "total_annotations": merged.annotation_count(),
        }),
    );
    merged.validate()?;

    let composition = audit::composition_report(&merged)?;
    Ok(MergeOutcome {
        manifest: merged,
        filenames,
        report: MergeReport {
            composition,
            classes: unified.provenance,
            warnings: unified.warnings,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MergeOptions {
    /// Copy raster files; off for pixel-free runs.
    pub copy_images: bool,
}

impl Default for MergeOptions {
    fn default() -> Self {
        Self { copy_images: true }
    }
}

/// Merges and writes the result into `out_dir`. Inputs are never modified.
pub fn merge_datasets(datasets: &[MergeInput<'_>], out_dir: &Path, opts: MergeOptions) -> Result<MergeOutcome> {
    let mut outcome = merge_manifests(datasets)?;

    if opts.copy_images {
        let mut copies: Vec<(PathBuf, PathBuf)> = Vec::with_capacity(outcome.filenames.len());
        let mut missing = Vec::new();
        let out_images = out_dir.join(IMAGES_DIR);
        for ds in datasets {
            let dir = ds
                .manifest
                .images_dir
                .clone()
                .ok_or_else(|| Error::InvalidInput(format!("dataset `{}` has no image directory", ds.label)))?;
            let present = if dir.is_dir() { manifest::list_files(&dir)? } else { HashSet::new() };
            let by_image = ds.manifest.annotations_by_image();
            for old in ds.manifest.images.keys() {
                if !present.contains(old) {
                    let rows = by_image
                        .get(old.as_str())
                        .map(|r| r.iter().map(|i| (i + 1).to_string()).collect::<Vec<_>>().join(","))
                        .unwrap_or_else(|| "none".to_string());
                    missing.push(format!(
                        "dataset `{}`: image `{old}` missing from {} (annotation rows: {rows})",
                        ds.label,
                        dir.display()
                    ));
                    continue;
                }
                let new = outcome.filenames.get(ds.label, old).expect("every image has a name");
                copies.push((dir.join(old), out_images.join(new)));
            }
        }
        if !missing.is_empty() {
            return Err(Error::Validation(missing));
        }
        fs::create_dir_all(&out_images).map_err(|e| Error::io(&out_images, e))?;
        copies
            .par_iter()
            .try_for_each(|(from, to)| fs::copy(from, to).map(|_| ()).map_err(|e| Error::io(from, e)))?;
        outcome.manifest.images_dir = Some(out_images);
    } else {
        outcome.manifest.images_dir = None;
    }

    outcome.manifest.save(out_dir, false)?;
    manifest::write_json(&out_dir.join("merge_report.json"), &outcome.report)?;
    Ok(outcome)
}
