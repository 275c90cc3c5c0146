//! Letterboxing of source images onto a square canvas and the matching annotation
//! transform.
//!
//! A source dataset is either box-annotated (every object has corner coordinates) or
//! image-level (one class label per image). Box-annotated sources have their boxes
//! scaled and shifted with the image; image-level sources get one synthetic square box
//! per image, centred on the canvas with a small integer jitter.
//!
//! Source directory layout:
//!
//! ```text
//! classes.json      name -> { "id": int, "bbox_size": int? }
//! images/           raw images
//! annotations.csv   filename,class,x1,y1,x2,y2   (box-annotated)
//! labels.csv        filename,class               (image-level)
//! images.csv        filename,width,height        (optional; required for pixel-free runs without images)
//! ```

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use image::{imageops, DynamicImage, GenericImageView, Rgb, RgbImage};
use log::warn;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, CornerBox};
use crate::manifest::{self, Annotation, ClassRegistry, ImageMeta, Manifest, IMAGES_DIR};
use crate::seed;

pub const DEFAULT_TARGET: u32 = 512;
pub const DEFAULT_JITTER: u32 = 20;

const IMAGE_EXTENSIONS: [&str; 6] = ["png", "jpg", "jpeg", "bmp", "tif", "tiff"];

/// Resize-and-pad parameters for one source image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformPlan {
    pub orig_w: u32,
    pub orig_h: u32,
    pub target: u32,
    pub scale: f64,
    pub new_w: u32,
    pub new_h: u32,
    pub pad_x: u32,
    pub pad_y: u32,
}

/// Computes the letterbox plan. The resized sides are floored with exact integer
/// arithmetic (`⌊w·target / max(w, h)⌋`), so the longer side always lands on `target`.
pub fn plan_transform(orig_w: u32, orig_h: u32, target: u32) -> Result<TransformPlan> {
    if orig_w == 0 || orig_h == 0 || target == 0 {
        return Err(Error::InvalidInput(format!(
            "image and target dimensions must be positive (got {orig_w}x{orig_h}, target {target})"
        )));
    }
    let longest = u64::from(orig_w.max(orig_h));
    let scale = f64::from(target) / longest as f64;
    let new_w = (u64::from(orig_w) * u64::from(target) / longest) as u32;
    let new_h = (u64::from(orig_h) * u64::from(target) / longest) as u32;
    Ok(TransformPlan {
        orig_w,
        orig_h,
        target,
        scale,
        new_w,
        new_h,
        pad_x: (target - new_w) / 2,
        pad_y: (target - new_h) / 2,
    })
}

impl TransformPlan {
    pub fn is_identity(&self) -> bool {
        self.orig_w == self.target && self.orig_h == self.target
    }

    pub fn to_meta(&self, source: &str) -> ImageMeta {
        ImageMeta {
            source: Some(source.to_string()),
            orig_w: self.orig_w,
            orig_h: self.orig_h,
            scale: self.scale,
            pad_x: self.pad_x,
            pad_y: self.pad_y,
        }
    }

    /// Maps a canvas box back into original image coordinates.
    pub fn invert_box(&self, b: &BoundingBox) -> CornerBox {
        let x1 = (b.x - f64::from(self.pad_x)) / self.scale;
        let y1 = (b.y - f64::from(self.pad_y)) / self.scale;
        CornerBox::new(x1, y1, x1 + b.w / self.scale, y1 + b.h / self.scale)
    }
}

/// Bilinear resize onto a black canvas. The output is always `target × target` RGB.
pub fn apply_to_image(image: &DynamicImage, plan: &TransformPlan) -> Result<RgbImage> {
    if image.dimensions() != (plan.orig_w, plan.orig_h) {
        return Err(Error::InvalidInput(format!(
            "image is {}x{}, plan expects {}x{}",
            image.width(),
            image.height(),
            plan.orig_w,
            plan.orig_h
        )));
    }
    let rgb = image.to_rgb8();
    if plan.is_identity() {
        return Ok(rgb);
    }
    let resized = imageops::resize(&rgb, plan.new_w, plan.new_h, imageops::FilterType::Triangle);
    let mut canvas = RgbImage::from_pixel(plan.target, plan.target, Rgb([0, 0, 0]));
    imageops::replace(&mut canvas, &resized, i64::from(plan.pad_x), i64::from(plan.pad_y));
    Ok(canvas)
}

/// Scales a source box onto the canvas. The box must lie inside the original image.
pub fn transform_box(b: &CornerBox, plan: &TransformPlan) -> Result<BoundingBox> {
    let (w, h) = (f64::from(plan.orig_w), f64::from(plan.orig_h));
    if !b.is_valid() || b.x1 < 0.0 || b.y1 < 0.0 || b.x2 > w || b.y2 > h {
        return Err(Error::Validation(vec![format!(
            "box ({}, {}, {}, {}) is not inside the {}x{} image",
            b.x1, b.y1, b.x2, b.y2, plan.orig_w, plan.orig_h
        )]));
    }
    Ok(scale_box(b, plan))
}

fn scale_box(b: &CornerBox, plan: &TransformPlan) -> BoundingBox {
    let t = f64::from(plan.target);
    let x1 = (b.x1 * plan.scale + f64::from(plan.pad_x)).clamp(0.0, t);
    let y1 = (b.y1 * plan.scale + f64::from(plan.pad_y)).clamp(0.0, t);
    let x2 = (b.x2 * plan.scale + f64::from(plan.pad_x)).clamp(0.0, t);
    let y2 = (b.y2 * plan.scale + f64::from(plan.pad_y)).clamp(0.0, t);
    BoundingBox::new(x1, y1, x2 - x1, y2 - y1)
}

/// Clips a box to the image rectangle. `None` when nothing with positive area remains.
pub fn clip_to_image(b: &CornerBox, w: u32, h: u32) -> Option<CornerBox> {
    let clipped = CornerBox::new(
        b.x1.clamp(0.0, f64::from(w)),
        b.y1.clamp(0.0, f64::from(h)),
        b.x2.clamp(0.0, f64::from(w)),
        b.y2.clamp(0.0, f64::from(h)),
    );
    (clipped.x2 > clipped.x1 && clipped.y2 > clipped.y1).then_some(clipped)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoBoxConfig {
    /// Side length of the synthetic square, per class name.
    pub bbox_sizes: BTreeMap<String, u32>,
    pub jitter_range: u32,
    pub seed: u64,
    pub target: u32,
}

impl PseudoBoxConfig {
    pub fn new(bbox_sizes: BTreeMap<String, u32>, seed: u64) -> Self {
        Self {
            bbox_sizes,
            jitter_range: DEFAULT_JITTER,
            seed,
            target: DEFAULT_TARGET,
        }
    }

    pub fn from_registry(classes: &ClassRegistry, seed: u64, target: u32) -> Self {
        let bbox_sizes = classes.iter().filter_map(|c| c.bbox_size.map(|s| (c.name.clone(), s))).collect();
        Self {
            bbox_sizes,
            jitter_range: DEFAULT_JITTER,
            seed,
            target,
        }
    }

    /// Every configured square must stay on the canvas under the worst-case jitter.
    pub fn validate(&self) -> Result<()> {
        let problems: Vec<String> = self
            .bbox_sizes
            .iter()
            .filter(|(_, &s)| s == 0 || u64::from(s) + 2 * u64::from(self.jitter_range) > u64::from(self.target))
            .map(|(name, s)| {
                format!(
                    "class `{name}`: bbox_size {s} with jitter ±{} does not fit a {} canvas",
                    self.jitter_range, self.target
                )
            })
            .collect();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

/// Square of side `size` centred at `(target/2 + jx, target/2 + jy)`.
pub fn pseudo_box(size: u32, target: u32, jx: i32, jy: i32) -> BoundingBox {
    let s = f64::from(size);
    let cx = f64::from(target) / 2.0 + f64::from(jx);
    let cy = f64::from(target) / 2.0 + f64::from(jy);
    BoundingBox::new(cx - s / 2.0, cy - s / 2.0, s, s)
}

/// Draws a jittered pseudo-box; jitter is uniform on `[-range, +range]` per axis.
pub fn make_pseudo_annotation<R: Rng + ?Sized>(class: &str, cfg: &PseudoBoxConfig, rng: &mut R) -> Result<BoundingBox> {
    let size = *cfg.bbox_sizes.get(class).ok_or_else(|| Error::MissingBoxSize(class.to_string()))?;
    let range = cfg.jitter_range as i32;
    let jx = rng.gen_range(-range..=range);
    let jy = rng.gen_range(-range..=range);
    Ok(pseudo_box(size, cfg.target, jx, jy))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    BoxAnnotated,
    ImageLevel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceObject {
    pub class: String,
    pub corners: CornerBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceImage {
    pub filename: String,
    /// Declared `(width, height)`; read from the file when absent.
    pub size: Option<(u32, u32)>,
    pub objects: Vec<SourceObject>,
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceDataset {
    pub name: String,
    pub root: PathBuf,
    pub kind: SourceKind,
    pub images: Vec<SourceImage>,
    pub classes: ClassRegistry,
}

#[derive(Debug, Deserialize)]
struct BoxRow {
    filename: String,
    class: String,
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

#[derive(Debug, Deserialize)]
struct LabelRow {
    filename: String,
    class: String,
}

#[derive(Debug, Deserialize)]
struct SizeRow {
    filename: String,
    width: u32,
    height: u32,
}

fn read_rows<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| Error::csv(path, e))
}

fn has_image_extension(name: &str) -> bool {
    Path::new(name)
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

impl SourceDataset {
    /// Reads a source directory. `name` defaults to the directory name.
    pub fn load(root: &Path, name: Option<&str>) -> Result<Self> {
        if !root.is_dir() {
            return Err(Error::InvalidInput(format!("source directory {} does not exist", root.display())));
        }
        let name = match name {
            Some(n) => n.to_string(),
            None => root
                .canonicalize()
                .map_err(|e| Error::io(root, e))?
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "source".to_string()),
        };
        let classes = ClassRegistry::read(&root.join(manifest::CLASSES_FILE))?;

        let sizes_path = root.join("images.csv");
        let images_dir = root.join(IMAGES_DIR);
        let mut images: BTreeMap<String, SourceImage> = BTreeMap::new();
        if sizes_path.is_file() {
            for row in read_rows::<SizeRow>(&sizes_path)? {
                let img = SourceImage {
                    filename: row.filename.clone(),
                    size: Some((row.width, row.height)),
                    objects: Vec::new(),
                    label: None,
                };
                if images.insert(row.filename.clone(), img).is_some() {
                    return Err(Error::InvalidInput(format!("{} lists `{}` twice", sizes_path.display(), row.filename)));
                }
            }
        } else if images_dir.is_dir() {
            for file in manifest::list_files(&images_dir)? {
                if has_image_extension(&file) {
                    images.insert(
                        file.clone(),
                        SourceImage {
                            filename: file,
                            size: None,
                            objects: Vec::new(),
                            label: None,
                        },
                    );
                }
            }
        }

        let boxes_path = root.join("annotations.csv");
        let labels_path = root.join("labels.csv");
        let kind = match (boxes_path.is_file(), labels_path.is_file()) {
            (true, true) => {
                return Err(Error::InvalidInput(format!(
                    "{} has both annotations.csv and labels.csv",
                    root.display()
                )))
            }
            (false, true) => SourceKind::ImageLevel,
            _ => SourceKind::BoxAnnotated,
        };

        let mut problems = Vec::new();
        let check_class = |class: &str, what: &str, problems: &mut Vec<String>| {
            if classes.by_name(class).is_none() {
                problems.push(format!("{what}: class `{class}` is not in classes.json"));
            }
        };
        match kind {
            SourceKind::BoxAnnotated if boxes_path.is_file() => {
                for (i, row) in read_rows::<BoxRow>(&boxes_path)?.into_iter().enumerate() {
                    let what = format!("annotations.csv row {}", i + 1);
                    check_class(&row.class, &what, &mut problems);
                    let corners = CornerBox::new(row.x1, row.y1, row.x2, row.y2);
                    if !corners.is_valid() {
                        problems.push(format!("{what}: malformed box ({}, {}, {}, {})", row.x1, row.y1, row.x2, row.y2));
                    }
                    match images.get_mut(&row.filename) {
                        Some(img) => img.objects.push(SourceObject { class: row.class, corners }),
                        None => problems.push(format!("{what}: image `{}` does not exist", row.filename)),
                    }
                }
            }
            SourceKind::BoxAnnotated => {}
            SourceKind::ImageLevel => {
                for (i, row) in read_rows::<LabelRow>(&labels_path)?.into_iter().enumerate() {
                    let what = format!("labels.csv row {}", i + 1);
                    check_class(&row.class, &what, &mut problems);
                    match images.get_mut(&row.filename) {
                        Some(img) if img.label.is_some() => {
                            problems.push(format!("{what}: image `{}` is labelled twice", row.filename))
                        }
                        Some(img) => img.label = Some(row.class),
                        None => problems.push(format!("{what}: image `{}` does not exist", row.filename)),
                    }
                }
            }
        }
        if !problems.is_empty() {
            return Err(Error::Validation(problems));
        }

        Ok(SourceDataset {
            name,
            root: root.to_path_buf(),
            kind,
            images: images.into_values().collect(),
            classes,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StandardizeOptions {
    pub target: u32,
    pub seed: u64,
    pub jitter_range: u32,
    /// Skip all raster work and emit tables only.
    pub pixel_free: bool,
}

impl Default for StandardizeOptions {
    fn default() -> Self {
        Self {
            target: DEFAULT_TARGET,
            seed: 0,
            jitter_range: DEFAULT_JITTER,
            pixel_free: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SkippedFile {
    pub filename: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct StandardizeReport {
    pub source: String,
    pub images_in: usize,
    pub images_out: usize,
    pub annotations: usize,
    pub clipped_boxes: usize,
    pub dropped_boxes: Vec<String>,
    pub skipped: Vec<SkippedFile>,
}

#[derive(Debug, Clone)]
pub struct StandardizeOutcome {
    pub manifest: Manifest,
    pub report: StandardizeReport,
}

struct ImageResult {
    filename: String,
    meta: ImageMeta,
    annotations: Vec<Annotation>,
    clipped: usize,
    dropped: Vec<String>,
}

/// Canvas images are PNG, so the extension changes while the stem is kept.
fn output_name(filename: &str) -> String {
    Path::new(filename).with_extension("png").to_string_lossy().into_owned()
}

/// Runs the whole standardization pass and writes the manifest into `out_dir`.
///
/// Per-image failures (unreadable or mismatched rasters) are recorded in the report and
/// the run continues; configuration problems abort before any file is written.
pub fn standardize_dataset(src: &SourceDataset, out_dir: &Path, opts: &StandardizeOptions) -> Result<StandardizeOutcome> {
    let (classes, remap) = src.classes.compacted();
    let mut pseudo = PseudoBoxConfig::from_registry(&src.classes, opts.seed, opts.target);
    pseudo.jitter_range = opts.jitter_range;

    if src.kind == SourceKind::ImageLevel {
        let used: HashSet<&str> = src.images.iter().filter_map(|i| i.label.as_deref()).collect();
        let mut missing: Vec<&str> = used.into_iter().filter(|c| !pseudo.bbox_sizes.contains_key(*c)).collect();
        missing.sort_unstable();
        if let Some(first) = missing.first() {
            return Err(Error::MissingBoxSize(first.to_string()));
        }
        pseudo.validate()?;
    }

    let mut seen = HashMap::new();
    for img in &src.images {
        if let Some(prev) = seen.insert(output_name(&img.filename), &img.filename) {
            return Err(Error::InvalidInput(format!(
                "`{prev}` and `{}` map to the same output image",
                img.filename
            )));
        }
    }

    let out_images = out_dir.join(IMAGES_DIR);
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    if !opts.pixel_free {
        fs::create_dir_all(&out_images).map_err(|e| Error::io(&out_images, e))?;
    }
    let src_images = src.root.join(IMAGES_DIR);

    let results: Vec<std::result::Result<ImageResult, SkippedFile>> = src
        .images
        .par_iter()
        .map(|img| process_image(src, img, &remap, &pseudo, opts, &src_images, &out_images))
        .collect();

    let mut manifest = Manifest::new(classes);
    let mut report = StandardizeReport {
        source: src.name.clone(),
        images_in: src.images.len(),
        ..StandardizeReport::default()
    };
    for r in results {
        match r {
            Ok(done) => {
                for d in &done.dropped {
                    warn!("{}: {d}", done.filename);
                }
                report.clipped_boxes += done.clipped;
                report.dropped_boxes.extend(done.dropped.into_iter().map(|d| format!("{}: {d}", done.filename)));
                manifest.images.insert(done.filename, done.meta);
                manifest.annotations.extend(done.annotations);
            }
            Err(skip) => {
                warn!("skipping {}: {}", skip.filename, skip.reason);
                report.skipped.push(skip);
            }
        }
    }
    report.images_out = manifest.image_count();
    report.annotations = manifest.annotation_count();
    manifest.images_dir = (!opts.pixel_free).then_some(out_images);

    manifest.validate()?;
    manifest.save(out_dir, false)?;
    manifest::write_json(&out_dir.join("standardize_report.json"), &report)?;
    Ok(StandardizeOutcome { manifest, report })
}

fn process_image(
    src: &SourceDataset,
    img: &SourceImage,
    remap: &HashMap<u32, u32>,
    pseudo: &PseudoBoxConfig,
    opts: &StandardizeOptions,
    src_images: &Path,
    out_images: &Path,
) -> std::result::Result<ImageResult, SkippedFile> {
    let skip = |reason: String| SkippedFile {
        filename: img.filename.clone(),
        reason,
    };
    let path = src_images.join(&img.filename);
    let name = output_name(&img.filename);

    let plan = if opts.pixel_free {
        let (w, h) = match img.size {
            Some(s) => s,
            None => image::image_dimensions(&path).map_err(|e| skip(format!("cannot read dimensions: {e}")))?,
        };
        plan_transform(w, h, opts.target).map_err(|e| skip(e.to_string()))?
    } else {
        let decoded = image::open(&path).map_err(|e| skip(format!("decode failed: {e}")))?;
        let (w, h) = decoded.dimensions();
        if let Some(declared) = img.size {
            if declared != (w, h) {
                return Err(skip(format!(
                    "declared size {}x{} but image is {w}x{h}",
                    declared.0, declared.1
                )));
            }
        }
        let plan = plan_transform(w, h, opts.target).map_err(|e| skip(e.to_string()))?;
        let canvas = apply_to_image(&decoded, &plan).map_err(|e| skip(e.to_string()))?;
        let dest = out_images.join(&name);
        canvas
            .save_with_format(&dest, image::ImageFormat::Png)
            .map_err(|e| skip(format!("cannot write {}: {e}", dest.display())))?;
        plan
    };

    let class_id = |class: &str| {
        let old = src.classes.by_name(class).expect("classes checked at load").id;
        remap[&old]
    };
    let mut annotations = Vec::new();
    let mut clipped = 0;
    let mut dropped = Vec::new();
    match src.kind {
        SourceKind::BoxAnnotated => {
            for obj in &img.objects {
                let c = obj.corners;
                let Some(inside) = clip_to_image(&c, plan.orig_w, plan.orig_h) else {
                    dropped.push(format!("dropped `{}` box ({}, {}, {}, {}): no area inside the image", obj.class, c.x1, c.y1, c.x2, c.y2));
                    continue;
                };
                if inside != c {
                    clipped += 1;
                }
                let bbox = transform_box(&inside, &plan).expect("clipped box lies inside the image");
                if bbox.w <= 0.0 || bbox.h <= 0.0 {
                    dropped.push(format!("dropped `{}` box: degenerate after scaling", obj.class));
                    continue;
                }
                annotations.push(Annotation {
                    filename: name.clone(),
                    class_id: class_id(&obj.class),
                    bbox,
                });
            }
        }
        SourceKind::ImageLevel => {
            let Some(label) = img.label.as_deref() else {
                return Err(skip("image-level source without a label for this image".to_string()));
            };
            let mut rng = seed::derived_rng(pseudo.seed, &format!("standardize/{}/{}", src.name, img.filename));
            let bbox = make_pseudo_annotation(label, pseudo, &mut rng).map_err(|e| skip(e.to_string()))?;
            annotations.push(Annotation {
                filename: name.clone(),
                class_id: class_id(label),
                bbox,
            });
        }
    }
    Ok(ImageResult {
        filename: name,
        meta: plan.to_meta(&src.name),
        annotations,
        clipped,
        dropped,
    })
}
