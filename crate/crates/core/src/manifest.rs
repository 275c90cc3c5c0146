//! The on-disk dataset bundle: `annotations.csv`, `classes.json`, `metadata.json`
//! and an image directory, plus an optional `filelist.txt`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

pub const ANNOTATIONS_FILE: &str = "annotations.csv";
pub const CLASSES_FILE: &str = "classes.json";
pub const METADATA_FILE: &str = "metadata.json";
pub const FILELIST_FILE: &str = "filelist.txt";
pub const IMAGES_DIR: &str = "images";

/// Header entries in `metadata.json` are keyed with this prefix; everything else is a filename.
pub const HEADER_PREFIX: char = '_';

/// One ground-truth box.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub filename: String,
    pub class_id: u32,
    pub bbox: BoundingBox,
}

/// Per-image provenance and letterbox parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    pub orig_w: u32,
    pub orig_h: u32,
    pub scale: f64,
    pub pad_x: u32,
    pub pad_y: u32,
}

impl ImageMeta {
    pub fn with_source(source: impl Into<String>) -> Self {
        Self {
            source: Some(source.into()),
            orig_w: 512,
            orig_h: 512,
            scale: 1.0,
            pad_x: 0,
            pad_y: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassInfo {
    pub name: String,
    pub id: u32,
    pub bbox_size: Option<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ClassEntryJson {
    id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bbox_size: Option<u32>,
}

/// Class name to integer id table, kept sorted by id. Id 0 is background and never stored.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClassRegistry {
    entries: Vec<ClassInfo>,
}

impl ClassRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a registry with ids `1..=K` in the order given.
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Self {
        let mut reg = Self::new();
        for name in names {
            reg.push(name.as_ref(), None);
        }
        reg
    }

    /// Appends a class with the next free id and returns it.
    pub fn push(&mut self, name: &str, bbox_size: Option<u32>) -> u32 {
        let id = self.entries.last().map_or(1, |e| e.id + 1);
        self.entries.push(ClassInfo {
            name: name.to_string(),
            id,
            bbox_size,
        });
        id
    }

    /// Inserts an entry with an explicit id, keeping id order. Duplicates are rejected.
    pub fn insert(&mut self, info: ClassInfo) -> Result<()> {
        if info.id == 0 {
            return Err(Error::InvalidInput(format!(
                "class `{}` uses id 0, which is reserved for background",
                info.name
            )));
        }
        if self.by_name(&info.name).is_some() {
            return Err(Error::InvalidInput(format!("duplicate class name `{}`", info.name)));
        }
        if self.by_id(info.id).is_some() {
            return Err(Error::InvalidInput(format!("duplicate class id {}", info.id)));
        }
        let pos = self.entries.partition_point(|e| e.id < info.id);
        self.entries.insert(pos, info);
        Ok(())
    }

    pub fn set_bbox_size(&mut self, id: u32, bbox_size: Option<u32>) -> bool {
        match self.entries.binary_search_by_key(&id, |e| e.id) {
            Ok(i) => {
                self.entries[i].bbox_size = bbox_size;
                true
            }
            Err(_) => false,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ClassInfo> {
        self.entries.iter()
    }

    pub fn by_name(&self, name: &str) -> Option<&ClassInfo> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn by_id(&self, id: u32) -> Option<&ClassInfo> {
        self.entries.binary_search_by_key(&id, |e| e.id).ok().map(|i| &self.entries[i])
    }

    pub fn name_of(&self, id: u32) -> Option<&str> {
        self.by_id(id).map(|e| e.name.as_str())
    }

    /// True when ids are exactly `1..=K`.
    pub fn is_contiguous(&self) -> bool {
        self.entries.iter().enumerate().all(|(i, e)| e.id as usize == i + 1)
    }

    /// Renumbers to `1..=K` in ascending id order; returns the new registry and old → new ids.
    pub fn compacted(&self) -> (ClassRegistry, HashMap<u32, u32>) {
        let mut out = ClassRegistry::new();
        let mut remap = HashMap::with_capacity(self.len());
        for e in &self.entries {
            let id = out.push(&e.name, e.bbox_size);
            remap.insert(e.id, id);
        }
        (out, remap)
    }

    pub fn to_json(&self) -> Value {
        let mut map = Map::new();
        for e in &self.entries {
            let entry = ClassEntryJson {
                id: e.id,
                bbox_size: e.bbox_size,
            };
            map.insert(e.name.clone(), serde_json::to_value(entry).expect("class entry serializes"));
        }
        Value::Object(map)
    }

    /// Parses `classes.json` without requiring contiguous ids.
    pub fn from_json_str(text: &str, path: &Path) -> Result<Self> {
        let raw: IndexMap<String, ClassEntryJson> = serde_json::from_str(text).map_err(|e| Error::json(path, e))?;
        let mut reg = ClassRegistry::new();
        for (name, e) in raw {
            reg.insert(ClassInfo {
                name,
                id: e.id,
                bbox_size: e.bbox_size,
            })?;
        }
        Ok(reg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text, path)
    }
}

/// A standardized dataset held in memory.
///
/// The image set is the key set of `images`, in insertion order; that order is the
/// dataset's canonical image order for merging and evaluation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub annotations: Vec<Annotation>,
    pub images: IndexMap<String, ImageMeta>,
    pub classes: ClassRegistry,
    /// Non-image entries of `metadata.json` (`_merge`, `_split`, ...).
    pub headers: Map<String, Value>,
    /// Where the raster files live; `None` for pixel-free manifests.
    pub images_dir: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
struct AnnotationRow {
    filename: String,
    class_id: u32,
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

/// Formats a coordinate with at most two fractional digits and no trailing zeros.
pub fn format_coord(v: f64) -> String {
    let s = format!("{:.2}", v);
    let s = if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    };
    if s == "-0" {
        "0".to_string()
    } else {
        s
    }
}

impl Manifest {
    pub fn new(classes: ClassRegistry) -> Self {
        Self {
            classes,
            ..Self::default()
        }
    }

    pub fn image_count(&self) -> usize {
        self.images.len()
    }

    pub fn annotation_count(&self) -> usize {
        self.annotations.len()
    }

    /// Annotation indices grouped by filename, in annotation order.
    pub fn annotations_by_image(&self) -> HashMap<&str, Vec<usize>> {
        let mut out: HashMap<&str, Vec<usize>> = HashMap::new();
        for (i, a) in self.annotations.iter().enumerate() {
            out.entry(a.filename.as_str()).or_default().push(i);
        }
        out
    }

    /// Referential integrity and box validity; every failing record is reported.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !self.classes.is_contiguous() {
            problems.push("class ids are not contiguous 1..K".to_string());
        }
        for (row, a) in self.annotations.iter().enumerate() {
            if !self.images.contains_key(&a.filename) {
                problems.push(format!("annotation row {} references unknown image `{}`", row + 1, a.filename));
            }
            if self.classes.by_id(a.class_id).is_none() {
                problems.push(format!("annotation row {} references unknown class id {}", row + 1, a.class_id));
            }
            if !a.bbox.is_valid() {
                problems.push(format!("annotation row {} has an invalid box {:?}", row + 1, a.bbox));
            }
        }
        if let Some(bad) = self.images.keys().find(|k| k.starts_with(HEADER_PREFIX)) {
            problems.push(format!("image filename `{bad}` collides with the metadata header prefix"));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    /// Per-class instance counts keyed by id.
    pub fn counts_by_class(&self) -> BTreeMap<u32, usize> {
        let mut out = BTreeMap::new();
        for a in &self.annotations {
            *out.entry(a.class_id).or_insert(0) += 1;
        }
        out
    }

    pub fn load(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::InvalidInput(format!("manifest directory {} does not exist", dir.display())));
        }
        let classes = ClassRegistry::read(&dir.join(CLASSES_FILE))?;

        let meta_path = dir.join(METADATA_FILE);
        let meta_text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let raw: Map<String, Value> = serde_json::from_str(&meta_text).map_err(|e| Error::json(&meta_path, e))?;
        let mut headers = Map::new();
        let mut images = IndexMap::with_capacity(raw.len());
        for (key, value) in raw {
            if key.starts_with(HEADER_PREFIX) {
                headers.insert(key, value);
            } else {
                let meta: ImageMeta = serde_json::from_value(value).map_err(|e| {
                    Error::InvalidInput(format!("{}: metadata for `{key}`: {e}", meta_path.display()))
                })?;
                images.insert(key, meta);
            }
        }

        let ann_path = dir.join(ANNOTATIONS_FILE);
        let mut reader = csv::Reader::from_path(&ann_path).map_err(|e| Error::csv(&ann_path, e))?;
        let mut annotations = Vec::new();
        for row in reader.deserialize::<AnnotationRow>() {
            let row = row.map_err(|e| Error::csv(&ann_path, e))?;
            annotations.push(Annotation {
                filename: row.filename,
                class_id: row.class_id,
                bbox: BoundingBox::new(row.x, row.y, row.w, row.h),
            });
        }

        let filelist_path = dir.join(FILELIST_FILE);
        if filelist_path.is_file() {
            let text = fs::read_to_string(&filelist_path).map_err(|e| Error::io(&filelist_path, e))?;
            let listed: Vec<&str> = text.lines().filter(|l| !l.is_empty()).collect();
            let keys: Vec<&str> = images.keys().map(String::as_str).collect();
            if listed != keys {
                return Err(Error::Validation(vec![format!(
                    "{} does not match the image entries of {}",
                    filelist_path.display(),
                    meta_path.display()
                )]));
            }
        }

        let images_dir = headers
            .get("_split")
            .and_then(|v| v.get("images_dir"))
            .and_then(Value::as_str)
            .map(PathBuf::from)
            .unwrap_or_else(|| dir.join(IMAGES_DIR));

        let manifest = Manifest {
            annotations,
            images,
            classes,
            headers,
            images_dir: Some(images_dir),
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn metadata_json(&self) -> Value {
        let mut map = Map::new();
        for (k, v) in &self.headers {
            map.insert(k.clone(), v.clone());
        }
        for (name, meta) in &self.images {
            map.insert(name.clone(), serde_json::to_value(meta).expect("image metadata serializes"));
        }
        Value::Object(map)
    }

    pub fn annotations_csv(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 * (self.annotations.len() + 1));
        out.extend_from_slice(b"filename,class_id,x,y,w,h\n");
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(&mut out);
        for a in &self.annotations {
            writer
                .write_record([
                    a.filename.as_str(),
                    &a.class_id.to_string(),
                    &format_coord(a.bbox.x),
                    &format_coord(a.bbox.y),
                    &format_coord(a.bbox.w),
                    &format_coord(a.bbox.h),
                ])
                .expect("writing to memory");
        }
        writer.flush().expect("writing to memory");
        drop(writer);
        out
    }

    /// Writes the three table files; with `filelist` also `filelist.txt`. Images are not touched.
    pub fn save(&self, dir: &Path, filelist: bool) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_file(&dir.join(ANNOTATIONS_FILE), &self.annotations_csv())?;
        write_json(&dir.join(CLASSES_FILE), &self.classes.to_json())?;
        write_json(&dir.join(METADATA_FILE), &self.metadata_json())?;
        if filelist {
            let mut text = String::new();
            for name in self.images.keys() {
                text.push_str(name);
                text.push('\n');
            }
            write_file(&dir.join(FILELIST_FILE), text.as_bytes())?;
        }
        Ok(())
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::json(path, e))?;
    bytes.push(b'\n');
    write_file(path, &bytes)
}

/// Filenames present in `dir`, used to check that referenced images exist.
pub(crate) fn list_files(dir: &Path) -> Result<HashSet<String>> {
    let mut out = HashSet::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if entry.file_type().map_err(|e| Error::io(dir, e))?.is_file() {
            out.insert(entry.file_name().to_string_lossy().into_owned());
        }
    }
    Ok(out)
}
