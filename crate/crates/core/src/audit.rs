//! Class-distribution accounting: histograms, per-source composition, rare-class
//! flags and removal of unwanted classes.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use indexmap::IndexMap;
use log::warn;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::manifest::{Annotation, Manifest};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ClassHistogram {
    /// Instance count per class name, in registry id order. Classes without
    /// instances are listed with 0.
    pub counts: IndexMap<String, usize>,
    pub total_annotations: usize,
    pub total_images: usize,
}

pub fn class_histogram(m: &Manifest) -> ClassHistogram {
    let by_id = m.counts_by_class();
    let counts = m
        .classes
        .iter()
        .map(|c| (c.name.clone(), by_id.get(&c.id).copied().unwrap_or(0)))
        .collect();
    ClassHistogram {
        counts,
        total_annotations: m.annotation_count(),
        total_images: m.image_count(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CompositionRow {
    pub source: String,
    pub images: usize,
    pub annotations: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CompositionReport {
    pub rows: Vec<CompositionRow>,
    pub total_images: usize,
    pub total_annotations: usize,
}

/// Images and annotations per `source`, sources in order of first appearance.
pub fn composition_report(m: &Manifest) -> Result<CompositionReport> {
    let mut rows: IndexMap<&str, CompositionRow> = IndexMap::new();
    let mut source_of: HashMap<&str, &str> = HashMap::with_capacity(m.image_count());
    let mut missing = Vec::new();
    for (file, meta) in &m.images {
        match meta.source.as_deref() {
            Some(src) => {
                rows.entry(src)
                    .or_insert_with(|| CompositionRow {
                        source: src.to_string(),
                        images: 0,
                        annotations: 0,
                    })
                    .images += 1;
                source_of.insert(file, src);
            }
            None => missing.push(format!("image `{file}` has no source in its metadata")),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Validation(missing));
    }
    for a in &m.annotations {
        let src = source_of
            .get(a.filename.as_str())
            .ok_or_else(|| Error::Validation(vec![format!("annotation references unknown image `{}`", a.filename)]))?;
        rows[src].annotations += 1;
    }
    let rows: Vec<CompositionRow> = rows.into_values().collect();
    Ok(CompositionReport {
        total_images: rows.iter().map(|r| r.images).sum(),
        total_annotations: rows.iter().map(|r| r.annotations).sum(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RareClassRow {
    pub class: String,
    pub instances: usize,
    pub below_threshold: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RareClassReport {
    pub threshold: usize,
    pub rows: Vec<RareClassRow>,
}

impl RareClassReport {
    pub fn flagged(&self) -> impl Iterator<Item = &RareClassRow> {
        self.rows.iter().filter(|r| r.below_threshold)
    }
}

/// Every class sorted by ascending instance count (ties keep registry order).
pub fn rare_class_report(m: &Manifest, threshold: usize) -> RareClassReport {
    let mut rows: Vec<RareClassRow> = class_histogram(m)
        .counts
        .into_iter()
        .map(|(class, instances)| RareClassRow {
            class,
            instances,
            below_threshold: instances < threshold,
        })
        .collect();
    rows.sort_by_key(|r| r.instances);
    RareClassReport { threshold, rows }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DropReport {
    /// Removed instances per dropped class.
    pub removed: IndexMap<String, usize>,
    /// Requested names that are not in the registry.
    pub unknown: Vec<String>,
    /// Images left without any annotation (kept in the manifest).
    pub orphaned_images: Vec<String>,
}

/// Removes classes by name and renumbers the survivors to `1..=K'` in ascending old-id order.
pub fn drop_classes<S: AsRef<str>>(m: &Manifest, names: &[S]) -> (Manifest, DropReport) {
    let mut report = DropReport::default();
    let mut drop_ids = HashSet::new();
    for name in names {
        let name = name.as_ref();
        match m.classes.by_name(name) {
            Some(c) => {
                if drop_ids.insert(c.id) {
                    report.removed.insert(c.name.clone(), 0);
                }
            }
            None => {
                warn!("class `{name}` is not in the registry; ignoring");
                report.unknown.push(name.to_string());
            }
        }
    }

    let mut kept = crate::manifest::ClassRegistry::new();
    let mut remap = HashMap::new();
    for c in m.classes.iter().filter(|c| !drop_ids.contains(&c.id)) {
        remap.insert(c.id, kept.push(&c.name, c.bbox_size));
    }

    let mut annotations = Vec::with_capacity(m.annotation_count());
    for a in &m.annotations {
        match remap.get(&a.class_id) {
            Some(&id) => annotations.push(Annotation {
                class_id: id,
                ..a.clone()
            }),
            None => {
                let name = m.classes.name_of(a.class_id).unwrap_or("?");
                *report.removed.entry(name.to_string()).or_insert(0) += 1;
            }
        }
    }

    let annotated: HashSet<&str> = annotations.iter().map(|a| a.filename.as_str()).collect();
    let previously: HashSet<&str> = m.annotations.iter().map(|a| a.filename.as_str()).collect();
    report.orphaned_images = m
        .images
        .keys()
        .filter(|f| previously.contains(f.as_str()) && !annotated.contains(f.as_str()))
        .cloned()
        .collect();

    let out = Manifest {
        annotations,
        images: m.images.clone(),
        classes: kept,
        headers: m.headers.clone(),
        images_dir: m.images_dir.clone(),
    };
    (out, report)
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub histogram: ClassHistogram,
    pub composition: CompositionReport,
    pub rare_classes: RareClassReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dropped: Option<DropReport>,
}

impl AuditReport {
    pub fn build(m: &Manifest, threshold: usize, dropped: Option<DropReport>) -> Result<Self> {
        Ok(Self {
            histogram: class_histogram(m),
            composition: composition_report(m)?,
            rare_classes: rare_class_report(m, threshold),
            dropped,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("Composition\n");
        let mut rows: Vec<[String; 3]> = self
            .composition
            .rows
            .iter()
            .map(|r| [r.source.clone(), r.images.to_string(), r.annotations.to_string()])
            .collect();
        rows.push([
            "Total".to_string(),
            self.composition.total_images.to_string(),
            self.composition.total_annotations.to_string(),
        ]);
        out.push_str(&render_table(&["Source", "Images", "Annotations"], &rows, true));

        out.push_str("\nClass histogram\n");
        let rows: Vec<[String; 2]> = self
            .histogram
            .counts
            .iter()
            .map(|(c, n)| [c.clone(), n.to_string()])
            .collect();
        out.push_str(&render_table(&["Class", "Instances"], &rows, false));

        let _ = writeln!(out, "\nRare classes (threshold {})", self.rare_classes.threshold);
        let rows: Vec<[String; 3]> = self
            .rare_classes
            .rows
            .iter()
            .map(|r| {
                [
                    r.class.clone(),
                    r.instances.to_string(),
                    if r.below_threshold { "yes".into() } else { "no".into() },
                ]
            })
            .collect();
        out.push_str(&render_table(&["Class", "Instances", "Rare"], &rows, false));

        if let Some(d) = &self.dropped {
            out.push_str("\nDropped classes\n");
            for (c, n) in &d.removed {
                let _ = writeln!(out, "  {c}: {n} instance(s) removed");
            }
            for c in &d.unknown {
                let _ = writeln!(out, "  {c}: not present, ignored");
            }
            let _ = writeln!(out, "  images left without annotations: {}", d.orphaned_images.len());
        }
        out
    }
}

/// Left-aligned first column, right-aligned numbers; `total_rule` separates the last row.
pub(crate) fn render_table<const N: usize>(header: &[&str; N], rows: &[[String; N]], total_rule: bool) -> String {
    let mut widths = header.map(str::len);
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &[&str]| {
        let mut s = String::new();
        for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
            if i == 0 {
                let _ = write!(s, "{cell:<w$}");
            } else {
                let _ = write!(s, "  {cell:>w$}");
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let rule: String = "-".repeat(widths.iter().sum::<usize>() + 2 * (N - 1)) + "\n";
    let mut out = line(header);
    out.push_str(&rule);
    for (i, row) in rows.iter().enumerate() {
        if total_rule && i + 1 == rows.len() {
            out.push_str(&rule);
        }
        let cells: Vec<&str> = row.iter().map(String::as_str).collect();
        out.push_str(&line(&cells));
    }
    out
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Horizontal bar chart of the histogram as a standalone SVG document.
pub fn histogram_svg(h: &ClassHistogram, threshold: Option<usize>) -> String {
    const BAR: usize = 18;
    const GAP: usize = 6;
    const LABEL_W: usize = 200;
    const PLOT_W: usize = 500;
    let max = h.counts.values().copied().max().unwrap_or(0).max(1);
    let height = 40 + h.counts.len() * (BAR + GAP);
    let width = LABEL_W + PLOT_W + 80;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="10" y="20" font-size="14">Instances per class ({} annotations, {} images)</text>"#,
        h.total_annotations, h.total_images
    );
    for (i, (class, &n)) in h.counts.iter().enumerate() {
        let y = 34 + i * (BAR + GAP);
        let w = n * PLOT_W / max;
        let fill = match threshold {
            Some(t) if n < t => "#c0392b",
            _ => "#2e86c1",
        };
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            LABEL_W - 8,
            y + BAR - 5,
            xml_escape(class)
        );
        let _ = writeln!(svg, r#"<rect x="{LABEL_W}" y="{y}" width="{w}" height="{BAR}" fill="{fill}"/>"#);
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{n}</text>"#, LABEL_W + w + 4, y + BAR - 5);
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoundingBox;
    use crate::manifest::{ClassRegistry, ImageMeta};

    fn manifest(counts: &[(&str, usize)]) -> Manifest {
        let names: Vec<&str> = counts.iter().map(|(n, _)| *n).collect();
        let mut m = Manifest::new(ClassRegistry::from_names(&names));
        let mut img = 0;
        for (i, (_, n)) in counts.iter().enumerate() {
            for _ in 0..*n {
                let file = format!("{img:05}.png");
                m.images.insert(file.clone(), ImageMeta::with_source("stub"));
                m.annotations.push(Annotation {
                    filename: file,
                    class_id: i as u32 + 1,
                    bbox: BoundingBox::new(0.0, 0.0, 5.0, 5.0),
                });
                img += 1;
            }
        }
        m
    }

    #[test]
    fn histogram_counts() {
        let h = class_histogram(&manifest(&[("rbc", 3), ("platelet", 1)]));
        assert_eq!(h.counts["rbc"], 3);
        assert_eq!(h.counts["platelet"], 1);
        assert_eq!(h.total_annotations, 4);
        assert!(class_histogram(&Manifest::default()).counts.is_empty());
    }

    #[test]
    fn rare_report_flags() {
        let m = manifest(&[("b", 1000), ("a", 2)]);
        let r = rare_class_report(&m, 10);
        assert_eq!(r.rows[0].class, "a");
        assert!(r.rows[0].below_threshold);
        assert!(!r.rows[1].below_threshold);
        assert_eq!(rare_class_report(&m, 0).flagged().count(), 0);
    }

    #[test]
    fn drop_removes_and_recompacts() {
        let m = manifest(&[("rbc", 3), ("wbc (general)", 2), ("platelet", 1)]);
        let (out, report) = drop_classes(&m, &["wbc (general)"]);
        assert_eq!(out.annotation_count(), 4);
        assert_eq!(report.removed["wbc (general)"], 2);
        assert_eq!(out.classes.by_name("platelet").unwrap().id, 2);
        assert!(out.classes.is_contiguous());
        assert_eq!(report.orphaned_images.len(), 2);
        assert_eq!(out.image_count(), m.image_count());
        assert!(out.validate().is_ok());
        let h = class_histogram(&out);
        assert!(!h.counts.contains_key("wbc (general)"));
        assert_eq!(h.counts["rbc"], 3);
        assert_eq!(h.counts["platelet"], 1);
    }

    #[test]
    fn drop_unknown_is_a_noop() {
        let m = manifest(&[("rbc", 3)]);
        let (out, report) = drop_classes(&m, &["nope"]);
        assert_eq!(out, m);
        assert_eq!(report.unknown, ["nope"]);
    }

    #[test]
    fn drop_everything_keeps_images() {
        let m = manifest(&[("rbc", 3), ("platelet", 1)]);
        let (out, _) = drop_classes(&m, &["rbc", "platelet"]);
        assert_eq!(out.annotation_count(), 0);
        assert_eq!(out.image_count(), 4);
        assert!(out.classes.is_empty());
    }

    #[test]
    fn composition_requires_sources() {
        let mut m = manifest(&[("rbc", 1)]);
        m.images[0].source = None;
        let err = composition_report(&m).unwrap_err().to_string();
        assert!(err.contains("00000.png"), "{err}");
        let empty = composition_report(&Manifest::default()).unwrap();
        assert_eq!((empty.total_images, empty.total_annotations), (0, 0));
    }

    #[test]
    fn text_and_svg_render() {
        let m = manifest(&[("rbc", 3), ("a<b", 1)]);
        let report = AuditReport::build(&m, 2, None).unwrap();
        let text = report.to_text();
        assert!(text.contains("Total"));
        assert!(text.contains("stub"));
        let svg = histogram_svg(&report.histogram, Some(2));
        assert!(svg.starts_with("<svg") && svg.contains("a&lt;b"));
    }
}
