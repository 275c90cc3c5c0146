//! On-disk source datasets for end-to-end tests.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};

fn write_classes(dir: &Path, classes: &[(&str, Option<u32>)]) {
    let mut map = serde_json::Map::new();
    for (i, (name, size)) in classes.iter().enumerate() {
        let mut entry = serde_json::json!({ "id": i + 1 });
        if let Some(s) = size {
            entry["bbox_size"] = (*s).into();
        }
        map.insert(name.to_string(), entry);
    }
    fs::write(dir.join("classes.json"), serde_json::to_string_pretty(&map).unwrap()).unwrap();
}

/// A pixel-free source: sizes in `images.csv`, no raster files.
///
/// Annotations are dealt round-robin over the images; with `image_level` each image
/// gets exactly one label instead (so `n_annotations` must equal `n_images`).
pub fn stub_source(dir: &Path, n_images: usize, n_annotations: usize, image_level: bool, classes: &[&str]) {
    fs::create_dir_all(dir).unwrap();
    let sized: Vec<(&str, Option<u32>)> = classes.iter().map(|c| (*c, image_level.then_some(360))).collect();
    write_classes(dir, &sized);
    let name = |i: usize| format!("img_{i:05}.jpg");

    let mut sizes = String::from("filename,width,height\n");
    for i in 0..n_images {
        let (w, h) = if i % 3 == 0 { (640, 480) } else { (360, 363) };
        writeln!(sizes, "{},{w},{h}", name(i)).unwrap();
    }
    fs::write(dir.join("images.csv"), sizes).unwrap();

    if image_level {
        assert_eq!(n_images, n_annotations);
        let mut labels = String::from("filename,class\n");
        for i in 0..n_images {
            writeln!(labels, "{},{}", name(i), classes[i % classes.len()]).unwrap();
        }
        fs::write(dir.join("labels.csv"), labels).unwrap();
    } else {
        let mut rows = String::from("filename,class,x1,y1,x2,y2\n");
        for k in 0..n_annotations {
            let i = k % n_images;
            let slot = k / n_images;
            let x = 5 + (slot % 10) * 30;
            let y = 5 + (slot / 10 % 10) * 30;
            writeln!(rows, "{},{},{x},{y},{},{}", name(i), classes[k % classes.len()], x + 24, y + 20).unwrap();
        }
        fs::write(dir.join("annotations.csv"), rows).unwrap();
    }
}

fn gradient(w: u32, h: u32, tint: u8) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| Rgb([(x * 255 / w.max(1)) as u8, (y * 255 / h.max(1)) as u8, tint]))
}

/// A small box-annotated source with real PNG files of mixed shapes.
pub fn png_box_source(dir: &Path) {
    let images = dir.join("images");
    fs::create_dir_all(&images).unwrap();
    write_classes(dir, &[("rbc", None), ("wbc", None), ("platelet", None)]);
    let shapes = [(640, 480), (300, 400), (512, 512), (1024, 256), (200, 200)];
    let mut rows = String::from("filename,class,x1,y1,x2,y2\n");
    for (i, &(w, h)) in shapes.iter().enumerate() {
        let file = format!("smear_{i}.png");
        gradient(w, h, (i * 40) as u8).save(images.join(&file)).unwrap();
        writeln!(rows, "{file},rbc,10,10,{},{}", w / 3, h / 3).unwrap();
        writeln!(rows, "{file},wbc,{},{},{},{}", w / 2, h / 2, w - 5, h - 5).unwrap();
        if i % 2 == 0 {
            writeln!(rows, "{file},platelet,{},{},{},{}", w / 4, h / 2, w / 4 + 12, h / 2 + 9).unwrap();
        }
    }
    fs::write(dir.join("annotations.csv"), rows).unwrap();
}

/// A small image-level source (one cell per image) with real PNG files.
pub fn png_label_source(dir: &Path) {
    let images = dir.join("images");
    fs::create_dir_all(&images).unwrap();
    write_classes(dir, &[("neutrophil", Some(300)), ("lymphocyte", Some(250)), ("rbc", Some(100))]);
    let mut labels = String::from("filename,class\n");
    for i in 0..6 {
        let file = format!("cell_{i}.jpg");
        image::DynamicImage::ImageRgb8(gradient(360, 363, 200)).save(images.join(&file)).unwrap();
        let class = ["neutrophil", "lymphocyte"][i % 2];
        writeln!(labels, "{file},{class}").unwrap();
    }
    fs::write(dir.join("labels.csv"), labels).unwrap();
}
