//! KITTI object-detection labels: one whitespace-separated text file per
//! image, one object per line.
//!
//! ```text
//! type truncated occluded alpha left top right bottom h w l x y z rotation_y [score]
//! ```
//!
//! The box becomes the object's box, `type` its name, an optional 16th
//! column its score, and every other column a property.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::formats::{list_files, relative_imagefile, ImportReport, IMAGE_EXTENSIONS};
use crate::geometry::BBox;
use crate::media;
use crate::store::{AnnotationDb, ImageRecord, NewObject};

/// Property keys in label-column order, paired with the column index and the
/// value written on export when the property is absent.
pub const PROPERTY_COLUMNS: [(&str, usize, &str); 10] = [
    ("truncated", 1, "0"),
    ("occluded", 2, "0"),
    ("alpha", 3, "-10"),
    ("dim_height", 8, "-1"),
    ("dim_width", 9, "-1"),
    ("dim_length", 10, "-1"),
    ("loc_x", 11, "-1"),
    ("loc_y", 12, "-1"),
    ("loc_z", 13, "-1"),
    ("rotation_y", 14, "-10"),
];

const LABEL_FIELDS: usize = 15;

/// One parsed label line. Property values keep their source text.
#[derive(Debug, Clone, PartialEq)]
pub struct KittiLabel {
    pub name: String,
    pub bbox: BBox,
    pub properties: Vec<(&'static str, String)>,
    pub score: Option<f64>,
}

pub fn parse_line(line: &str) -> std::result::Result<KittiLabel, String> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != LABEL_FIELDS && fields.len() != LABEL_FIELDS + 1 {
        return Err(format!(
            "expected {} or {} fields, got {}",
            LABEL_FIELDS,
            LABEL_FIELDS + 1,
            fields.len()
        ));
    }
    let num = |i: usize| -> std::result::Result<f64, String> {
        fields[i]
            .parse::<f64>()
            .map_err(|_| format!("field {} is not a number: `{}`", i + 1, fields[i]))
    };
    let (left, top, right, bottom) = (num(4)?, num(5)?, num(6)?, num(7)?);
    if right < left || bottom < top {
        return Err(format!("inverted box {left} {top} {right} {bottom}"));
    }
    let mut properties = Vec::with_capacity(PROPERTY_COLUMNS.len());
    for (key, col, _) in PROPERTY_COLUMNS {
        num(col)?;
        properties.push((key, fields[col].to_string()));
    }
    let score = if fields.len() > LABEL_FIELDS {
        Some(num(LABEL_FIELDS)?)
    } else {
        None
    };
    Ok(KittiLabel {
        name: fields[0].to_string(),
        bbox: BBox::from_corners(left, top, right, bottom),
        properties,
        score,
    })
}

/// Parses a whole label file; any bad line rejects the file.
pub fn parse_labels(text: &str) -> std::result::Result<Vec<KittiLabel>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_line(l).map_err(|e| format!("line {}: {e}", i + 1)))
        .collect()
}

/// Imports every image in `images_dir` and the matching `<stem>.txt` label
/// file from `detection_dir`. Images without a label file get no objects.
pub fn import_kitti(
    db: &AnnotationDb,
    rootdir: &Path,
    images_dir: &Path,
    detection_dir: &Path,
) -> Result<ImportReport> {
    if !detection_dir.is_dir() {
        return Err(Error::NotFound(format!(
            "detection directory {}",
            detection_dir.display()
        )));
    }
    let mut report = ImportReport::default();
    let images = list_files(images_dir, IMAGE_EXTENSIONS)?;
    db.atomic(|db| {
        for image_path in &images {
            let (width, height) = match media::image_size(image_path) {
                Ok(size) => size,
                Err(e) => {
                    report.skip(image_path, e);
                    continue;
                }
            };
            let imagefile = relative_imagefile(rootdir, image_path);
            if db.image(&imagefile)?.is_some() {
                report.skip(image_path, "image already in database");
                continue;
            }
            db.insert_image(&ImageRecord::new(&imagefile).with_size(width, height))?;
            report.images_added += 1;

            let stem = image_path.file_stem().unwrap_or_default().to_string_lossy();
            let label_path = detection_dir.join(format!("{stem}.txt"));
            if !label_path.is_file() {
                continue;
            }
            let text = match fs::read_to_string(&label_path) {
                Ok(t) => t,
                Err(e) => {
                    report.skip(&label_path, e);
                    continue;
                }
            };
            let labels = match parse_labels(&text) {
                Ok(l) => l,
                Err(e) => {
                    report.skip(&label_path, e);
                    continue;
                }
            };
            for label in labels {
                let mut object = NewObject::new(&imagefile)
                    .with_box(label.bbox)
                    .with_name(label.name);
                object.score = label.score;
                let objectid = db.insert_object(&object)?;
                for (key, value) in &label.properties {
                    db.add_property(objectid, key, value)?;
                }
                report.objects_added += 1;
            }
        }
        Ok(())
    })?;
    log::info!("{report}");
    Ok(report)
}

/// Formats one object as a label line. Missing properties take the
/// "don't care" sentinels from [`PROPERTY_COLUMNS`].
pub fn format_line(
    name: Option<&str>,
    bbox: &BBox,
    properties: &BTreeMap<&str, &str>,
    score: Option<f64>,
) -> String {
    let mut fields: Vec<String> = vec![String::new(); LABEL_FIELDS];
    fields[0] = name.unwrap_or("DontCare").replace(char::is_whitespace, "_");
    fields[4] = bbox.x.to_string();
    fields[5] = bbox.y.to_string();
    fields[6] = bbox.right().to_string();
    fields[7] = bbox.bottom().to_string();
    for (key, col, default) in PROPERTY_COLUMNS {
        fields[col] = properties.get(key).copied().unwrap_or(default).to_string();
    }
    if let Some(score) = score {
        fields.push(score.to_string());
    }
    fields.join(" ")
}

/// Writes one `<stem>.txt` per image into `detection_dir`; returns the
/// number of files written.
pub fn export_kitti(db: &AnnotationDb, detection_dir: &Path) -> Result<usize> {
    let images = db.images(None)?;
    let objects = db.objects(None)?;
    if let Some(bad) = objects.iter().find(|o| o.object.bbox.is_none()) {
        return Err(Error::InvalidArgument(format!(
            "object {} has no bounding box",
            bad.object.objectid
        )));
    }
    if images.is_empty() {
        return Ok(0);
    }
    fs::create_dir_all(detection_dir).map_err(|e| Error::io(detection_dir, e))?;
    let mut by_image: BTreeMap<&str, Vec<String>> = images
        .iter()
        .map(|i| (i.imagefile.as_str(), Vec::new()))
        .collect();
    for entry in &objects {
        let props: BTreeMap<&str, &str> = entry
            .properties
            .iter()
            .map(|p| (p.key.as_str(), p.value.as_str()))
            .collect();
        let line = format_line(
            entry.object.name.as_deref(),
            entry.object.bbox.as_ref().unwrap(),
            &props,
            entry.object.score,
        );
        by_image
            .entry(entry.object.imagefile.as_str())
            .or_default()
            .push(line);
    }
    for (imagefile, lines) in &by_image {
        let stem = Path::new(imagefile).file_stem().unwrap_or_default().to_string_lossy();
        let path = detection_dir.join(format!("{stem}.txt"));
        let mut text = lines.join("\n");
        if !text.is_empty() {
            text.push('\n');
        }
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(by_image.len())
}
