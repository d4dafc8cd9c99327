//! LabelMe XML: objects outlined by polygons, with a `deleted` flag.

use std::fs;
use std::path::Path;

use roxmltree::Document;

use crate::error::Result;
use crate::formats::voc::{child, child_text};
use crate::formats::{list_files, relative_imagefile, ImportReport};
use crate::media;
use crate::store::{AnnotationDb, ImageRecord, NewObject};

#[derive(Debug, Clone, PartialEq)]
pub struct LabelmeObject {
    pub name: Option<String>,
    /// Each polygon's points in file order.
    pub polygons: Vec<Vec<(f64, f64)>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelmeAnnotation {
    pub filename: Option<String>,
    pub size: Option<(u32, u32)>,
    /// Objects not flagged as deleted.
    pub objects: Vec<LabelmeObject>,
}

pub fn parse(xml: &str) -> std::result::Result<LabelmeAnnotation, String> {
    let doc = Document::parse(xml).map_err(|e| e.to_string())?;
    let root = doc.root_element();
    if !root.has_tag_name("annotation") {
        return Err(format!("unexpected root <{}>", root.tag_name().name()));
    }
    let size = child(root, "imagesize").and_then(|s| {
        let rows = child_text(s, "nrows")?.parse::<u32>().ok()?;
        let cols = child_text(s, "ncols")?.parse::<u32>().ok()?;
        (rows > 0 && cols > 0).then_some((cols, rows))
    });
    let mut objects = Vec::new();
    for obj in root.children().filter(|n| n.has_tag_name("object")) {
        if child_text(obj, "deleted") == Some("1") {
            continue;
        }
        let mut polygons = Vec::new();
        for poly in obj.children().filter(|n| n.has_tag_name("polygon")) {
            let mut points = Vec::new();
            for pt in poly.children().filter(|n| n.has_tag_name("pt")) {
                let coord = |tag: &str| -> std::result::Result<f64, String> {
                    let t = child_text(pt, tag).ok_or_else(|| format!("<pt> without <{tag}>"))?;
                    t.parse().map_err(|_| format!("<{tag}> is not a number: `{t}`"))
                };
                points.push((coord("x")?, coord("y")?));
            }
            if !points.is_empty() {
                polygons.push(points);
            }
        }
        objects.push(LabelmeObject {
            name: child_text(obj, "name").filter(|n| !n.is_empty()).map(String::from),
            polygons,
        });
    }
    Ok(LabelmeAnnotation {
        filename: child_text(root, "filename").map(String::from),
        size,
        objects,
    })
}

/// Imports every `*.xml` in `annotations_dir`. Objects get polygons only;
/// boxes stay empty until derived from the polygons. When an object has
/// several polygons their points are told apart by the polygon name
/// ("0", "1", ...).
pub fn import_labelme(
    db: &AnnotationDb,
    rootdir: &Path,
    images_dir: &Path,
    annotations_dir: &Path,
) -> Result<ImportReport> {
    let mut report = ImportReport::default();
    let files = list_files(annotations_dir, &["xml"])?;
    db.atomic(|db| {
        for path in &files {
            let parsed = fs::read_to_string(path)
                .map_err(|e| e.to_string())
                .and_then(|xml| parse(&xml));
            let ann = match parsed {
                Ok(a) => a,
                Err(e) => {
                    report.skip(path, e);
                    continue;
                }
            };
            let filename = ann.filename.clone().unwrap_or_else(|| {
                format!("{}.jpg", path.file_stem().unwrap_or_default().to_string_lossy())
            });
            let image_path = images_dir.join(&filename);
            let imagefile = relative_imagefile(rootdir, &image_path);
            if db.image(&imagefile)?.is_some() {
                report.skip(path, "image already in database");
                continue;
            }
            let size = ann.size.or_else(|| media::image_size(&image_path).ok());
            let mut image = ImageRecord::new(&imagefile);
            if let Some((w, h)) = size {
                image = image.with_size(w, h);
            }
            db.insert_image(&image)?;
            report.images_added += 1;
            for obj in ann.objects {
                let mut new = NewObject::new(&imagefile);
                new.name = obj.name;
                let objectid = db.insert_object(&new)?;
                let named = obj.polygons.len() > 1;
                for (i, polygon) in obj.polygons.iter().enumerate() {
                    let name = named.then(|| i.to_string());
                    for &(x, y) in polygon {
                        db.add_polygon_point(objectid, x, y, name.as_deref())?;
                    }
                }
                report.objects_added += 1;
            }
        }
        Ok(())
    })?;
    log::info!("{report}");
    Ok(report)
}
