//! PASCAL VOC: one XML file per image with a `size` element and `object`
//! elements carrying `name`, `bndbox` corners and optional flags.

use std::fs;
use std::path::Path;

use roxmltree::{Document, Node};

use crate::error::Result;
use crate::formats::{list_files, relative_imagefile, ImportReport};
use crate::geometry::BBox;
use crate::store::{AnnotationDb, ImageRecord, NewObject};

/// Object flags copied into properties when present.
pub const FLAG_KEYS: [&str; 3] = ["difficult", "truncated", "pose"];

#[derive(Debug, Clone, PartialEq)]
pub struct VocObject {
    pub name: String,
    pub bbox: BBox,
    pub flags: Vec<(&'static str, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VocAnnotation {
    pub filename: Option<String>,
    pub size: Option<(u32, u32)>,
    pub objects: Vec<VocObject>,
}

pub(crate) fn child<'a>(node: Node<'a, 'a>, tag: &str) -> Option<Node<'a, 'a>> {
    node.children().find(|n| n.has_tag_name(tag))
}

pub(crate) fn child_text<'a>(node: Node<'a, 'a>, tag: &str) -> Option<&'a str> {
    child(node, tag).and_then(|n| n.text()).map(str::trim)
}

fn number(node: Node, tag: &str) -> std::result::Result<f64, String> {
    let text = child_text(node, tag).ok_or_else(|| format!("missing <{tag}>"))?;
    text.parse()
        .map_err(|_| format!("<{tag}> is not a number: `{text}`"))
}

pub fn parse(xml: &str) -> std::result::Result<VocAnnotation, String> {
    let doc = Document::parse(xml).map_err(|e| e.to_string())?;
    let root = doc.root_element();
    if !root.has_tag_name("annotation") {
        return Err(format!("unexpected root <{}>", root.tag_name().name()));
    }
    let size = match child(root, "size") {
        Some(s) => {
            let w = number(s, "width")?;
            let h = number(s, "height")?;
            (w > 0.0 && h > 0.0).then_some((w as u32, h as u32))
        }
        None => None,
    };
    let mut objects = Vec::new();
    for obj in root.children().filter(|n| n.has_tag_name("object")) {
        let name = child_text(obj, "name").ok_or("object without <name>")?;
        let bndbox = child(obj, "bndbox").ok_or("object without <bndbox>")?;
        let (xmin, ymin) = (number(bndbox, "xmin")?, number(bndbox, "ymin")?);
        let (xmax, ymax) = (number(bndbox, "xmax")?, number(bndbox, "ymax")?);
        if xmax < xmin || ymax < ymin {
            return Err(format!("inverted bndbox {xmin} {ymin} {xmax} {ymax}"));
        }
        let flags = FLAG_KEYS
            .iter()
            .filter_map(|&k| child_text(obj, k).map(|v| (k, v.to_string())))
            .collect();
        objects.push(VocObject {
            name: name.to_string(),
            bbox: BBox::from_corners(xmin, ymin, xmax, ymax),
            flags,
        });
    }
    Ok(VocAnnotation {
        filename: child_text(root, "filename").map(String::from),
        size,
        objects,
    })
}

/// Imports every `*.xml` in `annotations_dir`. The image is looked up as
/// `images_dir/<filename>` (or `<xml stem>.jpg` when `filename` is absent).
pub fn import_pascal_voc(
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
            let imagefile = relative_imagefile(rootdir, &images_dir.join(&filename));
            if db.image(&imagefile)?.is_some() {
                report.skip(path, "image already in database");
                continue;
            }
            let mut image = ImageRecord::new(&imagefile);
            if let Some((w, h)) = ann.size {
                image = image.with_size(w, h);
            }
            db.insert_image(&image)?;
            report.images_added += 1;
            for obj in ann.objects {
                let objectid =
                    db.insert_object(&NewObject::new(&imagefile).with_box(obj.bbox).with_name(obj.name))?;
                for (key, value) in &obj.flags {
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
