//! Operations that delete images or objects. Deleting an object always
//! removes its properties, polygons and match rows too.

use std::collections::BTreeMap;

use log::info;

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::store::AnnotationDb;

pub const DEFAULT_BORDER_THRESH_PERC: f64 = 0.01;

fn log_deleted(what: &str, deleted: usize, total: i64) {
    info!("Deleted {deleted} out of {total} {what}.");
}

/// Deletes images that have no objects.
pub fn filter_empty_images(db: &AnnotationDb) -> Result<usize> {
    let total = db.count("images")?;
    let n = db.delete_images_where("imagefile NOT IN (SELECT DISTINCT imagefile FROM objects)")?;
    log_deleted("images", n, total);
    Ok(n)
}

/// True when the box reaches into the border band of a `width` x `height`
/// image. The band is `perc` of the width on the left and right and `perc`
/// of the height on the top and bottom.
pub fn in_border_band(b: &BBox, width: f64, height: f64, perc: f64) -> bool {
    let tw = perc * width;
    let th = perc * height;
    b.x < tw || b.y < th || b.right() > width - tw || b.bottom() > height - th
}

/// Deletes objects whose box enters the border band. Objects without a box
/// are left alone.
pub fn filter_objects_at_border(db: &AnnotationDb, border_thresh_perc: f64) -> Result<usize> {
    let entries = db.objects(Some("x IS NOT NULL"))?;
    let mut doomed = Vec::new();
    for e in &entries {
        let (Some(w), Some(h)) = (e.image.width, e.image.height) else {
            return Err(Error::InvalidArgument(format!(
                "image {} has no width/height",
                e.image.imagefile
            )));
        };
        if in_border_band(
            e.object.bbox.as_ref().unwrap(),
            w as f64,
            h as f64,
            border_thresh_perc,
        ) {
            doomed.push(e.object.objectid);
        }
    }
    let total = db.count("objects")?;
    let n = db.delete_objects(&doomed)?;
    log_deleted("objects", n, total);
    Ok(n)
}

/// For each box, the largest fraction of its own area covered by any other
/// box in the slice. Zero-area boxes get 0.
pub fn max_overlap_ratios(boxes: &[BBox]) -> Vec<f64> {
    boxes
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let area = b.area();
            if area <= 0.0 {
                return 0.0;
            }
            boxes
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, o)| b.intersection_area(o) / area)
                .fold(0.0, f64::max)
        })
        .collect()
}

/// Deletes every object covered by another object of the same image by more
/// than `intersection_thresh_perc` of its own area. The ratio is measured
/// against the object's own area, not IoU. All decisions use the geometry
/// before any deletion.
pub fn filter_objects_by_intersection(
    db: &AnnotationDb,
    intersection_thresh_perc: f64,
) -> Result<usize> {
    let records = db.object_records(Some("x IS NOT NULL"))?;
    let mut by_image: BTreeMap<&str, Vec<(i64, BBox)>> = BTreeMap::new();
    for r in &records {
        by_image
            .entry(r.imagefile.as_str())
            .or_default()
            .push((r.objectid, r.bbox.unwrap()));
    }
    let mut doomed = Vec::new();
    for objects in by_image.values() {
        let boxes: Vec<BBox> = objects.iter().map(|(_, b)| *b).collect();
        for ((id, _), ratio) in objects.iter().zip(max_overlap_ratios(&boxes)) {
            if ratio > intersection_thresh_perc {
                doomed.push(*id);
            }
        }
    }
    let total = db.count("objects")?;
    let n = db.delete_objects(&doomed)?;
    log_deleted("objects", n, total);
    Ok(n)
}

/// Deletes objects matching an SQL condition over the objects columns.
pub fn filter_objects_sql(db: &AnnotationDb, where_object: &str) -> Result<usize> {
    let total = db.count("objects")?;
    let n = db.delete_objects_where(where_object)?;
    log_deleted("objects", n, total);
    Ok(n)
}

/// Deletes images matching an SQL condition over the images columns, along
/// with their objects.
pub fn filter_images_sql(db: &AnnotationDb, where_image: &str) -> Result<usize> {
    let total = db.count("images")?;
    let n = db.delete_images_where(where_image)?;
    log_deleted("images", n, total);
    Ok(n)
}
