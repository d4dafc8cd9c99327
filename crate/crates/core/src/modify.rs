//! In-place edits and dataset restructuring. Only the database changes;
//! source images on disk are never modified.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rusqlite::params;

use crate::error::{Error, Result};
use crate::formats::{relative_imagefile, ImportReport, Skipped};
use crate::geometry::BBox;
use crate::media::{self, EdgePolicy, PixelBuffer};
use crate::store::{backup_path, AnnotationDb, ImageRecord, NewObject};

/// Grows every box by `expand_perc` of its size on each side (shrinks for
/// negative values). Boxes are not clamped to the image.
pub fn expand_boxes(db: &AnnotationDb, expand_perc: f64) -> Result<usize> {
    if !(expand_perc >= -0.5) {
        return Err(Error::InvalidArgument(format!(
            "expand_perc must be >= -0.5, got {expand_perc}"
        )));
    }
    let records = db.object_records(Some("x IS NOT NULL"))?;
    db.atomic(|db| {
        for r in &records {
            db.set_box(r.objectid, Some(r.bbox.unwrap().expanded(expand_perc)))?;
        }
        Ok(())
    })?;
    Ok(records.len())
}

/// Clips every box to its image bounds; returns how many boxes changed.
pub fn clamp_boxes_to_image(db: &AnnotationDb) -> Result<usize> {
    let entries = db.objects(Some("x IS NOT NULL"))?;
    db.atomic(|db| {
        let mut changed = 0;
        for e in &entries {
            let (Some(w), Some(h)) = (e.image.width, e.image.height) else {
                continue;
            };
            let b = e.object.bbox.unwrap();
            let x0 = b.x.clamp(0.0, w as f64);
            let y0 = b.y.clamp(0.0, h as f64);
            let x1 = b.right().clamp(0.0, w as f64);
            let y1 = b.bottom().clamp(0.0, h as f64);
            let clamped = BBox::from_corners(x0, y0, x1, y1);
            if clamped != b {
                db.set_box(e.object.objectid, Some(clamped))?;
                changed += 1;
            }
        }
        Ok(changed)
    })
}

/// Sets each polygon-bearing object's box to the tightest box around all of
/// its polygon points. Polygons are kept.
pub fn polygons_to_boxes(db: &AnnotationDb) -> Result<usize> {
    let entries = db.objects(Some("objectid IN (SELECT objectid FROM polygons)"))?;
    db.atomic(|db| {
        let mut n = 0;
        for e in &entries {
            if let Some(b) = BBox::enclosing(e.polygons.iter().map(|p| (p.x, p.y))) {
                db.set_box(e.object.objectid, Some(b))?;
                n += 1;
            }
        }
        Ok(n)
    })
}

/// Merges another database file into this one. Images with the same
/// imagefile are unified; every other row gets a fresh id, and match values
/// are shifted past this database's largest one so groups stay disjoint.
/// Conflicting image sizes abort the merge before anything is written.
pub fn add_database(db: &AnnotationDb, other_path: &Path) -> Result<ImportReport> {
    let other = AnnotationDb::open_read_only(other_path)?;
    let other_images = other.images(None)?;
    for img in &other_images {
        if let Some(mine) = db.image(&img.imagefile)? {
            let differs = |a: Option<u32>, b: Option<u32>| matches!((a, b), (Some(a), Some(b)) if a != b);
            if differs(mine.width, img.width) || differs(mine.height, img.height) {
                return Err(Error::Conflict(format!(
                    "image {} is {:?}x{:?} here but {:?}x{:?} in {}",
                    img.imagefile,
                    mine.width,
                    mine.height,
                    img.width,
                    img.height,
                    other_path.display()
                )));
            }
        }
    }
    let objects = other.objects(None)?;
    let (max_here, min_there): (i64, i64) = (
        db.conn()
            .query_row("SELECT COALESCE(MAX(match), 0) FROM matches", [], |r| r.get(0))?,
        other
            .conn()
            .query_row("SELECT COALESCE(MIN(match), 0) FROM matches", [], |r| r.get(0))?,
    );
    let match_offset = max_here + 1 - min_there.min(0);

    let mut report = ImportReport::default();
    db.atomic(|db| {
        for img in &other_images {
            if db.image(&img.imagefile)?.is_none() {
                db.insert_image(img)?;
                report.images_added += 1;
            }
        }
        for e in &objects {
            let o = &e.object;
            let id = db.insert_object(&NewObject {
                imagefile: o.imagefile.clone(),
                bbox: o.bbox,
                name: o.name.clone(),
                score: o.score,
            })?;
            for p in &e.properties {
                db.add_property(id, &p.key, &p.value)?;
            }
            for p in &e.polygons {
                db.add_polygon_point(id, p.x, p.y, p.name.as_deref())?;
            }
            for m in &e.matches {
                db.add_match(id, m + match_offset)?;
            }
            report.objects_added += 1;
        }
        Ok(())
    })?;
    info!("{report}");
    Ok(report)
}

/// Number of images each split receives. Every split gets
/// `floor(fraction * n)`; the rounding remainder goes to the first split.
pub fn split_counts(n: usize, fractions: &[f64]) -> Result<Vec<usize>> {
    if fractions.is_empty() {
        return Err(Error::InvalidArgument("no fractions given".into()));
    }
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(Error::InvalidArgument(format!("fraction {f} is not in (0, 1]")));
    }
    let sum: f64 = fractions.iter().sum();
    if sum > 1.0 + 1e-9 {
        return Err(Error::InvalidArgument(format!("fractions exceed 1 (sum {sum})")));
    }
    let floor = |v: f64| (v + 1e-9).floor() as usize;
    let mut counts: Vec<usize> = fractions.iter().map(|f| floor(f * n as f64)).collect();
    let total = floor(sum * n as f64).min(n);
    let assigned: usize = counts.iter().sum();
    counts[0] += total.saturating_sub(assigned);
    Ok(counts)
}

/// The imagefiles of each split, after a seeded shuffle of all images.
pub fn split_assignment(
    imagefiles: &[String],
    fractions: &[f64],
    seed: u64,
) -> Result<Vec<Vec<String>>> {
    let counts = split_counts(imagefiles.len(), fractions)?;
    let mut shuffled = imagefiles.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = Vec::with_capacity(counts.len());
    let mut start = 0;
    for c in counts {
        out.push(shuffled[start..start + c].to_vec());
        start += c;
    }
    Ok(out)
}

/// Writes each split to its own database file; the open database is not
/// changed. Returns the number of images per split.
pub fn split_database(
    db: &AnnotationDb,
    fractions: &[f64],
    out_names: &[PathBuf],
    seed: u64,
) -> Result<Vec<usize>> {
    if fractions.len() != out_names.len() {
        return Err(Error::InvalidArgument(format!(
            "{} fractions but {} output names",
            fractions.len(),
            out_names.len()
        )));
    }
    let imagefiles: Vec<String> = db.images(None)?.into_iter().map(|i| i.imagefile).collect();
    let splits = split_assignment(&imagefiles, fractions, seed)?;
    for (files, path) in splits.iter().zip(out_names) {
        write_subset(db, files, path)?;
        info!("wrote {} images to {}", files.len(), path.display());
    }
    Ok(splits.iter().map(Vec::len).collect())
}

/// Copies the given images and all their dependent rows, ids unchanged, into
/// a new database file at `path`. An existing file is moved to its backup.
pub fn write_subset(db: &AnnotationDb, imagefiles: &[String], path: &Path) -> Result<()> {
    let subset = AnnotationDb::in_memory()?;
    let conn = db.conn();
    conn.execute_batch(
        "DROP TABLE IF EXISTS temp.subset_images;
         CREATE TEMP TABLE subset_images (imagefile TEXT PRIMARY KEY);",
    )?;
    {
        let mut stmt = conn.prepare("INSERT OR IGNORE INTO temp.subset_images VALUES (?1)")?;
        for f in imagefiles {
            stmt.execute([f])?;
        }
    }
    let result = (|| -> Result<()> {
        let images = db.images(Some("imagefile IN (SELECT imagefile FROM temp.subset_images)"))?;
        for img in &images {
            subset.insert_image(img)?;
        }
        let entries =
            db.objects(Some("imagefile IN (SELECT imagefile FROM temp.subset_images)"))?;
        let sc = subset.conn();
        let mut obj = sc.prepare(
            "INSERT INTO objects (objectid, imagefile, x, y, width, height, name, score)
             VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8)",
        )?;
        let mut prop =
            sc.prepare("INSERT INTO properties (id, objectid, key, value) VALUES (?1, ?2, ?3, ?4)")?;
        let mut poly =
            sc.prepare("INSERT INTO polygons (id, objectid, x, y, name) VALUES (?1, ?2, ?3, ?4, ?5)")?;
        for e in &entries {
            let o = &e.object;
            let b = o.bbox;
            obj.execute(params![
                o.objectid,
                o.imagefile,
                b.map(|b| b.x),
                b.map(|b| b.y),
                b.map(|b| b.width),
                b.map(|b| b.height),
                o.name,
                o.score
            ])?;
            for p in &e.properties {
                prop.execute(params![p.id, p.objectid, p.key, p.value])?;
            }
            for p in &e.polygons {
                poly.execute(params![p.id, p.objectid, p.x, p.y, p.name])?;
            }
        }
        // Match rows are read separately so they keep their ids.
        let mut stmt = conn.prepare(
            "SELECT id, objectid, match FROM matches WHERE objectid IN
             (SELECT objectid FROM objects WHERE imagefile IN
              (SELECT imagefile FROM temp.subset_images)) ORDER BY id",
        )?;
        let rows = stmt
            .query_map([], |r| Ok((r.get::<_, i64>(0)?, r.get::<_, i64>(1)?, r.get::<_, i64>(2)?)))?
            .collect::<rusqlite::Result<Vec<_>>>()?;
        let mut mat = sc.prepare("INSERT INTO matches (id, objectid, match) VALUES (?1, ?2, ?3)")?;
        for (id, objectid, m) in rows {
            mat.execute(params![id, objectid, m])?;
        }
        Ok(())
    })();
    conn.execute_batch("DROP TABLE IF EXISTS temp.subset_images")?;
    result?;
    if path.exists() {
        let backup = backup_path(path);
        fs::rename(path, &backup).map_err(|e| Error::io(path, e))?;
    }
    subset.write_to(path)
}

#[derive(Debug, Clone)]
pub struct CropOptions {
    pub target_width: u32,
    pub target_height: u32,
    pub edges: EdgePolicy,
    pub image_pictures_dir: PathBuf,
    pub jpeg_quality: u8,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CropReport {
    pub written: usize,
    pub skipped: Vec<Skipped>,
}

/// Crops every object out of its image into `<image_pictures_dir>/<objectid>.jpg`
/// and rewrites the database so each crop is an image holding that one
/// object. Boxes and polygons are mapped into crop coordinates; objects that
/// could not be cropped are removed along with the original images.
pub fn crop_objects(db: &AnnotationDb, rootdir: &Path, opts: &CropOptions) -> Result<CropReport> {
    fs::create_dir_all(&opts.image_pictures_dir)
        .map_err(|e| Error::io(&opts.image_pictures_dir, e))?;
    let entries = db.objects(None)?;
    let mut report = CropReport::default();
    let mut cached: Option<(String, std::result::Result<PixelBuffer, String>)> = None;
    let mut results = Vec::new();

    for e in &entries {
        let id = e.object.objectid;
        let Some(bbox) = e.object.bbox else {
            report.skipped.push(skipped(id, "object has no bounding box"));
            continue;
        };
        if cached.as_ref().map(|(f, _)| f != &e.image.imagefile).unwrap_or(true) {
            let decoded = media::read_image(rootdir, &e.image.imagefile).map_err(|e| e.to_string());
            cached = Some((e.image.imagefile.clone(), decoded));
        }
        let source = match &cached.as_ref().unwrap().1 {
            Ok(buf) => buf,
            Err(msg) => {
                report.skipped.push(skipped(id, msg));
                continue;
            }
        };
        let crop = match media::crop_and_resize(
            source,
            &bbox,
            (opts.target_width, opts.target_height),
            opts.edges,
        ) {
            Ok(c) => c,
            Err(err) => {
                report.skipped.push(skipped(id, err));
                continue;
            }
        };
        let out_path = opts.image_pictures_dir.join(format!("{id}.jpg"));
        media::write_image(&out_path, &crop.buffer, opts.jpeg_quality)?;
        report.written += 1;
        results.push((e, relative_imagefile(rootdir, &out_path), crop));
    }
    for s in &report.skipped {
        log::warn!("skipping {}: {}", s.path.display(), s.reason);
    }

    db.atomic(|db| {
        db.conn().execute("DELETE FROM images", [])?;
        let mut poly = db
            .conn()
            .prepare("UPDATE polygons SET x = ?2, y = ?3 WHERE id = ?1")?;
        for (e, imagefile, crop) in &results {
            db.insert_image(&ImageRecord::new(imagefile).with_size(crop.buffer.width, crop.buffer.height))?;
            db.conn().execute(
                "UPDATE objects SET imagefile = ?2 WHERE objectid = ?1",
                params![e.object.objectid, imagefile],
            )?;
            db.set_box(e.object.objectid, Some(crop.content))?;
            for p in &e.polygons {
                let (x, y) = crop.transform.apply(p.x, p.y);
                poly.execute(params![p.id, x, y])?;
            }
        }
        db.purge_orphans()
    })?;
    info!("wrote {} crops to {}", report.written, opts.image_pictures_dir.display());
    Ok(report)
}

fn skipped(objectid: i64, reason: impl ToString) -> Skipped {
    Skipped {
        path: PathBuf::from(format!("object {objectid}")),
        reason: reason.to_string(),
    }
}

/// Object counts per image, for callers that need a quick per-image tally.
pub fn objects_per_image(db: &AnnotationDb) -> Result<HashMap<String, usize>> {
    let mut stmt = db
        .conn()
        .prepare("SELECT imagefile, COUNT(*) FROM objects GROUP BY imagefile")?;
    let rows = stmt
        .query_map([], |r| Ok((r.get::<_, String>(0)?, r.get::<_, i64>(1)? as usize)))?
        .collect::<rusqlite::Result<HashMap<_, _>>>()?;
    Ok(rows)
}
