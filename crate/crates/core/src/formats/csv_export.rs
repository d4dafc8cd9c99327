use std::path::Path;

use crate::error::{Error, Result};
use crate::store::AnnotationDb;

pub const CSV_HEADER: [&str; 8] = [
    "imagefile", "objectid", "name", "x", "y", "width", "height", "score",
];

/// Writes one RFC 4180 row per object after a header row; returns the number
/// of object rows.
pub fn export_csv(db: &AnnotationDb, out_path: &Path) -> Result<usize> {
    let mut writer = csv::Writer::from_path(out_path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(out_path, io),
        other => Error::InvalidArgument(format!("{other:?}")),
    })?;
    writer.write_record(CSV_HEADER)?;
    let objects = db.object_records(None)?;
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for o in &objects {
        let b = o.bbox;
        writer.write_record([
            o.imagefile.clone(),
            o.objectid.to_string(),
            o.name.clone().unwrap_or_default(),
            opt(b.map(|b| b.x)),
            opt(b.map(|b| b.y)),
            opt(b.map(|b| b.width)),
            opt(b.map(|b| b.height)),
            opt(o.score),
        ])?;
    }
    writer.flush().map_err(|e| Error::io(out_path, e))?;
    Ok(objects.len())
}
