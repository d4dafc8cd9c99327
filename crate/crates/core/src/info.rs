//! Aggregate statistics and histogram output.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;

use rusqlite::types::ValueRef;

use crate::error::{Error, Result};
use crate::store::AnnotationDb;

/// Distinct values of an image dimension.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DimensionSummary {
    None,
    Single(u32),
    Many(usize),
}

impl fmt::Display for DimensionSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DimensionSummary::None => write!(f, "no values"),
            DimensionSummary::Single(v) => write!(f, "{v}"),
            DimensionSummary::Many(n) => write!(f, "{n} different values"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DbSummary {
    pub num_images: i64,
    pub num_objects: i64,
    pub num_masks: i64,
    /// Number of distinct match groups.
    pub matches: i64,
    pub image_width: DimensionSummary,
    pub image_height: DimensionSummary,
    /// Distinct property keys, sorted.
    pub properties: Vec<String>,
    pub images_by_dir: Option<BTreeMap<String, i64>>,
    pub objects_by_image: Option<BTreeMap<String, i64>>,
}

impl DbSummary {
    /// `(key, value)` pairs in output order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        if self.image_height != DimensionSummary::None {
            out.push(("image height".into(), self.image_height.to_string()));
        }
        if self.image_width != DimensionSummary::None {
            out.push(("image width".into(), self.image_width.to_string()));
        }
        out.push(("matches".into(), self.matches.to_string()));
        out.push(("num images".into(), self.num_images.to_string()));
        out.push(("num masks".into(), self.num_masks.to_string()));
        out.push(("num objects".into(), self.num_objects.to_string()));
        let props: Vec<String> = self.properties.iter().map(|p| format!("'{p}'")).collect();
        out.push(("properties".into(), format!("[{}]", props.join(", "))));
        if let Some(dirs) = &self.images_by_dir {
            for (dir, n) in dirs {
                out.push((format!("images in dir '{dir}'"), n.to_string()));
            }
        }
        if let Some(images) = &self.objects_by_image {
            for (image, n) in images {
                out.push((format!("objects in image '{image}'"), n.to_string()));
            }
        }
        out
    }
}

impl fmt::Display for DbSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.entries() {
            writeln!(f, "{k}: {v}")?;
        }
        Ok(())
    }
}

fn dimension(db: &AnnotationDb, column: &str) -> Result<DimensionSummary> {
    let (n, value): (i64, Option<i64>) = db.conn().query_row(
        &format!("SELECT COUNT(DISTINCT {column}), MIN({column}) FROM images"),
        [],
        |r| Ok((r.get(0)?, r.get(1)?)),
    )?;
    Ok(match n {
        0 => DimensionSummary::None,
        1 => DimensionSummary::Single(value.unwrap_or(0) as u32),
        n => DimensionSummary::Many(n as usize),
    })
}

fn scalar(db: &AnnotationDb, sql: &str) -> Result<i64> {
    Ok(db.conn().query_row(sql, [], |r| r.get(0))?)
}

/// Collects the summary printed by `printInfo`.
pub fn summarize(db: &AnnotationDb, images_by_dir: bool, objects_by_image: bool) -> Result<DbSummary> {
    // Walks the key index one distinct value at a time instead of scanning
    // every property row.
    let mut stmt = db.conn().prepare(
        "WITH RECURSIVE k(key) AS (
             SELECT MIN(key) FROM properties
             UNION ALL
             SELECT (SELECT MIN(key) FROM properties WHERE key > k.key) FROM k
             WHERE k.key IS NOT NULL)
         SELECT key FROM k WHERE key IS NOT NULL",
    )?;
    let properties = stmt
        .query_map([], |r| r.get::<_, String>(0))?
        .collect::<rusqlite::Result<Vec<_>>>()?;

    let images_by_dir = if images_by_dir {
        let mut dirs = BTreeMap::new();
        for img in db.images(None)? {
            let dir = Path::new(&img.imagefile)
                .parent()
                .map(|p| p.to_string_lossy().into_owned())
                .unwrap_or_default();
            *dirs.entry(dir).or_insert(0) += 1;
        }
        Some(dirs)
    } else {
        None
    };
    let objects_by_image = if objects_by_image {
        let mut stmt = db.conn().prepare(
            "SELECT images.imagefile, COUNT(objects.objectid) FROM images
             LEFT JOIN objects ON objects.imagefile = images.imagefile
             GROUP BY images.imagefile",
        )?;
        let rows = stmt
            .query_map([], |r| Ok((r.get::<_, String>(0)?, r.get::<_, i64>(1)?)))?
            .collect::<rusqlite::Result<BTreeMap<_, _>>>()?;
        Some(rows)
    } else {
        None
    };

    Ok(DbSummary {
        num_images: scalar(db, "SELECT COUNT(*) FROM images")?,
        num_objects: scalar(db, "SELECT COUNT(*) FROM objects")?,
        num_masks: scalar(db, "SELECT COUNT(*) FROM images WHERE maskfile IS NOT NULL")?,
        matches: scalar(db, "SELECT COUNT(DISTINCT match) FROM matches")?,
        image_width: dimension(db, "width")?,
        image_height: dimension(db, "height")?,
        properties,
        images_by_dir,
        objects_by_image,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramBin {
    pub low: f64,
    pub high: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub bins: Vec<HistogramBin>,
    /// Values that were null or not numeric.
    pub unparseable: usize,
}

/// Default bin count: `ceil(log2 n) + 1`.
pub fn sturges_bins(n: usize) -> usize {
    if n <= 1 {
        1
    } else {
        (n as f64).log2().ceil() as usize + 1
    }
}

/// Equal-width bins over `[min, max]`. Every bin is half-open except the
/// last, which also holds `max`. A constant input gets one unit-wide bin
/// centered on the value.
pub fn histogram(values: &[f64], bins: Option<usize>) -> Vec<HistogramBin> {
    if values.is_empty() {
        return Vec::new();
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (low, high) = if min == max {
        (min - 0.5, max + 0.5)
    } else {
        (min, max)
    };
    let n = bins.unwrap_or_else(|| sturges_bins(values.len())).max(1);
    let width = (high - low) / n as f64;
    let mut out: Vec<HistogramBin> = (0..n)
        .map(|i| HistogramBin {
            low: low + i as f64 * width,
            high: if i + 1 == n { high } else { low + (i + 1) as f64 * width },
            count: 0,
        })
        .collect();
    for v in values {
        let idx = (((v - low) / width).floor() as usize).min(n - 1);
        out[idx].count += 1;
    }
    out
}

/// Runs a single-column query and returns its numeric values plus the
/// number of rows that could not be read as numbers.
pub fn query_values(db: &AnnotationDb, sql: &str) -> Result<(Vec<f64>, usize)> {
    let mut stmt = db.conn().prepare(sql).map_err(|e| Error::predicate(sql, e))?;
    if stmt.column_count() != 1 {
        return Err(Error::InvalidArgument(format!(
            "query must return exactly one column, got {}",
            stmt.column_count()
        )));
    }
    let mut values = Vec::new();
    let mut bad = 0;
    let mut rows = stmt.query([]).map_err(|e| Error::predicate(sql, e))?;
    while let Some(row) = rows.next()? {
        let parsed = match row.get_ref(0)? {
            ValueRef::Integer(i) => Some(i as f64),
            ValueRef::Real(f) => Some(f),
            ValueRef::Text(t) => std::str::from_utf8(t)
                .ok()
                .and_then(|s| s.trim().parse::<f64>().ok()),
            _ => None,
        };
        match parsed {
            Some(v) if v.is_finite() => values.push(v),
            _ => bad += 1,
        }
    }
    Ok((values, bad))
}

/// Histogram of a query's values, optionally written as SVG and CSV.
pub fn plot_objects_histogram(
    db: &AnnotationDb,
    sql: &str,
    bins: Option<usize>,
    out_svg: Option<&Path>,
    out_csv: Option<&Path>,
) -> Result<Histogram> {
    let (values, unparseable) = query_values(db, sql)?;
    if unparseable > 0 {
        log::warn!("{unparseable} values are not numbers and were left out");
    }
    if values.is_empty() {
        log::warn!("query returned no numeric values");
    }
    let hist = Histogram {
        bins: histogram(&values, bins),
        unparseable,
    };
    if let Some(path) = out_csv {
        write_csv(&hist, path)?;
    }
    if let Some(path) = out_svg {
        fs::write(path, render_svg(&hist, sql)).map_err(|e| Error::io(path, e))?;
    }
    Ok(hist)
}

fn write_csv(hist: &Histogram, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidArgument(format!("{other:?}")),
    })?;
    w.write_record(["bin_low", "bin_high", "count"])?;
    for b in &hist.bins {
        w.write_record([b.low.to_string(), b.high.to_string(), b.count.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// One line per bin with a proportional bar of `#`.
pub fn render_text(hist: &Histogram) -> String {
    let max = hist.bins.iter().map(|b| b.count).max().unwrap_or(0).max(1);
    let mut out = String::new();
    for b in &hist.bins {
        let bar = "#".repeat((b.count * 40).div_ceil(max));
        let _ = writeln!(out, "[{:>10.4}, {:>10.4}) {:>7} {}", b.low, b.high, b.count, bar);
    }
    out
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Standalone SVG 1.1 bar chart.
pub fn render_svg(hist: &Histogram, title: &str) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const MARGIN: f64 = 40.0;
    let max = hist.bins.iter().map(|b| b.count).max().unwrap_or(0).max(1) as f64;
    let n = hist.bins.len().max(1) as f64;
    let bar_w = (W - 2.0 * MARGIN) / n;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="20" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#,
        W / 2.0,
        escape_xml(title)
    );
    for (i, b) in hist.bins.iter().enumerate() {
        let h = (H - 2.0 * MARGIN) * b.count as f64 / max;
        let _ = writeln!(
            svg,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="steelblue" stroke="white"><title>[{}, {}): {}</title></rect>"#,
            MARGIN + i as f64 * bar_w,
            H - MARGIN - h,
            bar_w,
            h,
            b.low,
            b.high,
            b.count
        );
    }
    if let (Some(first), Some(last)) = (hist.bins.first(), hist.bins.last()) {
        let _ = writeln!(
            svg,
            r#"<text x="{MARGIN}" y="{}" font-family="sans-serif" font-size="10">{}</text>"#,
            H - MARGIN + 14.0,
            first.low
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end" font-family="sans-serif" font-size="10">{}</text>"#,
            W - MARGIN,
            H - MARGIN + 14.0,
            last.high
        );
    }
    svg.push_str("</svg>\n");
    svg
}
