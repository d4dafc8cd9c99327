//! The annotation database: schema, session lifecycle, integrity checks and
//! the filtered iteration API.
//!
//! Every session works on an in-memory SQLite connection. Opening a file
//! copies its pages into memory, and committing copies them back out to the
//! write path. The input file is therefore never written to, which is what
//! makes read-only sessions byte-preserving.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::{debug, info};
use rusqlite::backup::{Backup, StepResult};
use rusqlite::config::DbConfig;
use rusqlite::types::Value;
use rusqlite::{params, Connection, OpenFlags, OptionalExtension, Row};

use crate::error::{Error, Result};
use crate::geometry::BBox;

/// DDL for the five annotation tables. Kept verbatim in the repository docs.
pub const SCHEMA_SQL: &str = "\
CREATE TABLE IF NOT EXISTS images (
    imagefile TEXT PRIMARY KEY,
    width INTEGER,
    height INTEGER,
    maskfile TEXT,
    name TEXT,
    score REAL
);
CREATE TABLE IF NOT EXISTS objects (
    objectid INTEGER PRIMARY KEY,
    imagefile TEXT NOT NULL,
    x REAL,
    y REAL,
    width REAL,
    height REAL,
    name TEXT,
    score REAL
);
CREATE TABLE IF NOT EXISTS properties (
    id INTEGER PRIMARY KEY,
    objectid INTEGER NOT NULL,
    key TEXT NOT NULL,
    value TEXT
);
CREATE TABLE IF NOT EXISTS polygons (
    id INTEGER PRIMARY KEY,
    objectid INTEGER NOT NULL,
    x REAL,
    y REAL,
    name TEXT
);
CREATE TABLE IF NOT EXISTS matches (
    id INTEGER PRIMARY KEY,
    objectid INTEGER NOT NULL,
    match INTEGER NOT NULL
);
CREATE INDEX IF NOT EXISTS objects_imagefile ON objects (imagefile);
CREATE INDEX IF NOT EXISTS properties_objectid ON properties (objectid);
CREATE INDEX IF NOT EXISTS properties_key ON properties (key);
CREATE INDEX IF NOT EXISTS polygons_objectid ON polygons (objectid);
CREATE INDEX IF NOT EXISTS matches_objectid ON matches (objectid);
CREATE INDEX IF NOT EXISTS matches_match ON matches (match);
";

pub const TABLES: [&str; 5] = ["images", "objects", "properties", "polygons", "matches"];

const REQUIRED_COLUMNS: [(&str, &[&str]); 5] = [
    (
        "images",
        &["imagefile", "width", "height", "maskfile", "name", "score"],
    ),
    (
        "objects",
        &[
            "objectid", "imagefile", "x", "y", "width", "height", "name", "score",
        ],
    ),
    ("properties", &["id", "objectid", "key", "value"]),
    ("polygons", &["id", "objectid", "x", "y", "name"]),
    ("matches", &["id", "objectid", "match"]),
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImageRecord {
    pub imagefile: String,
    pub width: Option<u32>,
    pub height: Option<u32>,
    pub maskfile: Option<String>,
    pub name: Option<String>,
    pub score: Option<f64>,
}

impl ImageRecord {
    pub fn new(imagefile: impl Into<String>) -> Self {
        Self {
            imagefile: imagefile.into(),
            ..Default::default()
        }
    }

    pub fn with_size(mut self, width: u32, height: u32) -> Self {
        self.width = Some(width);
        self.height = Some(height);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectRecord {
    pub objectid: i64,
    pub imagefile: String,
    pub bbox: Option<BBox>,
    pub name: Option<String>,
    pub score: Option<f64>,
}

/// An object to insert; the store allocates the objectid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NewObject {
    pub imagefile: String,
    pub bbox: Option<BBox>,
    pub name: Option<String>,
    pub score: Option<f64>,
}

impl NewObject {
    pub fn new(imagefile: impl Into<String>) -> Self {
        Self {
            imagefile: imagefile.into(),
            ..Default::default()
        }
    }

    pub fn with_box(mut self, bbox: BBox) -> Self {
        self.bbox = Some(bbox);
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = Some(score);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyRecord {
    pub id: i64,
    pub objectid: i64,
    pub key: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolygonPoint {
    pub id: i64,
    pub objectid: i64,
    pub x: f64,
    pub y: f64,
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchRecord {
    pub id: i64,
    pub objectid: i64,
    pub r#match: i64,
}

/// One object joined with its image and every row attached to it.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectEntry {
    pub object: ObjectRecord,
    pub image: ImageRecord,
    pub properties: Vec<PropertyRecord>,
    /// Points in ascending id order.
    pub polygons: Vec<PolygonPoint>,
    /// Match values of the groups this object belongs to, ascending.
    pub matches: Vec<i64>,
}

impl ObjectEntry {
    pub fn property(&self, key: &str) -> Option<&str> {
        self.properties
            .iter()
            .find(|p| p.key == key)
            .map(|p| p.value.as_str())
    }
}

/// How a session maps onto files, fixed by which of the in/out paths exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionMode {
    /// In-memory database discarded at the end.
    Ephemeral,
    /// Loaded from the input; never committed.
    ReadOnly,
    /// Fresh schema; commits go to the output.
    Create,
    /// Loaded from the input; commits go to the output.
    CopyOnWrite,
}

impl SessionMode {
    pub fn from_paths(in_path: bool, out_path: bool) -> Self {
        match (in_path, out_path) {
            (false, false) => SessionMode::Ephemeral,
            (true, false) => SessionMode::ReadOnly,
            (false, true) => SessionMode::Create,
            (true, true) => SessionMode::CopyOnWrite,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptyImagefile,
    NonPositiveImageSize { imagefile: String },
    OrphanObject { objectid: i64, imagefile: String },
    OrphanProperty { id: i64, objectid: i64 },
    OrphanPolygon { id: i64, objectid: i64 },
    OrphanMatch { id: i64, objectid: i64 },
    NegativeBox { objectid: i64 },
    PartialBox { objectid: i64 },
}

/// Raw contents of all five tables, rows sorted by their primary key.
pub type TableDump = Vec<(String, Vec<Vec<Value>>)>;

pub struct AnnotationDb {
    conn: Connection,
    read_path: Option<PathBuf>,
    write_path: Option<PathBuf>,
    mode: SessionMode,
    clean_changes: u64,
    backed_up: bool,
}

impl std::fmt::Debug for AnnotationDb {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AnnotationDb")
            .field("read_path", &self.read_path)
            .field("write_path", &self.write_path)
            .field("mode", &self.mode)
            .finish()
    }
}

/// Detached copy of a session's contents, see [`AnnotationDb::snapshot`].
pub struct Snapshot(Connection);

/// Backup file name used when a commit would overwrite an existing file.
pub fn backup_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".backup");
    PathBuf::from(s)
}

fn memory_connection() -> Result<Connection> {
    let conn = Connection::open_in_memory()?;
    // Accept "car"-style string literals as written on typical command lines.
    conn.set_db_config(DbConfig::SQLITE_DBCONFIG_DQS_DML, true)?;
    Ok(conn)
}

fn copy_pages(src: &Connection, dst: &mut Connection) -> Result<()> {
    let backup = Backup::new(src, dst)?;
    loop {
        match backup.step(-1)? {
            StepResult::Done => return Ok(()),
            StepResult::More => continue,
            StepResult::Busy | StepResult::Locked => {
                return Err(Error::Sqlite(rusqlite::Error::SqliteFailure(
                    rusqlite::ffi::Error::new(rusqlite::ffi::SQLITE_BUSY),
                    Some("database is busy".into()),
                )))
            }
            _ => continue,
        }
    }
}

fn check_schema(conn: &Connection, path: &Path) -> Result<()> {
    let schema_err = |reason: String| Error::Schema {
        path: path.to_path_buf(),
        reason,
    };
    for (table, columns) in REQUIRED_COLUMNS {
        let mut stmt = conn
            .prepare(&format!("PRAGMA table_info({table})"))
            .map_err(|e| schema_err(e.to_string()))?;
        let present: Vec<String> = stmt
            .query_map([], |row| row.get::<_, String>(1))
            .and_then(|rows| rows.collect())
            .map_err(|e| schema_err(e.to_string()))?;
        if present.is_empty() {
            return Err(schema_err(format!("missing table `{table}`")));
        }
        for column in columns {
            if !present.iter().any(|c| c == column) {
                return Err(schema_err(format!("table `{table}` lacks column `{column}`")));
            }
        }
    }
    Ok(())
}

fn read_image(row: &Row<'_>) -> rusqlite::Result<ImageRecord> {
    Ok(ImageRecord {
        imagefile: row.get(0)?,
        width: row.get(1)?,
        height: row.get(2)?,
        maskfile: row.get(3)?,
        name: row.get(4)?,
        score: row.get(5)?,
    })
}

fn read_object(row: &Row<'_>) -> rusqlite::Result<ObjectRecord> {
    let coords: [Option<f64>; 4] = [row.get(2)?, row.get(3)?, row.get(4)?, row.get(5)?];
    let bbox = match coords {
        [Some(x), Some(y), Some(w), Some(h)] => Some(BBox::new(x, y, w, h)),
        _ => None,
    };
    Ok(ObjectRecord {
        objectid: row.get(0)?,
        imagefile: row.get(1)?,
        bbox,
        name: row.get(6)?,
        score: row.get(7)?,
    })
}

const IMAGE_COLUMNS: &str = "imagefile, width, height, maskfile, name, score";
const OBJECT_COLUMNS: &str = "objectid, imagefile, x, y, width, height, name, score";

impl AnnotationDb {
    /// Opens a session following the in/out path rules:
    /// neither path is ephemeral, only `in_path` is read-only, only
    /// `out_path` creates a fresh database, and both copy the input and
    /// commit to the output.
    pub fn open(in_path: Option<&Path>, out_path: Option<&Path>) -> Result<Self> {
        let mode = SessionMode::from_paths(in_path.is_some(), out_path.is_some());
        let mut conn = memory_connection()?;
        match in_path {
            Some(path) => {
                if !path.is_file() {
                    return Err(Error::NotFound(format!("database {}", path.display())));
                }
                let src = Connection::open_with_flags(
                    path,
                    OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
                )?;
                check_schema(&src, path)?;
                copy_pages(&src, &mut conn)?;
            }
            None => conn.execute_batch(SCHEMA_SQL)?,
        }
        if let Some(out) = out_path {
            let dir = match out.parent() {
                Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
                _ => PathBuf::from("."),
            };
            let meta = fs::metadata(&dir).map_err(|e| Error::io(&dir, e))?;
            if !meta.is_dir() || meta.permissions().readonly() {
                return Err(Error::InvalidArgument(format!(
                    "output directory {} is not writable",
                    dir.display()
                )));
            }
        }
        match mode {
            SessionMode::Ephemeral => info!("will create a temporary database in memory."),
            SessionMode::ReadOnly => info!(
                "will load from {}, will not commit.",
                in_path.unwrap().display()
            ),
            SessionMode::Create => info!("will create database at {}", out_path.unwrap().display()),
            SessionMode::CopyOnWrite => info!(
                "will copy database from {} to {}.",
                in_path.unwrap().display(),
                out_path.unwrap().display()
            ),
        }
        let clean_changes = conn.total_changes();
        Ok(Self {
            conn,
            read_path: in_path.map(Path::to_path_buf),
            write_path: out_path.map(Path::to_path_buf),
            mode,
            clean_changes,
            backed_up: false,
        })
    }

    /// An empty ephemeral database.
    pub fn in_memory() -> Result<Self> {
        Self::open(None, None)
    }

    /// Read-only session over an existing database file.
    pub fn open_read_only(path: &Path) -> Result<Self> {
        Self::open(Some(path), None)
    }

    pub fn mode(&self) -> SessionMode {
        self.mode
    }

    pub fn read_path(&self) -> Option<&Path> {
        self.read_path.as_deref()
    }

    pub fn write_path(&self) -> Option<&Path> {
        self.write_path.as_deref()
    }

    pub fn is_read_only(&self) -> bool {
        self.mode == SessionMode::ReadOnly
    }

    pub fn is_dirty(&self) -> bool {
        self.conn.total_changes() != self.clean_changes
    }

    pub fn conn(&self) -> &Connection {
        &self.conn
    }

    /// Writes pending changes to the write path. Ephemeral sessions keep
    /// everything in memory. The first commit of a session moves an
    /// already existing output file aside to `<out>.backup`.
    pub fn commit(&mut self) -> Result<()> {
        match self.mode {
            SessionMode::ReadOnly => return Err(Error::ReadOnly),
            SessionMode::Ephemeral => {}
            SessionMode::Create | SessionMode::CopyOnWrite => {
                let out = self.write_path.clone().expect("write path in writable mode");
                let tmp = {
                    let mut s = out.as_os_str().to_owned();
                    s.push(format!(".tmp{}", std::process::id()));
                    PathBuf::from(s)
                };
                self.write_to(&tmp)?;
                if !self.backed_up && out.exists() {
                    let backup = backup_path(&out);
                    fs::rename(&out, &backup).map_err(|e| Error::io(&out, e))?;
                    info!("backed up {} to {}", out.display(), backup.display());
                }
                self.backed_up = true;
                fs::rename(&tmp, &out).map_err(|e| Error::io(&out, e))?;
            }
        }
        self.clean_changes = self.conn.total_changes();
        info!("Committed.");
        Ok(())
    }

    /// Writes the current contents to `path` regardless of session mode,
    /// replacing any file there.
    pub fn write_to(&self, path: &Path) -> Result<()> {
        if path.exists() {
            fs::remove_file(path).map_err(|e| Error::io(path, e))?;
        }
        let mut dst = Connection::open(path)?;
        copy_pages(&self.conn, &mut dst)?;
        Ok(())
    }

    /// Copies the current contents into a detached in-memory snapshot.
    pub fn snapshot(&self) -> Result<Snapshot> {
        let mut snap = memory_connection()?;
        copy_pages(&self.conn, &mut snap)?;
        Ok(Snapshot(snap))
    }

    /// Replaces the current contents with a snapshot taken earlier.
    pub fn restore(&mut self, snapshot: &Snapshot) -> Result<()> {
        copy_pages(&snapshot.0, &mut self.conn)?;
        Ok(())
    }

    /// Runs `f` inside a savepoint: either all of its changes apply or none.
    pub fn atomic<T>(&self, f: impl FnOnce(&Self) -> Result<T>) -> Result<T> {
        self.conn.execute_batch("SAVEPOINT op")?;
        match f(self) {
            Ok(v) => {
                self.conn.execute_batch("RELEASE op")?;
                Ok(v)
            }
            Err(e) => {
                self.conn.execute_batch("ROLLBACK TO op; RELEASE op")?;
                Err(e)
            }
        }
    }

    pub fn validate_integrity(&self) -> Result<Vec<Violation>> {
        let c = &self.conn;
        let mut out = Vec::new();
        let empty: i64 = c.query_row(
            "SELECT COUNT(*) FROM images WHERE imagefile IS NULL OR imagefile = ''",
            [],
            |r| r.get(0),
        )?;
        out.extend((0..empty).map(|_| Violation::EmptyImagefile));

        let mut stmt = c.prepare(
            "SELECT imagefile FROM images WHERE width <= 0 OR height <= 0 ORDER BY imagefile",
        )?;
        for imagefile in stmt.query_map([], |r| r.get::<_, String>(0))? {
            out.push(Violation::NonPositiveImageSize {
                imagefile: imagefile?,
            });
        }

        let mut stmt = c.prepare(
            "SELECT objectid, imagefile FROM objects
             WHERE imagefile NOT IN (SELECT imagefile FROM images) ORDER BY objectid",
        )?;
        for row in stmt.query_map([], |r| Ok((r.get(0)?, r.get(1)?)))? {
            let (objectid, imagefile) = row?;
            out.push(Violation::OrphanObject {
                objectid,
                imagefile,
            });
        }

        for (table, make) in [
            (
                "properties",
                (|id, objectid| Violation::OrphanProperty { id, objectid }) as fn(i64, i64) -> _,
            ),
            ("polygons", |id, objectid| Violation::OrphanPolygon {
                id,
                objectid,
            }),
            ("matches", |id, objectid| Violation::OrphanMatch {
                id,
                objectid,
            }),
        ] {
            let mut stmt = c.prepare(&format!(
                "SELECT id, objectid FROM {table}
                 WHERE objectid NOT IN (SELECT objectid FROM objects) ORDER BY id"
            ))?;
            for row in stmt.query_map([], |r| Ok((r.get(0)?, r.get(1)?)))? {
                let (id, objectid) = row?;
                out.push(make(id, objectid));
            }
        }

        let mut stmt = c.prepare(
            "SELECT objectid,
                    (x IS NULL) + (y IS NULL) + (width IS NULL) + (height IS NULL),
                    width < 0 OR height < 0
             FROM objects ORDER BY objectid",
        )?;
        for row in stmt.query_map([], |r| {
            Ok((r.get::<_, i64>(0)?, r.get::<_, i64>(1)?, r.get::<_, Option<bool>>(2)?))
        })? {
            let (objectid, nulls, negative) = row?;
            if nulls != 0 && nulls != 4 {
                out.push(Violation::PartialBox { objectid });
            } else if negative == Some(true) {
                out.push(Violation::NegativeBox { objectid });
            }
        }
        Ok(out)
    }

    /// Images satisfying `where_images` (an SQL boolean expression over the
    /// images columns), ordered by imagefile.
    pub fn images(&self, where_images: Option<&str>) -> Result<Vec<ImageRecord>> {
        let sql = format!(
            "SELECT {IMAGE_COLUMNS} FROM images WHERE ({}) ORDER BY imagefile",
            where_images.unwrap_or("1")
        );
        let pred = where_images.unwrap_or("1");
        let mut stmt = self
            .conn
            .prepare(&sql)
            .map_err(|e| Error::predicate(pred, e))?;
        let rows = stmt
            .query_map([], read_image)
            .and_then(|rows| rows.collect::<rusqlite::Result<Vec<_>>>())
            .map_err(|e| Error::predicate(pred, e))?;
        Ok(rows)
    }

    pub fn image(&self, imagefile: &str) -> Result<Option<ImageRecord>> {
        Ok(self
            .conn
            .query_row(
                &format!("SELECT {IMAGE_COLUMNS} FROM images WHERE imagefile = ?1"),
                [imagefile],
                read_image,
            )
            .optional()?)
    }

    /// Bare object rows satisfying `where_objects`, ordered by objectid.
    pub fn object_records(&self, where_objects: Option<&str>) -> Result<Vec<ObjectRecord>> {
        let pred = where_objects.unwrap_or("1");
        let sql = format!("SELECT {OBJECT_COLUMNS} FROM objects WHERE ({pred}) ORDER BY objectid");
        let mut stmt = self
            .conn
            .prepare(&sql)
            .map_err(|e| Error::predicate(pred, e))?;
        let rows = stmt
            .query_map([], read_object)
            .and_then(|rows| rows.collect::<rusqlite::Result<Vec<_>>>())
            .map_err(|e| Error::predicate(pred, e))?;
        Ok(rows)
    }

    pub fn object(&self, objectid: i64) -> Result<Option<ObjectRecord>> {
        Ok(self
            .conn
            .query_row(
                &format!("SELECT {OBJECT_COLUMNS} FROM objects WHERE objectid = ?1"),
                [objectid],
                read_object,
            )
            .optional()?)
    }

    /// Objects satisfying `where_objects` joined with their image, properties,
    /// polygon points and match values, ordered by objectid.
    pub fn objects(&self, where_objects: Option<&str>) -> Result<Vec<ObjectEntry>> {
        let records = self.object_records(where_objects)?;
        if records.is_empty() {
            return Ok(Vec::new());
        }
        let pred = where_objects.unwrap_or("1");
        let subquery = format!("SELECT objectid FROM objects WHERE ({pred})");

        let mut properties: HashMap<i64, Vec<PropertyRecord>> = HashMap::new();
        let mut stmt = self.conn.prepare(&format!(
            "SELECT id, objectid, key, value FROM properties
             WHERE objectid IN ({subquery}) ORDER BY id"
        ))?;
        for row in stmt.query_map([], |r| {
            Ok(PropertyRecord {
                id: r.get(0)?,
                objectid: r.get(1)?,
                key: r.get(2)?,
                value: r.get::<_, Option<String>>(3)?.unwrap_or_default(),
            })
        })? {
            let row = row?;
            properties.entry(row.objectid).or_default().push(row);
        }

        let mut polygons: HashMap<i64, Vec<PolygonPoint>> = HashMap::new();
        let mut stmt = self.conn.prepare(&format!(
            "SELECT id, objectid, x, y, name FROM polygons
             WHERE objectid IN ({subquery}) ORDER BY id"
        ))?;
        for row in stmt.query_map([], |r| {
            Ok(PolygonPoint {
                id: r.get(0)?,
                objectid: r.get(1)?,
                x: r.get(2)?,
                y: r.get(3)?,
                name: r.get(4)?,
            })
        })? {
            let row = row?;
            polygons.entry(row.objectid).or_default().push(row);
        }

        let mut matches: HashMap<i64, Vec<i64>> = HashMap::new();
        let mut stmt = self.conn.prepare(&format!(
            "SELECT objectid, match FROM matches
             WHERE objectid IN ({subquery}) ORDER BY match, id"
        ))?;
        for row in stmt.query_map([], |r| Ok((r.get::<_, i64>(0)?, r.get::<_, i64>(1)?)))? {
            let (objectid, m) = row?;
            matches.entry(objectid).or_default().push(m);
        }

        let mut images: HashMap<String, ImageRecord> = HashMap::new();
        let mut stmt = self.conn.prepare(&format!(
            "SELECT {IMAGE_COLUMNS} FROM images
             WHERE imagefile IN (SELECT imagefile FROM objects WHERE ({pred}))"
        ))?;
        for row in stmt.query_map([], read_image)? {
            let row = row?;
            images.insert(row.imagefile.clone(), row);
        }

        Ok(records
            .into_iter()
            .map(|object| {
                let id = object.objectid;
                let image = images
                    .get(&object.imagefile)
                    .cloned()
                    .unwrap_or_else(|| ImageRecord::new(object.imagefile.clone()));
                ObjectEntry {
                    image,
                    properties: properties.remove(&id).unwrap_or_default(),
                    polygons: polygons.remove(&id).unwrap_or_default(),
                    matches: matches.remove(&id).unwrap_or_default(),
                    object,
                }
            })
            .collect())
    }

    pub fn insert_image(&self, image: &ImageRecord) -> Result<()> {
        if image.imagefile.is_empty() {
            return Err(Error::InvalidArgument("imagefile must be non-empty".into()));
        }
        if image.width == Some(0) || image.height == Some(0) {
            return Err(Error::InvalidArgument(format!(
                "image {} has zero size",
                image.imagefile
            )));
        }
        self.conn.execute(
            "INSERT INTO images (imagefile, width, height, maskfile, name, score)
             VALUES (?1, ?2, ?3, ?4, ?5, ?6)",
            params![
                image.imagefile,
                image.width,
                image.height,
                image.maskfile,
                image.name,
                image.score
            ],
        )?;
        Ok(())
    }

    /// Inserts an object and returns its freshly allocated objectid.
    pub fn insert_object(&self, object: &NewObject) -> Result<i64> {
        let b = object.bbox;
        if let Some(b) = b {
            if b.width < 0.0 || b.height < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "negative box size {}x{}",
                    b.width, b.height
                )));
            }
        }
        self.conn.execute(
            "INSERT INTO objects (imagefile, x, y, width, height, name, score)
             VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7)",
            params![
                object.imagefile,
                b.map(|b| b.x),
                b.map(|b| b.y),
                b.map(|b| b.width),
                b.map(|b| b.height),
                object.name,
                object.score
            ],
        )?;
        Ok(self.conn.last_insert_rowid())
    }

    pub fn set_box(&self, objectid: i64, bbox: Option<BBox>) -> Result<()> {
        self.conn.execute(
            "UPDATE objects SET x = ?2, y = ?3, width = ?4, height = ?5 WHERE objectid = ?1",
            params![
                objectid,
                bbox.map(|b| b.x),
                bbox.map(|b| b.y),
                bbox.map(|b| b.width),
                bbox.map(|b| b.height)
            ],
        )?;
        Ok(())
    }

    /// Renames an object, failing with `NotFound` for an unknown id.
    pub fn set_object_name(&self, objectid: i64, name: Option<&str>) -> Result<()> {
        let n = self.conn.execute(
            "UPDATE objects SET name = ?2 WHERE objectid = ?1",
            params![objectid, name],
        )?;
        if n == 0 {
            return Err(Error::NotFound(format!("object {objectid}")));
        }
        Ok(())
    }

    pub fn add_property(&self, objectid: i64, key: &str, value: &str) -> Result<i64> {
        if key.is_empty() {
            return Err(Error::InvalidArgument("property key must be non-empty".into()));
        }
        self.conn.execute(
            "INSERT INTO properties (objectid, key, value) VALUES (?1, ?2, ?3)",
            params![objectid, key, value],
        )?;
        Ok(self.conn.last_insert_rowid())
    }

    pub fn add_polygon_point(
        &self,
        objectid: i64,
        x: f64,
        y: f64,
        name: Option<&str>,
    ) -> Result<i64> {
        self.conn.execute(
            "INSERT INTO polygons (objectid, x, y, name) VALUES (?1, ?2, ?3, ?4)",
            params![objectid, x, y, name],
        )?;
        Ok(self.conn.last_insert_rowid())
    }

    pub fn add_match(&self, objectid: i64, match_value: i64) -> Result<i64> {
        self.conn.execute(
            "INSERT INTO matches (objectid, match) VALUES (?1, ?2)",
            params![objectid, match_value],
        )?;
        Ok(self.conn.last_insert_rowid())
    }

    /// Next unused match value.
    pub fn next_match_value(&self) -> Result<i64> {
        Ok(self
            .conn
            .query_row("SELECT COALESCE(MAX(match), 0) + 1 FROM matches", [], |r| {
                r.get(0)
            })?)
    }

    /// Objectids belonging to one match group, ascending.
    pub fn match_members(&self, match_value: i64) -> Result<Vec<i64>> {
        let mut stmt = self
            .conn
            .prepare("SELECT objectid FROM matches WHERE match = ?1 ORDER BY objectid")?;
        let rows = stmt
            .query_map([match_value], |r| r.get(0))?
            .collect::<rusqlite::Result<Vec<i64>>>()?;
        Ok(rows)
    }

    /// Removes every row of a match group; returns how many were removed.
    pub fn delete_match(&self, match_value: i64) -> Result<usize> {
        Ok(self
            .conn
            .execute("DELETE FROM matches WHERE match = ?1", [match_value])?)
    }

    /// Deletes objects satisfying the predicate along with their properties,
    /// polygons and match rows. Atomic: a failing predicate changes nothing.
    pub fn delete_objects_where(&self, where_objects: &str) -> Result<usize> {
        self.atomic(|db| {
            let n = db
                .conn
                .execute(&format!("DELETE FROM objects WHERE ({where_objects})"), [])
                .map_err(|e| Error::predicate(where_objects, e))?;
            db.purge_orphans()?;
            Ok(n)
        })
    }

    pub fn delete_objects(&self, objectids: &[i64]) -> Result<usize> {
        if objectids.is_empty() {
            return Ok(0);
        }
        self.atomic(|db| {
            let mut stmt = db.conn.prepare("DELETE FROM objects WHERE objectid = ?1")?;
            let mut n = 0;
            for id in objectids {
                n += stmt.execute([id])?;
            }
            db.purge_orphans()?;
            Ok(n)
        })
    }

    /// Deletes images satisfying the predicate together with their objects.
    pub fn delete_images_where(&self, where_images: &str) -> Result<usize> {
        self.atomic(|db| {
            let n = db
                .conn
                .execute(&format!("DELETE FROM images WHERE ({where_images})"), [])
                .map_err(|e| Error::predicate(where_images, e))?;
            db.purge_orphans()?;
            Ok(n)
        })
    }

    /// Removes objects whose image is gone and rows whose object is gone.
    pub fn purge_orphans(&self) -> Result<()> {
        self.conn.execute_batch(
            "DELETE FROM objects WHERE imagefile NOT IN (SELECT imagefile FROM images);
             DELETE FROM properties WHERE objectid NOT IN (SELECT objectid FROM objects);
             DELETE FROM polygons WHERE objectid NOT IN (SELECT objectid FROM objects);
             DELETE FROM matches WHERE objectid NOT IN (SELECT objectid FROM objects);",
        )?;
        Ok(())
    }

    pub fn count(&self, table: &str) -> Result<i64> {
        if !TABLES.contains(&table) {
            return Err(Error::InvalidArgument(format!("unknown table {table}")));
        }
        Ok(self
            .conn
            .query_row(&format!("SELECT COUNT(*) FROM {table}"), [], |r| r.get(0))?)
    }

    /// Every row of every table, for content comparisons.
    pub fn dump_tables(&self) -> Result<TableDump> {
        let keys = [
            ("images", "imagefile"),
            ("objects", "objectid"),
            ("properties", "id"),
            ("polygons", "id"),
            ("matches", "id"),
        ];
        let mut out = Vec::new();
        for (table, key) in keys {
            let mut stmt = self
                .conn
                .prepare(&format!("SELECT * FROM {table} ORDER BY {key}"))?;
            let ncols = stmt.column_count();
            let rows = stmt
                .query_map([], |r| {
                    (0..ncols).map(|i| r.get::<_, Value>(i)).collect()
                })?
                .collect::<rusqlite::Result<Vec<Vec<Value>>>>()?;
            out.push((table.to_string(), rows));
        }
        Ok(out)
    }
}

impl Drop for AnnotationDb {
    fn drop(&mut self) {
        if self.is_dirty() && self.mode != SessionMode::Ephemeral {
            debug!("closing {:?} session with uncommitted changes", self.mode);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> AnnotationDb {
        let db = AnnotationDb::in_memory().unwrap();
        for (f, name) in [("b.jpg", "cat"), ("a.jpg", "cat"), ("c.jpg", "dog")] {
            let mut img = ImageRecord::new(f).with_size(100, 50);
            img.name = Some(name.into());
            db.insert_image(&img).unwrap();
        }
        db
    }

    #[test]
    fn mode_table() {
        assert_eq!(SessionMode::from_paths(false, false), SessionMode::Ephemeral);
        assert_eq!(SessionMode::from_paths(true, false), SessionMode::ReadOnly);
        assert_eq!(SessionMode::from_paths(false, true), SessionMode::Create);
        assert_eq!(SessionMode::from_paths(true, true), SessionMode::CopyOnWrite);
    }

    #[test]
    fn empty_schema_is_consistent() {
        let db = AnnotationDb::in_memory().unwrap();
        assert!(db.validate_integrity().unwrap().is_empty());
    }

    #[test]
    fn orphan_object_is_reported() {
        let db = AnnotationDb::in_memory().unwrap();
        let id = db.insert_object(&NewObject::new("missing.jpg")).unwrap();
        assert_eq!(
            db.validate_integrity().unwrap(),
            vec![Violation::OrphanObject {
                objectid: id,
                imagefile: "missing.jpg".into()
            }]
        );
    }

    #[test]
    fn partial_and_negative_boxes_are_reported() {
        let db = sample();
        db.conn()
            .execute_batch(
                "INSERT INTO objects (objectid, imagefile, x) VALUES (7, 'a.jpg', 1.0);
                 INSERT INTO objects (objectid, imagefile, x, y, width, height)
                     VALUES (8, 'a.jpg', 0, 0, -1, 2);",
            )
            .unwrap();
        assert_eq!(
            db.validate_integrity().unwrap(),
            vec![
                Violation::PartialBox { objectid: 7 },
                Violation::NegativeBox { objectid: 8 }
            ]
        );
    }

    #[test]
    fn images_in_imagefile_order() {
        let db = sample();
        let files: Vec<_> = db
            .images(None)
            .unwrap()
            .into_iter()
            .map(|i| i.imagefile)
            .collect();
        assert_eq!(files, ["a.jpg", "b.jpg", "c.jpg"]);
    }

    #[test]
    fn image_predicate_matches_scan() {
        let db = sample();
        let all = db.images(None).unwrap();
        let expected: Vec<_> = all
            .iter()
            .filter(|i| i.name.as_deref() == Some("cat"))
            .cloned()
            .collect();
        assert_eq!(db.images(Some("name = 'cat'")).unwrap(), expected);
        assert_eq!(expected.len(), 2);
    }

    #[test]
    fn malformed_predicate_is_an_error() {
        let db = sample();
        assert!(matches!(
            db.images(Some("width >")),
            Err(Error::Predicate { .. })
        ));
        assert!(matches!(
            db.objects(Some("nonexistent_column = 1")),
            Err(Error::Predicate { .. })
        ));
    }

    #[test]
    fn double_quoted_literals_are_accepted() {
        let db = sample();
        let id = db
            .insert_object(
                &NewObject::new("a.jpg")
                    .with_box(BBox::new(0.0, 0.0, 10.0, 10.0))
                    .with_name("car"),
            )
            .unwrap();
        let hits = db.objects(Some("width<64 AND name=\"car\"")).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].object.objectid, id);
    }

    #[test]
    fn polygon_points_come_back_in_id_order() {
        let db = sample();
        let id = db.insert_object(&NewObject::new("a.jpg")).unwrap();
        for (x, y) in [(3.0, 1.0), (1.0, 2.0), (2.0, 3.0)] {
            db.add_polygon_point(id, x, y, None).unwrap();
        }
        let entry = &db.objects(None).unwrap()[0];
        let xs: Vec<f64> = entry.polygons.iter().map(|p| p.x).collect();
        assert_eq!(xs, [3.0, 1.0, 2.0]);
        assert!(entry.polygons.windows(2).all(|w| w[0].id < w[1].id));
        assert_eq!(entry.image.imagefile, "a.jpg");
    }

    #[test]
    fn ids_are_allocated_after_the_maximum() {
        let db = sample();
        db.conn()
            .execute("INSERT INTO objects (objectid, imagefile) VALUES (41, 'a.jpg')", [])
            .unwrap();
        assert_eq!(db.insert_object(&NewObject::new("a.jpg")).unwrap(), 42);
    }

    #[test]
    fn deleting_objects_cascades() {
        let db = sample();
        let a = db.insert_object(&NewObject::new("a.jpg")).unwrap();
        let b = db.insert_object(&NewObject::new("b.jpg")).unwrap();
        db.add_property(a, "color", "red").unwrap();
        db.add_polygon_point(a, 1.0, 1.0, None).unwrap();
        db.add_match(a, 1).unwrap();
        db.add_match(b, 1).unwrap();
        db.delete_objects(&[a]).unwrap();
        assert_eq!(db.count("properties").unwrap(), 0);
        assert_eq!(db.count("polygons").unwrap(), 0);
        assert_eq!(db.match_members(1).unwrap(), vec![b]);
        db.delete_objects(&[b]).unwrap();
        assert!(db.match_members(1).unwrap().is_empty());
        assert!(db.validate_integrity().unwrap().is_empty());
    }

    #[test]
    fn failed_predicate_deletes_nothing() {
        let db = sample();
        db.insert_object(&NewObject::new("a.jpg")).unwrap();
        assert!(db.delete_images_where("no_such_column < 3").is_err());
        assert_eq!(db.count("images").unwrap(), 3);
        assert_eq!(db.count("objects").unwrap(), 1);
    }

    #[test]
    fn read_only_commit_fails() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.db");
        let mut db = AnnotationDb::open(None, Some(&path)).unwrap();
        db.commit().unwrap();
        let mut ro = AnnotationDb::open_read_only(&path).unwrap();
        assert!(matches!(ro.commit(), Err(Error::ReadOnly)));
    }

    #[test]
    fn missing_input_is_an_error() {
        let err = AnnotationDb::open(Some(Path::new("/nonexistent/in.db")), None).unwrap_err();
        assert!(matches!(err, Error::NotFound(_)));
    }

    #[test]
    fn foreign_file_fails_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("other.db");
        Connection::open(&path)
            .unwrap()
            .execute_batch("CREATE TABLE t (a INTEGER);")
            .unwrap();
        let err = AnnotationDb::open_read_only(&path).unwrap_err();
        assert!(matches!(err, Error::Schema { .. }), "{err}");
    }

    #[test]
    fn dirty_flag_follows_changes_and_commits() {
        let mut db = AnnotationDb::in_memory().unwrap();
        assert!(!db.is_dirty());
        db.insert_image(&ImageRecord::new("a.jpg")).unwrap();
        assert!(db.is_dirty());
        db.commit().unwrap();
        assert!(!db.is_dirty());
    }

    #[test]
    fn snapshot_restore_roundtrip() {
        let mut db = sample();
        let snap = db.snapshot().unwrap();
        db.delete_images_where("1").unwrap();
        assert_eq!(db.count("images").unwrap(), 0);
        db.restore(&snap).unwrap();
        assert_eq!(db.count("images").unwrap(), 3);
    }
}
