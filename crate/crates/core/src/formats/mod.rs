//! Importers and exporters for public annotation formats.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

mod csv_export;
pub mod kitti;
pub mod labelme;
pub mod voc;

pub use csv_export::{export_csv, CSV_HEADER};
pub use kitti::{export_kitti, import_kitti};
pub use labelme::import_labelme;
pub use voc::import_pascal_voc;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Skipped {
    pub path: PathBuf,
    pub reason: String,
}

/// What an import (or merge) added and what it had to leave out.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ImportReport {
    pub images_added: usize,
    pub objects_added: usize,
    pub skipped: Vec<Skipped>,
}

impl ImportReport {
    pub(crate) fn skip(&mut self, path: impl Into<PathBuf>, reason: impl ToString) {
        let path = path.into();
        let reason = reason.to_string();
        log::warn!("skipping {}: {}", path.display(), reason);
        self.skipped.push(Skipped { path, reason });
    }
}

impl std::fmt::Display for ImportReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "added {} images and {} objects, skipped {} files",
            self.images_added,
            self.objects_added,
            self.skipped.len()
        )
    }
}

/// Stores `path` relative to `rootdir` when it lies underneath it, so the
/// database stays relocatable together with its image tree.
pub fn relative_imagefile(rootdir: &Path, path: &Path) -> String {
    let lexical = path.strip_prefix(rootdir).ok().map(Path::to_path_buf);
    let rel = lexical.or_else(|| match (rootdir.canonicalize(), path.canonicalize()) {
        (Ok(root), Ok(full)) => full.strip_prefix(&root).map(Path::to_path_buf).ok(),
        (Ok(root), Err(_)) => path
            .parent()
            .and_then(|p| p.canonicalize().ok())
            .and_then(|p| p.strip_prefix(&root).ok().map(Path::to_path_buf))
            .map(|p| p.join(path.file_name().unwrap_or_default())),
        _ => None,
    });
    match rel {
        Some(rel) => rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/"),
        None => path.to_string_lossy().into_owned(),
    }
}

/// Files in `dir` with one of `extensions` (case-insensitive), sorted by name.
/// A missing directory is an error; an empty one is not.
pub(crate) fn list_files(dir: &Path, extensions: &[&str]) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .map(|e| e.to_string_lossy().to_ascii_lowercase());
        if path.is_file() && ext.is_some_and(|e| extensions.contains(&e.as_str())) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

pub(crate) const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg"];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_paths_under_root() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("imgs")).unwrap();
        fs::write(dir.path().join("imgs/0.jpg"), b"x").unwrap();
        assert_eq!(
            relative_imagefile(dir.path(), &dir.path().join("imgs/0.jpg")),
            "imgs/0.jpg"
        );
        // Not yet existing files still resolve through their parent.
        assert_eq!(
            relative_imagefile(dir.path(), &dir.path().join("imgs/1.jpg")),
            "imgs/1.jpg"
        );
    }

    #[test]
    fn paths_outside_root_are_kept() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let f = b.path().join("x.png");
        fs::write(&f, b"x").unwrap();
        assert_eq!(relative_imagefile(a.path(), &f), f.to_string_lossy());
    }
}
