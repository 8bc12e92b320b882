//! Dataset directories: one trajectory file per entry plus `manifest.txt`.
//!
//! Each manifest line is `<sha256>  <relative path>`, the layout used by
//! `sha256sum`, so a directory can be checked with standard tools.

use std::path::{Path, PathBuf};

use crate::error::{QdynError, Result};
use crate::fsutil;
use crate::trajfile::{self, TrajectoryFile};

pub const MANIFEST: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
}

pub fn file_name(index: usize) -> String {
    format!("traj_{index:04}.csv")
}

pub fn render_manifest(entries: &[ManifestEntry]) -> String {
    entries
        .iter()
        .map(|e| format!("{}  {}\n", e.sha256, e.path))
        .collect()
}

pub fn parse_manifest(text: &str, path: &Path) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (sum, rel) = line
            .split_once("  ")
            .ok_or_else(|| QdynError::parse(path, i + 1, "expected `<sha256>  <path>`"))?;
        if sum.len() != 64 || !sum.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(QdynError::parse(path, i + 1, format!("bad checksum {sum:?}")));
        }
        let rel = rel.trim();
        if rel.is_empty() || Path::new(rel).is_absolute() || rel.split('/').any(|c| c == "..") {
            return Err(QdynError::parse(path, i + 1, format!("path must be relative: {rel:?}")));
        }
        out.push(ManifestEntry {
            path: rel.to_string(),
            sha256: sum.to_ascii_lowercase(),
        });
    }
    Ok(out)
}

/// Writes every trajectory and then the manifest. Returns the manifest entries.
pub fn write_dataset(dir: &Path, files: &[TrajectoryFile]) -> Result<Vec<ManifestEntry>> {
    fsutil::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(files.len());
    for (i, f) in files.iter().enumerate() {
        let name = file_name(i);
        let text = trajfile::render(f);
        fsutil::write_atomic(&dir.join(&name), text.as_bytes())?;
        entries.push(ManifestEntry {
            path: name,
            sha256: fsutil::sha256_hex(text.as_bytes()),
        });
    }
    fsutil::write_atomic(&dir.join(MANIFEST), render_manifest(&entries).as_bytes())?;
    Ok(entries)
}

/// A loaded dataset entry.
#[derive(Debug, Clone)]
pub struct LoadedTrajectory {
    pub path: PathBuf,
    pub name: String,
    pub file: TrajectoryFile,
}

/// Loads every manifest entry in manifest order, verifying checksums.
pub fn load_dataset(dir: &Path) -> Result<Vec<LoadedTrajectory>> {
    let manifest_path = dir.join(MANIFEST);
    let entries = parse_manifest(&fsutil::read_text(&manifest_path)?, &manifest_path)?;
    if entries.is_empty() {
        return Err(QdynError::Data(format!("{}: manifest lists no trajectories", dir.display())));
    }
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        let path = dir.join(&e.path);
        let bytes = fsutil::read(&path)?;
        let got = fsutil::sha256_hex(&bytes);
        if got != e.sha256 {
            return Err(QdynError::Data(format!(
                "{}: checksum {got} does not match manifest {}",
                path.display(),
                e.sha256
            )));
        }
        let text = String::from_utf8(bytes)
            .map_err(|_| QdynError::parse(&path, 0, "file is not UTF-8"))?;
        let file = trajfile::parse(&text, &path)?;
        out.push(LoadedTrajectory {
            path,
            name: e.path,
            file,
        });
    }
    Ok(out)
}
