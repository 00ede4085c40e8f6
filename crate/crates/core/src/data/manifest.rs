use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{pgm, Sample};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    id: String,
    image_path: String,
    label: Option<f64>,
}

/// Writes `samples` as a CSV manifest (`id,image_path,label`) and one 16-bit
/// PGM per sample under `images/` next to the manifest.
pub fn write_manifest(samples: &[Sample], path: &Path) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let image_dir = dir.join("images");
    fs::create_dir_all(&image_dir).map_err(|e| Error::io(&image_dir, e))?;
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for s in samples {
        let rel = format!("images/{}.pgm", s.id);
        pgm::write(&dir.join(&rel), &s.image)?;
        w.serialize(Row { id: s.id.clone(), image_path: rel, label: s.label }).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Data(format!("{}: {e}", path.display()))
}

/// Reads a manifest written by [`write_manifest`]. Image paths are relative
/// to the manifest's directory. Every sample whose image file is missing is
/// reported in one error.
pub fn load_manifest(path: &Path) -> Result<Vec<Sample>> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut samples = Vec::new();
    let mut missing = Vec::new();
    let mut seen = HashSet::new();
    for (k, row) in rdr.deserialize::<Row>().enumerate() {
        // header is line 1
        let line = k + 2;
        let row = row.map_err(|e| Error::Data(format!("{} line {line}: malformed row: {e}", path.display())))?;
        if !seen.insert(row.id.clone()) {
            return Err(Error::Data(format!("{} line {line}: duplicate id {}", path.display(), row.id)));
        }
        if let Some(label) = row.label {
            if !label.is_finite() {
                return Err(Error::Data(format!("{} line {line}: non-finite label", path.display())));
            }
            if !(0.0..=3.0).contains(&label) {
                log::warn!("{} line {line}: implausible label {label} for {}", path.display(), row.id);
            }
        }
        let image_path = dir.join(&row.image_path);
        if !image_path.is_file() {
            missing.push(row.id);
            continue;
        }
        let image = pgm::read(&image_path)?;
        samples.push(Sample { id: row.id, image, label: row.label });
    }
    if !missing.is_empty() {
        return Err(Error::Data(format!("{}: missing image files for ids {}", path.display(), missing.join(", "))));
    }
    Ok(samples)
}
