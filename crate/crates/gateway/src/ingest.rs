//! Dataset ingestion.
//!
//! Expected layout of an input directory:
//!
//! ```text
//! <id>.png | <id>.pgm      8-bit grayscale B-mode image
//! <id>.meta                pitch_vertical_um=... / pitch_horizontal_um=...
//! <id>_<expert>.csv        optional LI/MA control points, one file per expert
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use carosegd_core::geometry::AnnotationSet;
use carosegd_core::imaging::{sidecar_meta_path, PitchMeta};
use carosegd_core::UltrasoundImage;

use crate::error::{io_err, Result};
use crate::store::{check_id, Catalog, SkipRecord, Store, WorkItem};

const IMAGE_EXTENSIONS: [&str; 2] = ["png", "pgm"];

#[derive(Debug, Clone, PartialEq)]
pub struct IngestReport {
    pub catalog: Catalog,
    pub warnings: Vec<String>,
}

fn extension(path: &Path) -> Option<String> {
    path.extension().map(|e| e.to_string_lossy().to_ascii_lowercase())
}

/// Matches `<stem>_<expert>.csv` against the known image stems, longest stem first.
pub(crate) fn annotation_owner<'a>(file_name: &str, stems: &'a [String]) -> Option<(&'a str, String)> {
    let base = file_name.strip_suffix(".csv").or_else(|| file_name.strip_suffix(".CSV"))?;
    stems
        .iter()
        .filter_map(|stem| {
            let expert = base.strip_prefix(stem.as_str())?.strip_prefix('_')?;
            (!expert.is_empty()).then(|| (stem.as_str(), expert.to_string()))
        })
        .max_by_key(|(stem, _)| stem.len())
}

fn validate_image(path: &Path) -> std::result::Result<PathBuf, String> {
    let meta_path = sidecar_meta_path(path).ok_or_else(|| "missing .meta sidecar".to_string())?;
    let meta = PitchMeta::load(&meta_path).map_err(|e| e.to_string())?;
    let bytes = fs::read(path).map_err(|e| e.to_string())?;
    UltrasoundImage::decode(&bytes, meta.pitch_vertical_um, meta.pitch_horizontal_um).map_err(|e| e.to_string())?;
    Ok(meta_path)
}

/// Scans `dir` and registers every valid image in the store.
///
/// Items already in the store for the same image file keep their ROI, axis
/// and history; their annotation list is refreshed.
pub fn ingest(dir: &Path, store: &Store) -> Result<IngestReport> {
    let dir = fs::canonicalize(dir).map_err(io_err(dir))?;
    let mut files: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(io_err(&dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();

    let mut warnings = Vec::new();
    let mut skipped = Vec::new();
    let mut images: BTreeMap<String, (PathBuf, PathBuf)> = BTreeMap::new();
    for path in &files {
        let Some(ext) = extension(path) else { continue };
        if !IMAGE_EXTENSIONS.contains(&ext.as_str()) {
            continue;
        }
        let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        if check_id(&stem).is_err() {
            skipped.push(SkipRecord { file: path.clone(), reason: "file name is not a usable id".into() });
            continue;
        }
        if images.contains_key(&stem) {
            skipped.push(SkipRecord { file: path.clone(), reason: format!("duplicate image id `{stem}`") });
            continue;
        }
        match validate_image(path) {
            Ok(meta) => {
                images.insert(stem, (path.clone(), meta));
            }
            Err(reason) => skipped.push(SkipRecord { file: path.clone(), reason }),
        }
    }

    let stems: Vec<String> = images.keys().cloned().collect();
    let mut annotations: BTreeMap<String, BTreeMap<String, PathBuf>> = BTreeMap::new();
    for path in files.iter().filter(|p| extension(p).as_deref() == Some("csv")) {
        let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let Some((stem, expert)) = annotation_owner(&name, &stems) else {
            warnings.push(format!("{}: no matching image, ignored", path.display()));
            continue;
        };
        match AnnotationSet::load(path, &expert) {
            Ok(_) => {
                annotations.entry(stem.to_string()).or_default().insert(expert, path.clone());
            }
            Err(e) => skipped.push(SkipRecord { file: path.clone(), reason: e.to_string() }),
        }
    }

    for (id, (image, meta)) in &images {
        let annots = annotations.remove(id).unwrap_or_default();
        let item = match store.item(id) {
            Ok(mut existing) if existing.image == *image => {
                existing.meta = meta.clone();
                existing.annotations = annots;
                existing
            }
            _ => WorkItem::new(id.clone(), image.clone(), meta.clone(), annots),
        };
        store.save_item(&item)?;
    }

    if images.is_empty() {
        warnings.push(format!("{}: no ingestible images found", dir.display()));
    }
    for s in &skipped {
        warnings.push(format!("{}: skipped: {}", s.file.display(), s.reason));
    }
    let catalog = Catalog {
        source_dir: dir,
        items: stems,
        skipped,
    };
    store.save_catalog(&catalog)?;
    Ok(IngestReport { catalog, warnings })
}
