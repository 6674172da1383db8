//! Table-style comparison of results and expert annotations.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use carosegd_core::evalkit::{EvaluationReport, Interfaces, ReportBuilder, SuccessRate};
use carosegd_core::geometry::AnnotationSet;
use carosegd_core::imaging::PitchMeta;
use carosegd_core::pipeline::{FarWallStatus, SegmentationResult};
use carosegd_core::Interface;

use crate::error::{io_err, GatewayError, Result};
use crate::ingest::annotation_owner;

/// The candidate column compares either pipeline results or a second expert to the reference.
pub const METHOD: &str = "method";

#[derive(Debug, Clone)]
pub struct EvaluateOptions {
    pub results: Option<PathBuf>,
    pub annotations: PathBuf,
    pub reference: String,
    pub candidate: String,
    pub observer: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvaluationReport,
    pub warnings: Vec<String>,
}

fn list(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    Ok(files)
}

fn load_results(dir: &Path) -> Result<BTreeMap<String, SegmentationResult>> {
    let mut out = BTreeMap::new();
    for path in list(dir)? {
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let result = SegmentationResult::from_json(&text)
            .map_err(|e| GatewayError::Invalid(format!("{}: not a result file: {e}", path.display())))?;
        out.insert(result.image_id.clone(), result);
    }
    Ok(out)
}

fn interfaces(set: &AnnotationSet) -> carosegd_core::Result<Interfaces> {
    Ok(Interfaces {
        li: set.contour(Interface::LumenIntima)?,
        ma: set.contour(Interface::MediaAdventitia)?,
    })
}

pub fn evaluate(opts: &EvaluateOptions) -> Result<Evaluation> {
    let method_mode = opts.candidate == METHOD;
    let results = match &opts.results {
        Some(dir) => load_results(dir)?,
        None if method_mode => {
            return Err(GatewayError::Invalid("--results is required to evaluate the method".into()))
        }
        None => BTreeMap::new(),
    };

    let files = list(&opts.annotations)?;
    let mut pitches: BTreeMap<String, f64> = BTreeMap::new();
    for path in files.iter().filter(|p| p.extension().and_then(|e| e.to_str()) == Some("meta")) {
        let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        // `<id>.png.meta` names the same image as `<id>.meta`
        let id = stem.split_once('.').map_or(stem.clone(), |(s, _)| s.to_string());
        pitches.insert(id, PitchMeta::load(path)?.pitch_vertical_um);
    }
    let mut known: Vec<String> = pitches.keys().chain(results.keys()).cloned().collect();
    known.sort();
    known.dedup();

    let mut warnings = Vec::new();
    let mut annotations: BTreeMap<String, BTreeMap<String, AnnotationSet>> = BTreeMap::new();
    for path in files.iter().filter(|p| p.extension().and_then(|e| e.to_str()) == Some("csv")) {
        let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let Some((id, expert)) = annotation_owner(&name, &known) else {
            warnings.push(format!("{}: no matching image id, ignored", path.display()));
            continue;
        };
        match AnnotationSet::load(path, &expert) {
            Ok(set) => {
                annotations.entry(id.to_string()).or_default().insert(expert, set);
            }
            Err(e) => warnings.push(format!("{}: {e}", path.display())),
        }
    }

    let candidate_label = if method_mode { "Method".to_string() } else { opts.candidate.clone() };
    let observer = opts.observer.clone().filter(|o| *o != opts.candidate && *o != opts.reference);
    let mut builder = ReportBuilder::new(
        &opts.reference,
        &candidate_label,
        observer.as_deref().unwrap_or("-"),
    );

    let mut matched = BTreeSet::new();
    for (id, sets) in &annotations {
        let Some(reference) = sets.get(&opts.reference) else { continue };
        let Some(pitch) = results.get(id).map(|r| r.pitch_vertical_um).or_else(|| pitches.get(id).copied()) else {
            warnings.push(format!("{id}: no pitch (neither result nor .meta), skipped"));
            continue;
        };
        let reference = match interfaces(reference) {
            Ok(r) => r,
            Err(e) => {
                warnings.push(format!("{id}: reference annotations unusable: {e}"));
                continue;
            }
        };
        let candidate = if method_mode {
            results.get(id).map(|r| {
                if !r.is_success() {
                    return None;
                }
                Some(Interfaces {
                    li: r.li_contour()?,
                    ma: r.ma_contour()?,
                })
            })
        } else {
            sets.get(&opts.candidate).map(|s| interfaces(s).ok())
        };
        match candidate {
            Some(Some(c)) => match builder.add_candidate(id, &c, &reference, pitch) {
                Ok(()) => {
                    matched.insert(id.clone());
                }
                Err(e) => warnings.push(format!("{id}: {e}")),
            },
            Some(None) => {
                matched.insert(id.clone());
                warnings.push(format!("{id}: no candidate contours (failed run or bad annotations)"));
            }
            None => {}
        }
        if let Some(obs) = observer.as_ref().and_then(|o| sets.get(o)) {
            match interfaces(obs).and_then(|o| {
                builder.add_observer(id, &o, &reference, pitch)
            }) {
                Ok(()) => {}
                Err(e) => warnings.push(format!("{id}: observer: {e}")),
            }
        }
    }
    if matched.is_empty() {
        return Err(GatewayError::Invalid(format!(
            "no image has both `{}` annotations and a `{}` candidate",
            opts.reference, opts.candidate
        )));
    }
    if method_mode && !results.is_empty() {
        builder.set_success(SuccessRate {
            succeeded: results.values().filter(|r| r.farwall_status == FarWallStatus::Ok).count(),
            total: results.len(),
        });
    }
    Ok(Evaluation {
        report: builder.build(),
        warnings,
    })
}
