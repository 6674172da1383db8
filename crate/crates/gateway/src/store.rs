//! Directory-backed session store.
//!
//! ```text
//! <root>/catalog.json       last ingest: item ids and skipped files
//! <root>/items/<id>.json    one WorkItem per image
//! <root>/results/<id>.json  latest SegmentationResult per image
//! ```
//!
//! Every file is written to a temporary sibling and renamed into place.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use carosegd_core::geometry::AnnotationSet;
use carosegd_core::imaging::PitchMeta;
use carosegd_core::pipeline::{FarWallResult, FarWallStatus, RunStatus, SegmentationResult};
use carosegd_core::{RegionOfInterest, UltrasoundImage};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, GatewayError, Result};

pub const STORE_ENV: &str = "CAROSEGD_STORE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemState {
    Ingested,
    RoiSet,
    FarwallOk,
    FarwallFailed,
    FarwallCorrected,
    Segmented,
}

impl ItemState {
    fn after_farwall(status: FarWallStatus) -> Self {
        match status {
            FarWallStatus::Ok => ItemState::FarwallOk,
            FarWallStatus::Failed => ItemState::FarwallFailed,
            FarWallStatus::ManuallyCorrected => ItemState::FarwallCorrected,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: ItemState,
    pub at_unix_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkItem {
    pub id: String,
    pub image: PathBuf,
    pub meta: PathBuf,
    /// Annotation CSV per expert id.
    pub annotations: BTreeMap<String, PathBuf>,
    pub roi: Option<RegionOfInterest>,
    pub farwall: Option<FarWallResult>,
    pub last_run: Option<RunStatus>,
    pub state: ItemState,
    pub history: Vec<Transition>,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl WorkItem {
    pub fn new(id: String, image: PathBuf, meta: PathBuf, annotations: BTreeMap<String, PathBuf>) -> Self {
        let mut item = Self {
            id,
            image,
            meta,
            annotations,
            roi: None,
            farwall: None,
            last_run: None,
            state: ItemState::Ingested,
            history: Vec::new(),
        };
        item.transition(ItemState::Ingested);
        item
    }

    fn transition(&mut self, state: ItemState) {
        self.state = state;
        self.history.push(Transition {
            state,
            at_unix_ms: now_ms(),
        });
    }

    pub fn load_image(&self) -> Result<UltrasoundImage> {
        let bytes = fs::read(&self.image).map_err(io_err(&self.image))?;
        let meta = PitchMeta::load(&self.meta)?;
        Ok(UltrasoundImage::decode(&bytes, meta.pitch_vertical_um, meta.pitch_horizontal_um)?)
    }

    pub fn load_annotations(&self, expert: &str) -> Result<AnnotationSet> {
        let path = self.annotations.get(expert).ok_or_else(|| {
            GatewayError::NotFound(format!("item `{}` has no annotations from expert `{expert}`", self.id))
        })?;
        Ok(AnnotationSet::load(path, expert)?)
    }

    /// Setting the ROI discards any axis and result derived from the previous one.
    pub fn set_roi(&mut self, roi: RegionOfInterest) {
        self.roi = Some(roi);
        self.farwall = None;
        self.last_run = None;
        self.transition(ItemState::RoiSet);
    }

    pub fn set_farwall(&mut self, farwall: FarWallResult) {
        let state = ItemState::after_farwall(farwall.status);
        self.farwall = Some(farwall);
        self.last_run = None;
        self.transition(state);
    }

    pub fn record_run(&mut self, result: &SegmentationResult) {
        self.last_run = Some(result.status);
        if result.status == RunStatus::Segmented {
            self.transition(ItemState::Segmented);
        }
    }

    pub fn require_roi(&self) -> Result<RegionOfInterest> {
        self.roi
            .ok_or_else(|| GatewayError::WrongState(format!("item `{}` has no ROI yet", self.id)))
    }

    /// Axis that stage 2 may start from: detected and accepted, or manually drawn.
    pub fn require_axis(&self) -> Result<&FarWallResult> {
        match &self.farwall {
            Some(fw) if fw.usable_axis().is_some() => Ok(fw),
            Some(_) => Err(GatewayError::WrongState(format!(
                "far-wall detection failed on `{}`; submit a manual axis first",
                self.id
            ))),
            None => Err(GatewayError::WrongState(format!(
                "item `{}` has neither a detected nor a manual axis",
                self.id
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub file: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Catalog {
    pub source_dir: PathBuf,
    pub items: Vec<String>,
    pub skipped: Vec<SkipRecord>,
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Writes `bytes` next to `path` and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let n = TMP_COUNTER.fetch_add(1, Ordering::Relaxed);
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(format!(".tmp-{}-{n}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id != "."
        && id != ".."
        && !id.contains(['/', '\\'])
        && !id.chars().any(char::is_control);
    if ok {
        Ok(())
    } else {
        Err(GatewayError::Invalid(format!("`{id}` is not a valid item id")))
    }
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        for dir in [root.join("items"), root.join("results")] {
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        }
        Ok(Self { root })
    }

    /// Explicit path, else `$CAROSEGD_STORE`, else `./carosegd-store`.
    pub fn resolve(explicit: Option<PathBuf>) -> Result<Self> {
        let root = explicit
            .or_else(|| std::env::var_os(STORE_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("carosegd-store"));
        Self::open(root)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn item_path(&self, id: &str) -> PathBuf {
        self.root.join("items").join(format!("{id}.json"))
    }

    pub fn result_path(&self, id: &str) -> PathBuf {
        self.root.join("results").join(format!("{id}.json"))
    }

    pub fn save_catalog(&self, catalog: &Catalog) -> Result<()> {
        let json = serde_json::to_vec_pretty(catalog).expect("catalog serializes");
        write_atomic(&self.root.join("catalog.json"), &json)
    }

    pub fn catalog(&self) -> Result<Option<Catalog>> {
        let path = self.root.join("catalog.json");
        match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|e| GatewayError::Invalid(format!("corrupt catalog {}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(path)(e)),
        }
    }

    pub fn save_item(&self, item: &WorkItem) -> Result<()> {
        check_id(&item.id)?;
        let json = serde_json::to_vec_pretty(item).expect("item serializes");
        write_atomic(&self.item_path(&item.id), &json)
    }

    pub fn item(&self, id: &str) -> Result<WorkItem> {
        check_id(id).map_err(|_| GatewayError::UnknownItem(id.to_string()))?;
        let path = self.item_path(id);
        match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map_err(|e| GatewayError::Invalid(format!("corrupt item {}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(GatewayError::UnknownItem(id.to_string())),
            Err(e) => Err(io_err(path)(e)),
        }
    }

    /// All stored items sorted by id; half-written temporaries are ignored.
    pub fn items(&self) -> Result<Vec<WorkItem>> {
        let dir = self.root.join("items");
        let mut ids = Vec::new();
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let entry = entry.map_err(io_err(&dir))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if let Some(id) = name.strip_suffix(".json") {
                ids.push(id.to_string());
            }
        }
        ids.sort();
        ids.iter().map(|id| self.item(id)).collect()
    }

    pub fn save_result(&self, result: &SegmentationResult) -> Result<()> {
        check_id(&result.image_id)?;
        write_atomic(&self.result_path(&result.image_id), result.to_json().as_bytes())
    }

    pub fn result_bytes(&self, id: &str) -> Result<Vec<u8>> {
        check_id(id).map_err(|_| GatewayError::UnknownItem(id.to_string()))?;
        let path = self.result_path(id);
        match fs::read(&path) {
            Ok(bytes) => Ok(bytes),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                Err(GatewayError::NotFound(format!("item `{id}` has no result yet")))
            }
            Err(e) => Err(io_err(path)(e)),
        }
    }
}
