//! Item operations shared by the command line and the HTTP service.
//!
//! Both front ends call the same methods, and every step reloads the item
//! from the store, so a CLI run and the equivalent sequence of HTTP calls
//! produce the same result file byte for byte.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::{Arc, Mutex};

use carosegd_core::pipeline::{
    manual_axis_from_points, DebugMaps, FarWallResult, FarWallStatus, Pipeline, PipelineConfig, RunStatus,
    SegmentationResult,
};
use carosegd_core::RegionOfInterest;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, GatewayError, Result};
use crate::predictors::PredictorFactory;
use crate::store::{ItemState, Store, WorkItem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemSummary {
    pub id: String,
    pub state: ItemState,
    pub roi: Option<RegionOfInterest>,
    pub farwall_status: Option<FarWallStatus>,
    pub last_run: Option<RunStatus>,
    pub experts: Vec<String>,
}

impl From<&WorkItem> for ItemSummary {
    fn from(item: &WorkItem) -> Self {
        Self {
            id: item.id.clone(),
            state: item.state,
            roi: item.roi,
            farwall_status: item.farwall.as_ref().map(|f| f.status),
            last_run: item.last_run,
            experts: item.annotations.keys().cloned().collect(),
        }
    }
}

pub struct Service {
    store: Store,
    predictors: PredictorFactory,
    pipeline: Pipeline,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl Service {
    pub fn new(store: Store, predictors: PredictorFactory, config: PipelineConfig) -> Self {
        Self {
            store,
            predictors,
            pipeline: Pipeline::new(config),
            locks: Mutex::new(HashMap::new()),
        }
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.pipeline.config
    }

    fn with_item<T>(&self, id: &str, f: impl FnOnce(&mut WorkItem) -> Result<T>) -> Result<T> {
        let lock = {
            let mut locks = self.locks.lock().expect("lock table poisoned");
            locks.entry(id.to_string()).or_default().clone()
        };
        let _guard = lock.lock().unwrap_or_else(|p| p.into_inner());
        let mut item = self.store.item(id)?;
        f(&mut item)
    }

    pub fn items(&self) -> Result<Vec<ItemSummary>> {
        Ok(self.store.items()?.iter().map(ItemSummary::from).collect())
    }

    pub fn item(&self, id: &str) -> Result<ItemSummary> {
        Ok(ItemSummary::from(&self.store.item(id)?))
    }

    pub fn image_png(&self, id: &str) -> Result<Vec<u8>> {
        let item = self.store.item(id)?;
        Ok(item.load_image()?.to_png_bytes()?)
    }

    pub fn set_roi(&self, id: &str, x_left: usize, x_right: usize) -> Result<ItemSummary> {
        self.with_item(id, |item| {
            if x_left >= x_right {
                return Err(GatewayError::Invalid(format!(
                    "ROI borders must satisfy x_left < x_right, got {x_left} and {x_right}"
                )));
            }
            let roi = RegionOfInterest::new(x_left, x_right)?;
            let width = item.load_image()?.width();
            roi.check_within(width)?;
            if roi.width() < carosegd_core::tiling::PATCH_WIDTH {
                return Err(carosegd_core::Error::RoiTooNarrow {
                    width: roi.width(),
                    min: carosegd_core::tiling::PATCH_WIDTH,
                }
                .into());
            }
            item.set_roi(roi);
            self.store.save_item(item)?;
            Ok(ItemSummary::from(&*item))
        })
    }

    pub fn detect_far_wall(&self, id: &str, debug: Option<&mut DebugMaps>) -> Result<FarWallResult> {
        self.with_item(id, |item| {
            let roi = item.require_roi()?;
            let img = item.load_image()?;
            let (fw, _) = self.predictors.for_item(item)?;
            let (result, maps) = self.pipeline.detect_far_wall_with_maps(&img, roi, fw.as_ref())?;
            if let Some(d) = debug {
                d.farwall = Some(maps);
            }
            item.set_farwall(result.clone());
            self.store.save_item(item)?;
            Ok(result)
        })
    }

    /// Replaces the axis by a PCHIP curve through operator control points.
    pub fn set_axis(&self, id: &str, control_points: &[(f64, f64)]) -> Result<FarWallResult> {
        self.with_item(id, |item| {
            let roi = item.require_roi()?;
            if control_points.len() < 2 {
                return Err(GatewayError::Invalid("at least 2 control points are required".into()));
            }
            let axis = manual_axis_from_points(control_points, roi)?;
            let result = FarWallResult::manual(axis);
            item.set_farwall(result.clone());
            self.store.save_item(item)?;
            Ok(result)
        })
    }

    fn finish(&self, item: &mut WorkItem, debug: Option<&mut DebugMaps>) -> Result<SegmentationResult> {
        let roi = item.require_roi()?;
        let farwall = item
            .farwall
            .clone()
            .ok_or_else(|| GatewayError::WrongState(format!("item `{}` has no axis", item.id)))?;
        let img = item.load_image()?;
        let (_, imc) = self.predictors.for_item(item)?;
        let result = self.pipeline.finish(&img, &item.id, roi, &farwall, imc.as_ref(), debug)?;
        self.store.save_result(&result)?;
        item.record_run(&result);
        self.store.save_item(item)?;
        Ok(result)
    }

    /// Stage 2 from the stored axis; refuses to start without a usable one.
    pub fn segment(&self, id: &str, debug: Option<&mut DebugMaps>) -> Result<SegmentationResult> {
        self.with_item(id, |item| {
            item.require_roi()?;
            item.require_axis()?;
            self.finish(item, debug)
        })
    }

    /// Whole run as the CLI does it: ROI, far wall (or manual axis), stage 2.
    /// A stage-1 failure still yields a stored result with the failed status.
    pub fn run(
        &self,
        id: &str,
        roi: RegionOfInterest,
        axis_points: Option<&[(f64, f64)]>,
        mut debug: Option<&mut DebugMaps>,
    ) -> Result<SegmentationResult> {
        self.set_roi(id, roi.x_left, roi.x_right)?;
        match axis_points {
            Some(points) => {
                self.set_axis(id, points)?;
            }
            None => {
                self.detect_far_wall(id, debug.as_deref_mut())?;
            }
        }
        self.with_item(id, |item| self.finish(item, debug))
    }
}

/// Writes the fused maps of both stages as PGM files.
pub fn write_debug_maps(dir: &Path, maps: &DebugMaps) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (stage, stage_maps) in [("farwall", &maps.farwall), ("imc", &maps.imc)] {
        let Some(m) = stage_maps else { continue };
        let (avg, cov) = m.maps.to_pgm();
        for (name, bytes) in [
            ("prediction", avg),
            ("overlay", cov),
            ("segmentation", m.segmentation.to_pgm()),
        ] {
            let path = dir.join(format!("{stage}_{name}.pgm"));
            fs::write(&path, bytes).map_err(io_err(&path))?;
        }
    }
    Ok(())
}
