//! Two-stage orchestration.
//!
//! Stage 1 works on the image resampled to 512 rows: full-height patches slide
//! across the ROI, their fused prediction is thresholded, cleaned, and the
//! upper boundary of the surviving region is smoothed by a cubic fit to give
//! the median axis of the far wall. Stage 2 works on the image resampled to
//! a 5 µm vertical pitch: 512-row patches are stacked along that axis and the
//! upper and lower boundaries of the fused region are the LI and MA
//! interfaces. Every contour leaving this module is in native image
//! coordinates (full-image columns, native rows).

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::fusion::{
    accumulate, average_binarize, largest_component, lower_boundary, upper_boundary, FusionMaps,
    SegmentationMap, DEFAULT_MAX_GAP, DEFAULT_THRESHOLD,
};
use crate::geometry::{integer_span, pchip_interpolate, polyfit_cubic, Contour, CubicFit};
use crate::imaging::{crop_roi, resample_height, resample_pitch, RegionOfInterest, RowMap, UltrasoundImage};
use crate::inference::{predict_batch, Frame, PatchPredictor};
use crate::tiling::{
    extract, tile_along_axis, tile_farwall_inference, TilingMode, DEFAULT_INFERENCE_STRIDE, PATCH_WIDTH,
};

/// Thresholds of the automatic stage-1 failure check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureThresholds {
    /// Minimum segmented area as a fraction of the ROI area.
    pub min_area_fraction: f64,
    /// Minimum fraction of ROI columns reached by the raw boundary.
    pub min_column_coverage: f64,
    /// Maximum RMS deviation (512-row frame pixels) of the raw boundary from its cubic fit.
    pub max_axis_rms_px: f64,
}

impl Default for FailureThresholds {
    fn default() -> Self {
        Self {
            min_area_fraction: 0.05,
            min_column_coverage: 0.6,
            max_axis_rms_px: 40.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub farwall_height: usize,
    pub imc_pitch_um: f64,
    pub stride: usize,
    pub threshold: f64,
    pub max_gap: usize,
    pub failure: FailureThresholds,
    /// Cubic-smooth the LI and MA contours as well as the far-wall axis.
    pub smooth_imc_contours: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            farwall_height: 512,
            imc_pitch_um: 5.0,
            stride: DEFAULT_INFERENCE_STRIDE,
            threshold: DEFAULT_THRESHOLD,
            max_gap: DEFAULT_MAX_GAP,
            failure: FailureThresholds::default(),
            smooth_imc_contours: false,
        }
    }
}

impl PipelineConfig {
    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FarWallStatus {
    Ok,
    Failed,
    ManuallyCorrected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct FarWallDiagnostics {
    pub region_area_fraction: f64,
    pub column_coverage: f64,
    pub axis_fit_rms_px: f64,
    /// Largest |y''| of the fitted axis, in 512-row frame pixels per column².
    pub axis_curvature: f64,
    pub failure_reasons: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FarWallResult {
    pub status: FarWallStatus,
    /// Smoothed median axis over the whole ROI (absent when nothing was found).
    pub axis: Option<Contour>,
    pub raw_axis: Option<Contour>,
    pub diagnostics: Option<FarWallDiagnostics>,
    pub predictor: Option<String>,
}

impl FarWallResult {
    pub fn manual(axis: Contour) -> Self {
        Self {
            status: FarWallStatus::ManuallyCorrected,
            axis: Some(axis),
            raw_axis: None,
            diagnostics: None,
            predictor: None,
        }
    }

    pub fn usable_axis(&self) -> Option<&Contour> {
        match self.status {
            FarWallStatus::Failed => None,
            _ => self.axis.as_ref(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Segmented,
    FarwallFailed,
    ImcFailed,
}

/// Contour with ordinates in native pixels and in micrometers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourReport {
    pub x_start: usize,
    pub ordinates_px: Vec<f64>,
    pub ordinates_um: Vec<f64>,
}

impl ContourReport {
    pub fn new(contour: &Contour, pitch_vertical_um: f64) -> Self {
        Self {
            x_start: contour.x_start(),
            ordinates_px: contour.ordinates().to_vec(),
            ordinates_um: contour.ordinates().iter().map(|y| y * pitch_vertical_um).collect(),
        }
    }

    pub fn contour(&self) -> Result<Contour> {
        Contour::new(self.x_start, self.ordinates_px.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub predictor_fw: Option<String>,
    pub predictor_imc: Option<String>,
    pub config_hash: String,
    pub stride: usize,
    pub manual_correction: bool,
    pub config: PipelineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationResult {
    pub image_id: String,
    pub roi: RegionOfInterest,
    pub status: RunStatus,
    pub farwall_status: FarWallStatus,
    pub message: Option<String>,
    pub pitch_vertical_um: f64,
    pub pitch_horizontal_um: f64,
    pub axis: Option<ContourReport>,
    pub li: Option<ContourReport>,
    pub ma: Option<ContourReport>,
    pub imt_profile_um: Vec<f64>,
    pub imt_mean_um: Option<f64>,
    pub diagnostics: Option<FarWallDiagnostics>,
    pub provenance: Provenance,
}

impl SegmentationResult {
    pub fn is_success(&self) -> bool {
        self.status == RunStatus::Segmented
    }

    pub fn li_contour(&self) -> Option<Contour> {
        self.li.as_ref().and_then(|c| c.contour().ok())
    }

    pub fn ma_contour(&self) -> Option<Contour> {
        self.ma.as_ref().and_then(|c| c.contour().ok())
    }

    /// Pretty JSON with a trailing newline; identical inputs give identical bytes.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("result serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

/// Intermediate maps of one stage, kept for debug export.
#[derive(Debug, Clone)]
pub struct StageMaps {
    pub maps: FusionMaps,
    pub segmentation: SegmentationMap,
}

#[derive(Debug, Clone, Default)]
pub struct DebugMaps {
    pub farwall: Option<StageMaps>,
    pub imc: Option<StageMaps>,
}

/// Builds a manual axis over the ROI from operator control points (native coordinates).
pub fn manual_axis_from_points(points: &[(f64, f64)], roi: RegionOfInterest) -> Result<Contour> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let span = integer_span(&pts)?;
    if *span.start() > roi.x_left || *span.end() < roi.x_right {
        return Err(invalid(format!(
            "axis control points cover columns [{}, {}] but the ROI is [{}, {}]",
            span.start(),
            span.end(),
            roi.x_left,
            roi.x_right
        )));
    }
    pchip_interpolate(&pts, roi.x_left..=roi.x_right)
}

#[derive(Debug, Clone, Default)]
pub struct Pipeline {
    pub config: PipelineConfig,
}

struct Fused {
    maps: FusionMaps,
    seg: SegmentationMap,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Self {
        Self { config }
    }

    fn check_roi(&self, img: &UltrasoundImage, roi: RegionOfInterest) -> Result<()> {
        roi.check_within(img.width())?;
        if roi.width() < PATCH_WIDTH {
            return Err(Error::RoiTooNarrow {
                width: roi.width(),
                min: PATCH_WIDTH,
            });
        }
        Ok(())
    }

    fn fuse(
        &self,
        work: &UltrasoundImage,
        specs: &[crate::tiling::PatchSpec],
        predictor: &dyn PatchPredictor,
        frame: &Frame,
    ) -> Result<Fused> {
        let batch = extract(work, specs)?;
        let predictions = predict_batch(predictor, &batch, frame)?;
        let maps = accumulate(&batch.specs, &predictions, (work.height(), work.width()))?;
        let seg = largest_component(&average_binarize(&maps, self.config.threshold)?);
        Ok(Fused { maps, seg })
    }

    pub fn detect_far_wall(
        &self,
        img: &UltrasoundImage,
        roi: RegionOfInterest,
        predictor: &dyn PatchPredictor,
    ) -> Result<FarWallResult> {
        self.detect_far_wall_with_maps(img, roi, predictor).map(|(r, _)| r)
    }

    pub fn detect_far_wall_with_maps(
        &self,
        img: &UltrasoundImage,
        roi: RegionOfInterest,
        predictor: &dyn PatchPredictor,
    ) -> Result<(FarWallResult, StageMaps)> {
        self.check_roi(img, roi)?;
        let height = self.config.farwall_height;
        let normalized = resample_height(img, height)?;
        let work = crop_roi(&normalized, roi)?.image;
        let rows = RowMap::new(img.height(), height);
        let frame = Frame {
            x_offset: roi.x_left,
            rows,
        };
        let specs = tile_farwall_inference(work.width(), height, self.config.stride)?;
        let fused = self.fuse(&work, &specs, predictor, &frame)?;
        let stage_maps = StageMaps {
            maps: fused.maps.clone(),
            segmentation: fused.seg.clone(),
        };

        let roi_w = work.width();
        let area = fused.seg.area();
        let mut diag = FarWallDiagnostics {
            region_area_fraction: area as f64 / (roi_w * height) as f64,
            ..Default::default()
        };
        let failed = |mut diag: FarWallDiagnostics, reason: String| FarWallResult {
            status: FarWallStatus::Failed,
            axis: None,
            raw_axis: None,
            diagnostics: Some({
                diag.failure_reasons.push(reason);
                diag
            }),
            predictor: Some(predictor.id()),
        };
        let raw = match upper_boundary(&fused.seg, self.config.max_gap) {
            Ok(raw) => raw,
            Err(Error::NoRegion) => return Ok((failed(diag, "empty segmentation".into()), stage_maps)),
            Err(e) => return Err(e),
        };
        diag.column_coverage = raw.len() as f64 / roi_w as f64;
        if raw.len() < 4 {
            return Ok((failed(diag, "boundary shorter than 4 columns".into()), stage_maps));
        }
        let fit = CubicFit::fit(&raw)?;
        let axis = fit.eval_span(0..=roi_w - 1);
        diag.axis_fit_rms_px = {
            let ss: f64 = raw.iter().map(|(x, y)| (y - fit.eval(x as f64)).powi(2)).sum();
            (ss / raw.len() as f64).sqrt()
        };
        diag.axis_curvature = {
            let [_, _, c2, c3] = fit.monomial_coefficients();
            // y'' = 2 c2 + 6 c3 x is linear: extreme at an end
            [0.0, (roi_w - 1) as f64]
                .iter()
                .map(|&x| (2.0 * c2 + 6.0 * c3 * x).abs())
                .fold(0.0, f64::max)
        };

        let t = &self.config.failure;
        if diag.region_area_fraction < t.min_area_fraction {
            diag.failure_reasons.push(format!(
                "segmented area {:.3} of ROI below {}",
                diag.region_area_fraction, t.min_area_fraction
            ));
        }
        if diag.column_coverage < t.min_column_coverage {
            diag.failure_reasons.push(format!(
                "boundary covers {:.3} of ROI columns, below {}",
                diag.column_coverage, t.min_column_coverage
            ));
        }
        if diag.axis_fit_rms_px > t.max_axis_rms_px {
            diag.failure_reasons.push(format!(
                "boundary deviates {:.1} px RMS from its cubic fit, above {}",
                diag.axis_fit_rms_px, t.max_axis_rms_px
            ));
        }
        let status = if diag.failure_reasons.is_empty() {
            FarWallStatus::Ok
        } else {
            FarWallStatus::Failed
        };
        let to_native = |c: &Contour| roi.map_to_full(&rows.inverse_contour(c));
        Ok((
            FarWallResult {
                status,
                axis: Some(to_native(&axis)),
                raw_axis: Some(to_native(&raw)),
                diagnostics: Some(diag),
                predictor: Some(predictor.id()),
            },
            stage_maps,
        ))
    }

    /// Stage 2 from a native-coordinate axis spanning the ROI.
    pub fn segment_imc_with_maps(
        &self,
        img: &UltrasoundImage,
        roi: RegionOfInterest,
        axis: &Contour,
        predictor: &dyn PatchPredictor,
    ) -> Result<(Contour, Contour, StageMaps)> {
        self.check_roi(img, roi)?;
        let axis = axis.restrict(roi.x_left..=roi.x_right).map_err(|_| {
            invalid(format!(
                "axis spans [{}, {}] but the ROI is [{}, {}]",
                axis.x_start(),
                axis.x_end(),
                roi.x_left,
                roi.x_right
            ))
        })?;
        let fine = resample_pitch(img, self.config.imc_pitch_um)?;
        let work = crop_roi(&fine, roi)?.image;
        let rows = RowMap::new(img.height(), fine.height());
        let frame = Frame {
            x_offset: roi.x_left,
            rows,
        };
        let axis_frame = rows.forward_contour(&roi.map_to_roi(&axis)?);
        let specs = tile_along_axis(
            &axis_frame,
            work.height(),
            TilingMode::Inference {
                stride: self.config.stride,
            },
        )?;
        let fused = self.fuse(&work, &specs, predictor, &frame)?;
        let mut li = upper_boundary(&fused.seg, self.config.max_gap)?;
        let mut ma = lower_boundary(&fused.seg, self.config.max_gap)?;
        if self.config.smooth_imc_contours && li.len() >= 4 {
            li = polyfit_cubic(&li)?;
            ma = polyfit_cubic(&ma)?;
            ma = Contour::new(
                ma.x_start(),
                ma.iter().map(|(x, y)| y.max(li.y_at(x).unwrap())).collect(),
            )?;
        }
        let to_native = |c: &Contour| roi.map_to_full(&rows.inverse_contour(c));
        Ok((
            to_native(&li),
            to_native(&ma),
            StageMaps {
                maps: fused.maps,
                segmentation: fused.seg,
            },
        ))
    }

    pub fn segment_imc(
        &self,
        img: &UltrasoundImage,
        roi: RegionOfInterest,
        axis: &Contour,
        predictor: &dyn PatchPredictor,
    ) -> Result<(Contour, Contour)> {
        self.segment_imc_with_maps(img, roi, axis, predictor)
            .map(|(li, ma, _)| (li, ma))
    }

    fn provenance(&self, farwall: &FarWallResult, imc: Option<&dyn PatchPredictor>) -> Provenance {
        Provenance {
            predictor_fw: farwall.predictor.clone(),
            predictor_imc: imc.map(|p| p.id()),
            config_hash: self.config.hash(),
            stride: self.config.stride,
            manual_correction: farwall.status == FarWallStatus::ManuallyCorrected,
            config: self.config.clone(),
        }
    }

    /// Stage 2 after a stored far-wall result; stage failures become result statuses.
    pub fn finish(
        &self,
        img: &UltrasoundImage,
        image_id: &str,
        roi: RegionOfInterest,
        farwall: &FarWallResult,
        imc: &dyn PatchPredictor,
        debug: Option<&mut DebugMaps>,
    ) -> Result<SegmentationResult> {
        let pitch = img.pitch_vertical_um();
        let mut result = SegmentationResult {
            image_id: image_id.to_string(),
            roi,
            status: RunStatus::FarwallFailed,
            farwall_status: farwall.status,
            message: None,
            pitch_vertical_um: pitch,
            pitch_horizontal_um: img.pitch_horizontal_um(),
            axis: farwall.axis.as_ref().map(|a| ContourReport::new(a, pitch)),
            li: None,
            ma: None,
            imt_profile_um: Vec::new(),
            imt_mean_um: None,
            diagnostics: farwall.diagnostics.clone(),
            provenance: self.provenance(farwall, None),
        };
        let Some(axis) = farwall.usable_axis() else {
            result.message = Some("far-wall detection failed; redraw the median axis".into());
            return Ok(result);
        };
        result.provenance.predictor_imc = Some(imc.id());
        match self.segment_imc_with_maps(img, roi, axis, imc) {
            Ok((li, ma, maps)) => {
                if let Some(d) = debug {
                    d.imc = Some(maps);
                }
                let profile: Vec<f64> = li
                    .iter()
                    .map(|(x, y)| (ma.y_at(x).unwrap() - y) * pitch)
                    .collect();
                result.imt_mean_um = Some(profile.iter().sum::<f64>() / profile.len() as f64);
                result.imt_profile_um = profile;
                result.li = Some(ContourReport::new(&li, pitch));
                result.ma = Some(ContourReport::new(&ma, pitch));
                result.status = RunStatus::Segmented;
            }
            Err(e @ (Error::NoRegion | Error::PatchUnplaceable { .. })) => {
                result.status = RunStatus::ImcFailed;
                result.message = Some(e.to_string());
            }
            Err(e) => return Err(e),
        }
        Ok(result)
    }

    /// Full run. A manual axis skips stage 1 and marks the result as corrected.
    pub fn run(
        &self,
        img: &UltrasoundImage,
        image_id: &str,
        roi: RegionOfInterest,
        fw: &dyn PatchPredictor,
        imc: &dyn PatchPredictor,
        manual_axis: Option<&Contour>,
    ) -> Result<SegmentationResult> {
        self.run_with_debug(img, image_id, roi, fw, imc, manual_axis, None)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn run_with_debug(
        &self,
        img: &UltrasoundImage,
        image_id: &str,
        roi: RegionOfInterest,
        fw: &dyn PatchPredictor,
        imc: &dyn PatchPredictor,
        manual_axis: Option<&Contour>,
        mut debug: Option<&mut DebugMaps>,
    ) -> Result<SegmentationResult> {
        self.check_roi(img, roi)?;
        let farwall = match manual_axis {
            Some(axis) => {
                let axis = axis.restrict(roi.x_left..=roi.x_right).map_err(|_| {
                    invalid("manual axis must span the whole ROI".to_string())
                })?;
                FarWallResult::manual(axis)
            }
            None => {
                let (result, maps) = self.detect_far_wall_with_maps(img, roi, fw)?;
                if let Some(d) = debug.as_deref_mut() {
                    d.farwall = Some(maps);
                }
                result
            }
        };
        self.finish(img, image_id, roi, &farwall, imc, debug)
    }
}
