//! Placement of the 128-column patches fed to the predictors.
//!
//! Far-wall patches span the full (height-normalised) image and slide
//! horizontally across the ROI. Intima-media patches are 512 rows tall and
//! are stacked vertically around the median axis at every horizontal step.
//! Whenever the stride does not land on the right border a final patch flush
//! with it is appended, so no patch is ever padded.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{Contour, Mask};
use crate::imaging::UltrasoundImage;

pub const PATCH_WIDTH: usize = 128;
pub const IMC_PATCH_HEIGHT: usize = 512;
/// Vertical step between stacked intima-media patches.
pub const VERTICAL_STEP: usize = 128;
/// Columns shared by consecutive training patches.
pub const TRAINING_OVERLAP: usize = 100;
pub const DEFAULT_INFERENCE_STRIDE: usize = 32;

/// Top-left corner and size of a patch in its parent frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatchSpec {
    pub origin_x: usize,
    pub origin_y: usize,
    pub width: usize,
    pub height: usize,
}

impl PatchSpec {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.origin_y..self.origin_y + self.height).contains(&y)
            && (self.origin_x..self.origin_x + self.width).contains(&x)
    }

    pub fn fits(&self, height: usize, width: usize) -> bool {
        self.origin_y + self.height <= height && self.origin_x + self.width <= width
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Horizontal tiling used for a stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum TilingMode {
    /// Stride 28, i.e. 100 overlapping columns; three patches per step.
    Training,
    /// Configurable stride; vertical stack covers the axis excursion.
    Inference { stride: usize },
}

impl TilingMode {
    pub fn stride(&self) -> usize {
        match *self {
            TilingMode::Training => PATCH_WIDTH - TRAINING_OVERLAP,
            TilingMode::Inference { stride } => stride,
        }
    }
}

/// Left borders of the horizontal patches covering `roi_width` columns.
pub fn horizontal_origins(roi_width: usize, stride: usize) -> Result<Vec<usize>> {
    if roi_width < PATCH_WIDTH {
        return Err(Error::RoiTooNarrow {
            width: roi_width,
            min: PATCH_WIDTH,
        });
    }
    if !(1..=PATCH_WIDTH).contains(&stride) {
        return Err(invalid(format!("stride must be in 1..=128, got {stride}")));
    }
    let last = roi_width - PATCH_WIDTH;
    let mut origins: Vec<usize> = (0..=last).step_by(stride).collect();
    if origins.last() != Some(&last) {
        origins.push(last);
    }
    Ok(origins)
}

fn full_height(origins: Vec<usize>, image_height: usize) -> Vec<PatchSpec> {
    origins
        .into_iter()
        .map(|origin_x| PatchSpec {
            origin_x,
            origin_y: 0,
            width: PATCH_WIDTH,
            height: image_height,
        })
        .collect()
}

pub fn tile_farwall_inference(roi_width: usize, image_height: usize, stride: usize) -> Result<Vec<PatchSpec>> {
    Ok(full_height(horizontal_origins(roi_width, stride)?, image_height))
}

pub fn tile_farwall_training(roi_width: usize, image_height: usize) -> Result<Vec<PatchSpec>> {
    tile_farwall(roi_width, image_height, TilingMode::Training)
}

pub fn tile_farwall(roi_width: usize, image_height: usize, mode: TilingMode) -> Result<Vec<PatchSpec>> {
    tile_farwall_inference(roi_width, image_height, mode.stride())
}

/// Patch centers stacked around the axis over one horizontal step.
fn vertical_centers(segment: &[f64], mode: TilingMode) -> Vec<f64> {
    match mode {
        TilingMode::Training => {
            let mean = segment.iter().sum::<f64>() / segment.len() as f64;
            let step = VERTICAL_STEP as f64;
            vec![mean, mean + step, mean - step]
        }
        TilingMode::Inference { .. } => {
            let lo = segment.iter().copied().fold(f64::INFINITY, f64::min) - VERTICAL_STEP as f64;
            let hi = segment.iter().copied().fold(f64::NEG_INFINITY, f64::max) + VERTICAL_STEP as f64;
            let count = ((hi - lo) / VERTICAL_STEP as f64).ceil() as usize + 1;
            let spacing = (hi - lo) / (count - 1) as f64;
            (0..count).map(|k| lo + spacing * k as f64).collect()
        }
    }
}

/// Stacks 128x512 patches along the median axis.
///
/// `axis` is in the patch frame and must start at column 0; its length is
/// the ROI width. Patches that would leave the image are shifted back inside.
pub fn tile_along_axis(axis: &Contour, image_height: usize, mode: TilingMode) -> Result<Vec<PatchSpec>> {
    if axis.x_start() != 0 {
        return Err(invalid("axis must start at ROI column 0"));
    }
    let origins = horizontal_origins(axis.len(), mode.stride())?;
    let mut specs = Vec::new();
    for origin_x in origins {
        let segment = &axis.ordinates()[origin_x..origin_x + PATCH_WIDTH];
        if image_height < IMC_PATCH_HEIGHT {
            return Err(Error::PatchUnplaceable {
                x: origin_x,
                reason: format!("image has {image_height} rows, fewer than {IMC_PATCH_HEIGHT}"),
            });
        }
        let mean = segment.iter().sum::<f64>() / segment.len() as f64;
        if !(mean >= 0.0 && mean <= (image_height - 1) as f64) {
            return Err(Error::PatchUnplaceable {
                x: origin_x,
                reason: format!("mean axis row {mean:.1} lies outside the image"),
            });
        }
        let max_origin = (image_height - IMC_PATCH_HEIGHT) as f64;
        let start = specs.len();
        for center in vertical_centers(segment, mode) {
            let origin_y = (center.round() - (IMC_PATCH_HEIGHT / 2) as f64).clamp(0.0, max_origin) as usize;
            let spec = PatchSpec {
                origin_x,
                origin_y,
                width: PATCH_WIDTH,
                height: IMC_PATCH_HEIGHT,
            };
            if !specs[start..].contains(&spec) {
                specs.push(spec);
            }
        }
    }
    Ok(specs)
}

/// Patch payloads (row-major copies) in spec order, with optional targets.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchBatch {
    pub specs: Vec<PatchSpec>,
    pub payloads: Vec<Vec<f32>>,
    pub targets: Option<Vec<Mask>>,
}

impl PatchBatch {
    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }
}

fn check_specs(specs: &[PatchSpec], height: usize, width: usize) -> Result<()> {
    match specs.iter().position(|s| !s.fits(height, width) || s.is_empty()) {
        Some(index) => Err(Error::SpecOutOfBounds { index, height, width }),
        None => Ok(()),
    }
}

pub fn extract(img: &UltrasoundImage, specs: &[PatchSpec]) -> Result<PatchBatch> {
    check_specs(specs, img.height(), img.width())?;
    let width = img.width();
    let pixels = img.pixels();
    let payloads = specs
        .par_iter()
        .map(|s| {
            let mut out = Vec::with_capacity(s.len());
            for y in s.origin_y..s.origin_y + s.height {
                let row = y * width + s.origin_x;
                out.extend_from_slice(&pixels[row..row + s.width]);
            }
            out
        })
        .collect();
    Ok(PatchBatch {
        specs: specs.to_vec(),
        payloads,
        targets: None,
    })
}

/// Extracts image patches together with the matching crops of `mask`.
pub fn extract_training(img: &UltrasoundImage, mask: &Mask, specs: &[PatchSpec]) -> Result<PatchBatch> {
    if mask.shape() != (img.height(), img.width()) {
        return Err(Error::ShapeMismatch {
            context: "training mask".into(),
            expected: vec![img.height(), img.width()],
            found: vec![mask.height(), mask.width()],
        });
    }
    let mut batch = extract(img, specs)?;
    let targets = specs
        .iter()
        .map(|s| Mask::from_fn(s.height, s.width, |y, x| mask.get(s.origin_y + y, s.origin_x + x)))
        .collect();
    batch.targets = Some(targets);
    Ok(batch)
}
