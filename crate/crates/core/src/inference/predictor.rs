use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{median_axis, Contour};
use crate::imaging::RowMap;
use crate::inference::unet::{DilatedUnet, DilatedUnetConfig};
use crate::inference::weights::ModelWeights;
use crate::tiling::{PatchBatch, PatchSpec};

/// Where a stage's working image sits relative to the native image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    /// Native column of the working image's column 0 (the ROI left border).
    pub x_offset: usize,
    /// Native rows to working rows.
    pub rows: RowMap,
}

/// One patch handed to a predictor.
#[derive(Debug, Clone, Copy)]
pub struct PatchInput<'a> {
    pub spec: PatchSpec,
    pub pixels: &'a [f32],
    pub frame: &'a Frame,
}

/// Per-pixel probabilities over a patch, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl ProbabilityMap {
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.width + x]
    }
}

pub trait PatchPredictor: Send + Sync {
    /// Provenance label recorded in results.
    fn id(&self) -> String;

    fn predict(&self, patch: &PatchInput<'_>) -> Result<ProbabilityMap>;
}

fn check_output(spec: &PatchSpec, map: &ProbabilityMap) -> Result<()> {
    if (map.height, map.width) != (spec.height, spec.width) || map.values.len() != spec.len() {
        return Err(Error::InvalidPrediction(format!(
            "expected {}x{}, got {}x{} with {} values",
            spec.height,
            spec.width,
            map.height,
            map.width,
            map.values.len()
        )));
    }
    if let Some(v) = map.values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidPrediction(format!("probability {v} outside [0, 1]")));
    }
    Ok(())
}

/// Runs the predictor over every patch; output order equals patch order.
pub fn predict_batch(
    predictor: &dyn PatchPredictor,
    batch: &PatchBatch,
    frame: &Frame,
) -> Result<Vec<ProbabilityMap>> {
    batch
        .specs
        .par_iter()
        .zip(batch.payloads.par_iter())
        .map(|(spec, pixels)| {
            let input = PatchInput {
                spec: *spec,
                pixels,
                frame,
            };
            let map = predictor.predict(&input)?;
            check_output(spec, &map)?;
            Ok(map)
        })
        .collect()
}

/// Returns the same probability everywhere.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPredictor(pub f32);

impl PatchPredictor for ConstantPredictor {
    fn id(&self) -> String {
        format!("constant:{}", self.0)
    }

    fn predict(&self, patch: &PatchInput<'_>) -> Result<ProbabilityMap> {
        Ok(ProbabilityMap {
            height: patch.spec.height,
            width: patch.spec.width,
            values: vec![self.0; patch.spec.len()],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum OracleTarget {
    BelowAxis,
    BetweenInterfaces,
}

/// Returns the rasterised ground truth restricted to the patch.
///
/// Ground truth is given in native image coordinates and mapped into the
/// working frame of each patch. Columns without ground truth predict 0.
#[derive(Debug, Clone)]
pub struct OraclePredictor {
    target: OracleTarget,
    upper: Contour,
    lower: Contour,
}

impl OraclePredictor {
    /// Far-wall oracle: 1 strictly below the median axis of `li` and `ma`.
    pub fn far_wall(li: &Contour, ma: &Contour) -> Result<Self> {
        let axis = median_axis(li, ma)?;
        Ok(Self {
            target: OracleTarget::BelowAxis,
            upper: axis.clone(),
            lower: axis,
        })
    }

    /// Intima-media oracle: 1 between `li` and `ma` inclusive.
    pub fn imc(li: &Contour, ma: &Contour) -> Result<Self> {
        let span = li.intersection(ma).ok_or(Error::EmptyIntersection)?;
        Ok(Self {
            target: OracleTarget::BetweenInterfaces,
            upper: li.restrict(span.clone())?,
            lower: ma.restrict(span)?,
        })
    }
}

impl PatchPredictor for OraclePredictor {
    fn id(&self) -> String {
        match self.target {
            OracleTarget::BelowAxis => "oracle:far-wall".into(),
            OracleTarget::BetweenInterfaces => "oracle:imc".into(),
        }
    }

    fn predict(&self, patch: &PatchInput<'_>) -> Result<ProbabilityMap> {
        let s = patch.spec;
        let mut values = vec![0.0f32; s.len()];
        for c in 0..s.width {
            let native_x = patch.frame.x_offset + s.origin_x + c;
            let (Some(top), Some(bottom)) = (self.upper.y_at(native_x), self.lower.y_at(native_x)) else {
                continue;
            };
            let top = patch.frame.rows.forward(top);
            let bottom = patch.frame.rows.forward(bottom);
            for r in 0..s.height {
                let y = (s.origin_y + r) as f64;
                let on = match self.target {
                    OracleTarget::BelowAxis => y > top,
                    OracleTarget::BetweenInterfaces => top <= y && y <= bottom,
                };
                if on {
                    values[r * s.width + c] = 1.0;
                }
            }
        }
        Ok(ProbabilityMap {
            height: s.height,
            width: s.width,
            values,
        })
    }
}

/// The dilated U-net behind the predictor interface.
#[derive(Debug, Clone)]
pub struct NetworkPredictor {
    id: String,
    net: Arc<DilatedUnet>,
}

impl NetworkPredictor {
    pub fn new(cfg: DilatedUnetConfig, weights: &ModelWeights) -> Result<Self> {
        let crc = crc32fast::hash(&weights.to_bytes());
        let id = format!("dilated-unet:{}:{crc:08x}", cfg.summary());
        Ok(Self {
            id,
            net: Arc::new(DilatedUnet::new(cfg, weights)?),
        })
    }

    pub fn config(&self) -> &DilatedUnetConfig {
        self.net.config()
    }
}

impl PatchPredictor for NetworkPredictor {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn predict(&self, patch: &PatchInput<'_>) -> Result<ProbabilityMap> {
        let s = patch.spec;
        let values = self.net.forward(patch.pixels, s.height, s.width)?;
        Ok(ProbabilityMap {
            height: s.height,
            width: s.width,
            values,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::UltrasoundImage;
    use crate::tiling::extract;

    fn frame() -> Frame {
        Frame {
            x_offset: 10,
            rows: RowMap::new(20, 20),
        }
    }

    #[test]
    fn oracle_far_wall_marks_below_axis() {
        let li = Contour::new(0, vec![4.0; 40]).unwrap();
        let ma = Contour::new(0, vec![8.0; 40]).unwrap();
        let oracle = OraclePredictor::far_wall(&li, &ma).unwrap();
        let spec = PatchSpec { origin_x: 2, origin_y: 0, width: 3, height: 20 };
        let pixels = vec![0.0; 60];
        let f = frame();
        let out = oracle.predict(&PatchInput { spec, pixels: &pixels, frame: &f }).unwrap();
        for r in 0..20 {
            assert_eq!(out.get(r, 1), if r > 6 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn oracle_imc_maps_rows_and_skips_unannotated_columns() {
        let li = Contour::new(12, vec![4.0; 2]).unwrap();
        let ma = Contour::new(12, vec![8.0; 2]).unwrap();
        let oracle = OraclePredictor::imc(&li, &ma).unwrap();
        // working frame has twice the rows of the native frame (minus one)
        let f = Frame { x_offset: 10, rows: RowMap::new(11, 21) };
        let spec = PatchSpec { origin_x: 0, origin_y: 0, width: 4, height: 21 };
        let pixels = vec![0.0; 84];
        let out = oracle.predict(&PatchInput { spec, pixels: &pixels, frame: &f }).unwrap();
        let col: Vec<usize> = (0..21).filter(|&r| out.get(r, 2) == 1.0).collect();
        assert_eq!(col, (8..=16).collect::<Vec<_>>());
        assert!((0..21).all(|r| out.get(r, 0) == 0.0 && out.get(r, 1) == 0.0));
    }

    struct Broken;
    impl PatchPredictor for Broken {
        fn id(&self) -> String {
            "broken".into()
        }
        fn predict(&self, patch: &PatchInput<'_>) -> Result<ProbabilityMap> {
            Ok(ProbabilityMap { height: patch.spec.height, width: patch.spec.width, values: vec![1.5; patch.spec.len()] })
        }
    }

    #[test]
    fn batch_prediction_is_validated_and_ordered() {
        let img = UltrasoundImage::from_fn(8, 8, 10.0, 10.0, |_, _| 0.2).unwrap();
        let specs = [
            PatchSpec { origin_x: 0, origin_y: 0, width: 4, height: 8 },
            PatchSpec { origin_x: 4, origin_y: 0, width: 4, height: 8 },
        ];
        let batch = extract(&img, &specs).unwrap();
        let f = frame();
        let out = predict_batch(&ConstantPredictor(0.25), &batch, &f).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|m| m.values.iter().all(|&v| v == 0.25)));
        assert!(matches!(predict_batch(&Broken, &batch, &f), Err(Error::InvalidPrediction(_))));
    }
}
