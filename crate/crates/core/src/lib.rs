//! Carotid intima-media complex segmentation in B-mode ultrasound.
//!
//! A far-wall detector locates the median axis of the far wall on a
//! height-normalised image; an intima-media segmenter then works on patches
//! stacked along that axis at a fixed vertical pitch and yields the
//! lumen-intima (LI) and media-adventitia (MA) interfaces.

pub mod error;
pub mod evalkit;
pub mod fusion;
pub mod geometry;
pub mod imaging;
pub mod inference;
pub mod phantom;
pub mod pipeline;
pub mod tiling;

pub use error::{Error, Result};
pub use geometry::{AnnotationSet, Contour, Interface, Mask};
pub use imaging::{RegionOfInterest, UltrasoundImage};
pub use inference::{
    ConstantPredictor, DilatedUnetConfig, ModelWeights, NetworkPredictor, OraclePredictor, PatchPredictor,
};
pub use pipeline::{FarWallResult, FarWallStatus, Pipeline, PipelineConfig, RunStatus, SegmentationResult};
