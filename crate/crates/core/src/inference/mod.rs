//! Patch predictors and the native dilated U-net forward pass.
//!
//! Weights are trained elsewhere and loaded from the `CSDW` binary format
//! (see [`weights`]). Two weight-free predictors ship alongside the network
//! so the pipeline can be exercised end to end without a model.

pub mod conv;
pub mod loss;
pub mod predictor;
pub mod tensor;
pub mod unet;
pub mod weights;

pub use conv::{conv2d_dilated, ConvLayer};
pub use loss::{loss_bce_dice, BCE_EPSILON, DICE_SMOOTHING};
pub use predictor::{
    predict_batch, ConstantPredictor, Frame, NetworkPredictor, OraclePredictor, PatchInput,
    PatchPredictor, ProbabilityMap,
};
pub use tensor::Tensor;
pub use unet::{receptive_field, BottleneckMode, DilatedUnet, DilatedUnetConfig, LayerGeometry};
pub use weights::{ModelWeights, NamedTensor};
