use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use carosegd_core::inference::{DilatedUnetConfig, ModelWeights, NetworkPredictor};
use carosegd_core::{ConstantPredictor, OraclePredictor, PatchPredictor};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, GatewayError, Result};
use crate::store::WorkItem;

/// Which predictor backs both stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PredictorKind {
    /// The dilated U-net with weights from disk.
    Network,
    /// Ground truth from an expert's annotations.
    Oracle,
    Constant(f32),
}

impl FromStr for PredictorKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "network" => Ok(Self::Network),
            "oracle" => Ok(Self::Oracle),
            _ => {
                let v = s
                    .strip_prefix("constant:")
                    .ok_or_else(|| format!("unknown predictor `{s}` (network, oracle or constant:<p>)"))?;
                let p: f32 = v.parse().map_err(|_| format!("`{v}` is not a probability"))?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(format!("constant probability {p} outside [0, 1]"));
                }
                Ok(Self::Constant(p))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct PredictorOptions {
    pub kind: PredictorKind,
    pub weights_fw: Option<PathBuf>,
    pub weights_imc: Option<PathBuf>,
    pub unet_config: Option<PathBuf>,
    pub oracle_expert: String,
}

impl Default for PredictorOptions {
    fn default() -> Self {
        Self {
            kind: PredictorKind::Network,
            weights_fw: None,
            weights_imc: None,
            unet_config: None,
            oracle_expert: "A1".into(),
        }
    }
}

pub type SharedPredictor = Arc<dyn PatchPredictor>;

/// Predictors built once at start-up; oracle predictors are built per item.
#[derive(Clone)]
pub struct PredictorFactory {
    kind: PredictorKind,
    network: Option<(SharedPredictor, SharedPredictor)>,
    oracle_expert: String,
}

pub fn load_unet_config(path: Option<&Path>) -> Result<DilatedUnetConfig> {
    let Some(path) = path else {
        return Ok(DilatedUnetConfig::default());
    };
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let cfg: DilatedUnetConfig = serde_json::from_str(&text)
        .map_err(|e| GatewayError::Invalid(format!("bad network config {}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

fn load_network(path: Option<&Path>, flag: &str, cfg: &DilatedUnetConfig) -> Result<SharedPredictor> {
    let path = path.ok_or_else(|| GatewayError::Invalid(format!("missing weights: {flag} is required")))?;
    if !path.is_file() {
        return Err(GatewayError::Invalid(format!("missing weights: {} does not exist", path.display())));
    }
    let weights = ModelWeights::load(path)?;
    Ok(Arc::new(NetworkPredictor::new(cfg.clone(), &weights)?))
}

impl PredictorFactory {
    pub fn new(opts: &PredictorOptions) -> Result<Self> {
        let network = match opts.kind {
            PredictorKind::Network => {
                let cfg = load_unet_config(opts.unet_config.as_deref())?;
                Some((
                    load_network(opts.weights_fw.as_deref(), "--weights-fw", &cfg)?,
                    load_network(opts.weights_imc.as_deref(), "--weights-imc", &cfg)?,
                ))
            }
            _ => None,
        };
        Ok(Self {
            kind: opts.kind,
            network,
            oracle_expert: opts.oracle_expert.clone(),
        })
    }

    pub fn kind(&self) -> PredictorKind {
        self.kind
    }

    /// Far-wall and intima-media predictors for one item.
    pub fn for_item(&self, item: &WorkItem) -> Result<(SharedPredictor, SharedPredictor)> {
        match self.kind {
            PredictorKind::Network => Ok(self.network.clone().expect("loaded in new")),
            PredictorKind::Constant(p) => Ok((Arc::new(ConstantPredictor(p)), Arc::new(ConstantPredictor(p)))),
            PredictorKind::Oracle => {
                let annotations = item.load_annotations(&self.oracle_expert).map_err(|_| {
                    GatewayError::Invalid(format!(
                        "oracle predictor needs `{}` annotations for item `{}`",
                        self.oracle_expert, item.id
                    ))
                })?;
                let li = annotations.contour(carosegd_core::Interface::LumenIntima)?;
                let ma = annotations.contour(carosegd_core::Interface::MediaAdventitia)?;
                Ok((
                    Arc::new(OraclePredictor::far_wall(&li, &ma)?),
                    Arc::new(OraclePredictor::imc(&li, &ma)?),
                ))
            }
        }
    }
}
