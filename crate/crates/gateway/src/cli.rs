use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use carosegd_core::evalkit::make_folds;
use carosegd_core::inference::ModelWeights;
use carosegd_core::phantom::PhantomSpec;
use carosegd_core::pipeline::{DebugMaps, PipelineConfig, RunStatus};
use carosegd_core::{Interface, RegionOfInterest};
use clap::{Args, Parser, Subcommand};

use crate::error::{io_err, GatewayError, Result};
use crate::evaluate::{evaluate, EvaluateOptions, METHOD};
use crate::ingest::ingest;
use crate::predictors::{load_unet_config, PredictorFactory, PredictorKind, PredictorOptions};
use crate::service::{write_debug_maps, Service};
use crate::store::{write_atomic, Store};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 2;
pub const EXIT_FARWALL_FAILED: i32 = 3;
pub const EXIT_IMC_FAILED: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "carosegd", version, about = "Carotid intima-media segmentation in B-mode ultrasound")]
pub struct Cli {
    /// Session store directory (defaults to $CAROSEGD_STORE, then ./carosegd-store).
    #[arg(long, global = true)]
    pub store: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct PredictorArgs {
    /// network, oracle (expert annotations as ground truth) or constant:<p>.
    #[arg(long, default_value = "network", value_parser = parse_kind)]
    pub predictor: PredictorKind,
    #[arg(long)]
    pub weights_fw: Option<PathBuf>,
    #[arg(long)]
    pub weights_imc: Option<PathBuf>,
    /// JSON network architecture; defaults to 4 levels, 16 channels, dilations 1,2,4,8.
    #[arg(long)]
    pub unet_config: Option<PathBuf>,
    /// Expert whose annotations drive the oracle predictor.
    #[arg(long, default_value = "A1")]
    pub oracle_expert: String,
    /// Horizontal inference stride in pixels.
    #[arg(long, default_value_t = carosegd_core::tiling::DEFAULT_INFERENCE_STRIDE)]
    pub stride: usize,
    /// Cubic-smooth LI and MA as well as the far-wall axis.
    #[arg(long)]
    pub smooth_contours: bool,
}

fn parse_kind(s: &str) -> std::result::Result<PredictorKind, String> {
    s.parse()
}

impl PredictorArgs {
    fn options(&self) -> PredictorOptions {
        PredictorOptions {
            kind: self.predictor,
            weights_fw: self.weights_fw.clone(),
            weights_imc: self.weights_imc.clone(),
            unet_config: self.unet_config.clone(),
            oracle_expert: self.oracle_expert.clone(),
        }
    }

    fn config(&self) -> Result<PipelineConfig> {
        if !(1..=carosegd_core::tiling::PATCH_WIDTH).contains(&self.stride) {
            return Err(GatewayError::Invalid(format!("stride must be in 1..=128, got {}", self.stride)));
        }
        Ok(PipelineConfig {
            stride: self.stride,
            smooth_imc_contours: self.smooth_contours,
            ..PipelineConfig::default()
        })
    }

    fn service(&self, store: Store) -> Result<Service> {
        let config = self.config()?;
        Ok(Service::new(store, PredictorFactory::new(&self.options())?, config))
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Register a directory of images, .meta sidecars and <id>_<expert>.csv annotations.
    Ingest { dir: PathBuf },

    /// Segment one ingested image.
    Segment {
        /// Item id (image file stem).
        #[arg(long)]
        image: String,
        /// ROI borders as x_left,x_right (inclusive, native columns).
        #[arg(long, value_parser = parse_roi)]
        roi: RegionOfInterest,
        /// CSV of x,y control points; skips far-wall detection.
        #[arg(long)]
        axis: Option<PathBuf>,
        #[command(flatten)]
        predictors: PredictorArgs,
        /// Directory for the fused prediction, overlay and segmentation maps.
        #[arg(long)]
        debug_maps: Option<PathBuf>,
        /// Also copy the result JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Segment every ingested image and print the evaluation report.
    Batch {
        #[command(flatten)]
        predictors: PredictorArgs,
        /// Items without an ROI use the annotated span of this expert, else the full width.
        #[arg(long, default_value = "A1")]
        roi_from: String,
        #[arg(long, default_value = "A1")]
        reference: String,
        #[arg(long, default_value = "A2")]
        observer: String,
    },

    /// Compare results (or a second expert) with reference annotations.
    Evaluate {
        #[arg(long)]
        results: Option<PathBuf>,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long, default_value = "A1")]
        reference: String,
        /// `method` for pipeline results, or an expert id such as A2.
        #[arg(long, default_value = METHOD)]
        candidate: String,
        /// Second expert for the inter-observer column.
        #[arg(long, default_value = "A2")]
        observer: String,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },

    /// Write a 5-fold train/validation/test plan of the ingested ids as JSON.
    Folds {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Serve the review API over HTTP.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[command(flatten)]
        predictors: PredictorArgs,
    },

    /// Write randomly initialised network weights.
    InitWeights {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        unet_config: Option<PathBuf>,
    },

    /// Write a synthetic phantom image with its .meta and A1 annotations.
    Phantom {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "phantom")]
        id: String,
    },
}

fn parse_roi(s: &str) -> std::result::Result<RegionOfInterest, String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected x_left,x_right, got `{s}`"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("`{v}` is not a column index"));
    RegionOfInterest::new(parse(a)?, parse(b)?).map_err(|e| e.to_string())
}

/// Reads `x,y` rows; a non-numeric first row is taken as a header.
pub fn read_axis_points(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut points = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| GatewayError::Invalid(format!("{}: {e}", path.display())))?;
        if record.len() != 2 {
            return Err(GatewayError::Invalid(format!(
                "{}: row {} should be x,y",
                path.display(),
                i + 1
            )));
        }
        match (record[0].parse::<f64>(), record[1].parse::<f64>()) {
            (Ok(x), Ok(y)) => points.push((x, y)),
            _ if i == 0 => continue,
            _ => {
                return Err(GatewayError::Invalid(format!(
                    "{}: row {} is not numeric",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    Ok(points)
}

fn report_error(e: &GatewayError) -> i32 {
    eprintln!("error: {e}");
    EXIT_ERROR
}

pub fn run(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => report_error(&e),
    }
}

fn status_code(status: RunStatus) -> i32 {
    match status {
        RunStatus::Segmented => EXIT_OK,
        RunStatus::FarwallFailed => EXIT_FARWALL_FAILED,
        RunStatus::ImcFailed => EXIT_IMC_FAILED,
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Ingest { dir } => {
            let store = Store::resolve(cli.store)?;
            let report = ingest(&dir, &store)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            println!("{}", serde_json::to_string_pretty(&report.catalog).expect("serializes"));
            Ok(EXIT_OK)
        }
        Command::Segment {
            image,
            roi,
            axis,
            predictors,
            debug_maps,
            out,
        } => {
            let store = Store::resolve(cli.store)?;
            store.item(&image)?;
            let points = axis.as_deref().map(read_axis_points).transpose()?;
            let service = predictors.service(store)?;
            let mut debug = DebugMaps::default();
            let result = service.run(&image, roi, points.as_deref(), debug_maps.as_ref().map(|_| &mut debug))?;
            if let Some(dir) = &debug_maps {
                write_debug_maps(dir, &debug)?;
            }
            let path = service.store().result_path(&image);
            if let Some(out) = &out {
                write_atomic(out, result.to_json().as_bytes())?;
            }
            match result.status {
                RunStatus::Segmented => eprintln!(
                    "{image}: segmented, mean IMT {:.1} µm -> {}",
                    result.imt_mean_um.unwrap_or(f64::NAN),
                    path.display()
                ),
                _ => eprintln!(
                    "{image}: {} -> {}",
                    result.message.as_deref().unwrap_or("failed"),
                    path.display()
                ),
            }
            Ok(status_code(result.status))
        }
        Command::Batch {
            predictors,
            roi_from,
            reference,
            observer,
        } => {
            let store = Store::resolve(cli.store)?;
            let service = predictors.service(store.clone())?;
            let items = store.items()?;
            if items.is_empty() {
                return Err(GatewayError::Invalid("the store holds no items; run ingest first".into()));
            }
            for item in &items {
                let roi = match item.roi {
                    Some(r) => r,
                    None => annotated_roi(item, &roi_from)?,
                };
                match service.run(&item.id, roi, None, None) {
                    Ok(r) => eprintln!("{}: {:?}", item.id, r.status),
                    Err(e) => eprintln!("{}: error: {e}", item.id),
                }
            }
            let catalog = store.catalog()?.ok_or_else(|| GatewayError::Invalid("no catalog".into()))?;
            let evaluation = evaluate(&EvaluateOptions {
                results: Some(store.root().join("results")),
                annotations: catalog.source_dir,
                reference,
                candidate: METHOD.into(),
                observer: Some(observer),
            })?;
            for w in &evaluation.warnings {
                eprintln!("warning: {w}");
            }
            print!("{}", evaluation.report.to_text());
            Ok(EXIT_OK)
        }
        Command::Evaluate {
            results,
            annotations,
            reference,
            candidate,
            observer,
            csv,
        } => {
            let evaluation = evaluate(&EvaluateOptions {
                results,
                annotations,
                reference,
                candidate,
                observer: Some(observer),
            })?;
            for w in &evaluation.warnings {
                eprintln!("warning: {w}");
            }
            print!("{}", evaluation.report.to_text());
            if let Some(path) = csv {
                write_atomic(&path, evaluation.report.to_csv().as_bytes())?;
            }
            Ok(EXIT_OK)
        }
        Command::Folds { seed, out } => {
            let store = Store::resolve(cli.store)?;
            let ids: Vec<String> = store.items()?.into_iter().map(|i| i.id).collect();
            let plan = make_folds(&ids, seed)?;
            let json = serde_json::to_string_pretty(&plan).expect("serializes") + "\n";
            match out {
                Some(path) => write_atomic(&path, json.as_bytes())?,
                None => print!("{json}"),
            }
            Ok(EXIT_OK)
        }
        Command::Serve {
            port,
            host,
            predictors,
        } => {
            let store = Store::resolve(cli.store)?;
            let service = Arc::new(predictors.service(store)?);
            let runtime = tokio::runtime::Runtime::new()
                .map_err(|e| GatewayError::Invalid(format!("cannot start runtime: {e}")))?;
            runtime
                .block_on(crate::http::serve(service, &host, port))
                .map_err(|e| GatewayError::Invalid(format!("server error: {e}")))?;
            Ok(EXIT_OK)
        }
        Command::InitWeights {
            out,
            seed,
            unet_config,
        } => {
            let cfg = load_unet_config(unet_config.as_deref())?;
            ModelWeights::random(&cfg, seed).save(&out)?;
            eprintln!("wrote {} weights to {}", cfg.summary(), out.display());
            Ok(EXIT_OK)
        }
        Command::Phantom { out, id } => {
            crate::store::check_id(&id)?;
            fs::create_dir_all(&out).map_err(io_err(&out))?;
            let phantom = PhantomSpec::default().build()?;
            let write = |name: String, bytes: &[u8]| write_atomic(&out.join(name), bytes);
            write(format!("{id}.png"), &phantom.image.to_png_bytes()?)?;
            write(
                format!("{id}.meta"),
                carosegd_core::imaging::PitchMeta {
                    pitch_vertical_um: phantom.spec.pitch_um,
                    pitch_horizontal_um: phantom.spec.pitch_um,
                }
                .to_text()
                .as_bytes(),
            )?;
            write(format!("{id}_A1.csv"), phantom.annotations("A1", 16).to_csv().as_bytes())?;
            let roi = phantom.default_roi();
            eprintln!("wrote {id} to {} (suggested ROI {},{})", out.display(), roi.x_left, roi.x_right);
            Ok(EXIT_OK)
        }
    }
}

/// Columns annotated on both interfaces by `expert`, else the full image width.
fn annotated_roi(item: &crate::store::WorkItem, expert: &str) -> Result<RegionOfInterest> {
    let width = item.load_image()?.width();
    let from_annotations = item.load_annotations(expert).ok().and_then(|a| {
        let li = a.contour(Interface::LumenIntima).ok()?;
        let ma = a.contour(Interface::MediaAdventitia).ok()?;
        let span = li.intersection(&ma)?;
        RegionOfInterest::new(*span.start(), (*span.end()).min(width - 1)).ok()
    });
    match from_annotations {
        Some(r) => Ok(r),
        None => Ok(RegionOfInterest::full(width)?),
    }
}
