mod common;

use std::fs;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use carosegd_core::pipeline::{FarWallResult, FarWallStatus, PipelineConfig};
use carosegd_gateway::http::router;
use carosegd_gateway::predictors::{PredictorFactory, PredictorKind, PredictorOptions};
use carosegd_gateway::{Service, Store};
use common::{code, phantom_dataset, small_phantom, write_item, Cli};
use http_body_util::BodyExt;
use tower::ServiceExt;

struct App {
    router: axum::Router,
    _store: tempfile::TempDir,
    data: tempfile::TempDir,
}

fn app(kind: PredictorKind) -> App {
    let data = tempfile::tempdir().unwrap();
    let store_dir = tempfile::tempdir().unwrap();
    phantom_dataset(data.path());
    for i in 0..3 {
        write_item(data.path(), &format!("extra{i}"), &small_phantom(i), &[("A1", 0.0)]);
    }
    let store = Store::open(store_dir.path()).unwrap();
    carosegd_gateway::ingest::ingest(data.path(), &store).unwrap();
    let predictors = PredictorFactory::new(&PredictorOptions { kind, ..PredictorOptions::default() }).unwrap();
    let service = Arc::new(Service::new(store, predictors, PipelineConfig::default()));
    App { router: router(service), _store: store_dir, data }
}

async fn call(app: &App, method: &str, uri: &str, body: Option<serde_json::Value>) -> (StatusCode, Vec<u8>, String) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.router.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let ctype = resp
        .headers()
        .get("content-type")
        .map(|v| v.to_str().unwrap().to_string())
        .unwrap_or_default();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes, ctype)
}

fn json(bytes: &[u8]) -> serde_json::Value {
    serde_json::from_slice(bytes).unwrap()
}

#[tokio::test]
async fn listing_and_image() {
    let app = app(PredictorKind::Oracle);
    let (status, body, _) = call(&app, "GET", "/items", None).await;
    assert_eq!(status, StatusCode::OK);
    let ids: Vec<String> = json(&body).as_array().unwrap().iter().map(|i| i["id"].as_str().unwrap().to_string()).collect();
    assert_eq!(ids, ["extra0", "extra1", "extra2", "phantom"]);
    let (status, body, ctype) = call(&app, "GET", "/items/phantom/image", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ctype, "image/png");
    assert!(body.starts_with(b"\x89PNG"));
    let (status, body, _) = call(&app, "GET", "/items/ghost/image", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(json(&body)["code"], "not_found");
}

#[tokio::test]
async fn error_statuses() {
    let app = app(PredictorKind::Oracle);
    let roi = |l: usize, r: usize| Some(serde_json::json!({"x_left": l, "x_right": r}));
    let (s, body, _) = call(&app, "PUT", "/items/phantom/roi", roi(300, 200)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(json(&body)["code"], "invalid");
    let (s, _, _) = call(&app, "PUT", "/items/phantom/roi", roi(300, 300)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _, _) = call(&app, "PUT", "/items/phantom/roi", roi(10, 900)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, body, _) = call(&app, "PUT", "/items/phantom/roi", roi(100, 200)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(json(&body)["code"], "roi_too_narrow");
    let (s, _, _) = call(&app, "PUT", "/items/phantom/roi", Some(serde_json::json!({"x_left": "a"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _, _) = call(&app, "PUT", "/items/ghost/roi", roi(0, 300)).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    // state machine
    let (s, _, _) = call(&app, "POST", "/items/phantom/farwall", None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, _, _) = call(&app, "PUT", "/items/phantom/axis", Some(serde_json::json!({"control_points": [[0, 1], [511, 2]]}))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, _, _) = call(&app, "PUT", "/items/phantom/roi", roi(32, 479)).await;
    assert_eq!(s, StatusCode::OK);
    let (s, body, _) = call(&app, "POST", "/items/phantom/segment", None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(json(&body)["code"], "wrong_state");
    let (s, _, _) = call(&app, "GET", "/items/phantom/result", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _, _) = call(&app, "PUT", "/items/phantom/axis", Some(serde_json::json!({"control_points": [[40, 300]]}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _, _) = call(&app, "PUT", "/items/phantom/axis", Some(serde_json::json!({"control_points": [[40, 300], [400, 310]]}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST, "axis must cover the ROI");
}

#[tokio::test]
async fn failed_far_wall_then_manual_axis() {
    let app = app(PredictorKind::Constant(0.0));
    call(&app, "PUT", "/items/phantom/roi", Some(serde_json::json!({"x_left": 32, "x_right": 479}))).await;
    let (s, body, _) = call(&app, "POST", "/items/phantom/farwall", None).await;
    assert_eq!(s, StatusCode::OK);
    let fw: FarWallResult = serde_json::from_slice(&body).unwrap();
    assert_eq!(fw.status, FarWallStatus::Failed);
    let (s, _, _) = call(&app, "POST", "/items/phantom/segment", None).await;
    assert_eq!(s, StatusCode::CONFLICT);

    let points = serde_json::json!({"control_points": [[20.0, 350.0], [150.5, 362.25], [300.0, 340.0], [490.0, 355.0]]});
    let (s, body, _) = call(&app, "PUT", "/items/phantom/axis", Some(points)).await;
    assert_eq!(s, StatusCode::OK);
    let fw: FarWallResult = serde_json::from_slice(&body).unwrap();
    assert_eq!(fw.status, FarWallStatus::ManuallyCorrected);
    let axis = fw.axis.unwrap();
    assert_eq!(axis.span(), 32..=479);
    // integer knots are reproduced exactly
    assert_eq!(axis.y_at(300), Some(340.0));
    let (s, body, _) = call(&app, "POST", "/items/phantom/segment", None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(json(&body)["provenance"]["manual_correction"].as_bool().unwrap());
}

#[tokio::test]
async fn http_result_matches_cli_byte_for_byte() {
    let app = app(PredictorKind::Oracle);
    let roi = serde_json::json!({"x_left": 32, "x_right": 479});
    assert_eq!(call(&app, "PUT", "/items/phantom/roi", Some(roi)).await.0, StatusCode::OK);
    let (s, body, _) = call(&app, "POST", "/items/phantom/farwall", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(json(&body)["status"], "ok");
    let (s, segment_body, ctype) = call(&app, "POST", "/items/phantom/segment", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(ctype, "application/json");
    let (s, http_bytes, _) = call(&app, "GET", "/items/phantom/result", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(segment_body, http_bytes);

    let cli_store = tempfile::tempdir().unwrap();
    let cli = Cli::new(cli_store.path());
    assert_eq!(code(&cli.run(&["ingest", app.data.path().to_str().unwrap()])), 0);
    let out = cli.run(&["segment", "--image", "phantom", "--roi", "32,479", "--predictor", "oracle"]);
    assert_eq!(code(&out), 0);
    let cli_bytes = fs::read(cli_store.path().join("results/phantom.json")).unwrap();
    assert_eq!(cli_bytes, http_bytes);
    let imt = json(&http_bytes)["imt_mean_um"].as_f64().unwrap();
    assert!((imt - 800.0).abs() <= 10.0);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn distinct_items_run_concurrently() {
    let app = Arc::new(app(PredictorKind::Oracle));
    let mut tasks = Vec::new();
    for i in 0..3 {
        let app = app.clone();
        tasks.push(tokio::spawn(async move {
            let id = format!("extra{i}");
            let roi = serde_json::json!({"x_left": 32, "x_right": 479});
            assert_eq!(call(&app, "PUT", &format!("/items/{id}/roi"), Some(roi)).await.0, StatusCode::OK);
            assert_eq!(call(&app, "POST", &format!("/items/{id}/farwall"), None).await.0, StatusCode::OK);
            let (s, body, _) = call(&app, "POST", &format!("/items/{id}/segment"), None).await;
            assert_eq!(s, StatusCode::OK);
            json(&body)["status"].as_str().unwrap().to_string()
        }));
    }
    for t in tasks {
        assert_eq!(t.await.unwrap(), "segmented");
    }
    let (_, body, _) = call(&app, "GET", "/items", None).await;
    let states: Vec<String> = json(&body).as_array().unwrap().iter().map(|i| i["state"].as_str().unwrap().to_string()).collect();
    assert_eq!(states, ["segmented", "segmented", "segmented", "ingested"]);
}
