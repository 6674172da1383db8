//! JSON-over-HTTP front end used by the review interface.

use std::sync::Arc;

use axum::body::Body;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::error::GatewayError;
use crate::service::Service;

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

impl IntoResponse for GatewayError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        let body = ErrorBody {
            code: self.code().to_string(),
            message: self.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RoiBody {
    pub x_left: usize,
    pub x_right: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AxisBody {
    /// `[x, y]` pairs in native image coordinates.
    pub control_points: Vec<(f64, f64)>,
}

type Shared = Arc<Service>;

/// Runs blocking pipeline work off the async executor.
async fn blocking<T, F>(service: Shared, f: F) -> Result<T, GatewayError>
where
    T: Send + 'static,
    F: FnOnce(&Service) -> Result<T, GatewayError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&service))
        .await
        .unwrap_or_else(|e| Err(GatewayError::Invalid(format!("worker failed: {e}"))))
}

fn json_bytes(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], Body::from(bytes)).into_response()
}

async fn list_items(State(s): State<Shared>) -> Response {
    match blocking(s, |s| s.items()).await {
        Ok(items) => Json(items).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn get_image(State(s): State<Shared>, Path(id): Path<String>) -> Response {
    match blocking(s, move |s| s.image_png(&id)).await {
        Ok(png) => ([(header::CONTENT_TYPE, "image/png")], Body::from(png)).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn put_roi(
    State(s): State<Shared>,
    Path(id): Path<String>,
    body: Result<Json<RoiBody>, axum::extract::rejection::JsonRejection>,
) -> Response {
    let Json(roi) = match body {
        Ok(b) => b,
        Err(e) => return GatewayError::Invalid(e.body_text()).into_response(),
    };
    match blocking(s, move |s| s.set_roi(&id, roi.x_left, roi.x_right)).await {
        Ok(item) => Json(item).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn post_farwall(State(s): State<Shared>, Path(id): Path<String>) -> Response {
    match blocking(s, move |s| s.detect_far_wall(&id, None)).await {
        Ok(fw) => Json(fw).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn put_axis(
    State(s): State<Shared>,
    Path(id): Path<String>,
    body: Result<Json<AxisBody>, axum::extract::rejection::JsonRejection>,
) -> Response {
    let Json(axis) = match body {
        Ok(b) => b,
        Err(e) => return GatewayError::Invalid(e.body_text()).into_response(),
    };
    match blocking(s, move |s| s.set_axis(&id, &axis.control_points)).await {
        Ok(fw) => Json(fw).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn post_segment(State(s): State<Shared>, Path(id): Path<String>) -> Response {
    match blocking(s, move |s| s.segment(&id, None)).await {
        Ok(result) => json_bytes(result.to_json().into_bytes()),
        Err(e) => e.into_response(),
    }
}

async fn get_result(State(s): State<Shared>, Path(id): Path<String>) -> Response {
    match blocking(s, move |s| {
        s.store().item(&id)?;
        s.store().result_bytes(&id)
    })
    .await
    {
        Ok(bytes) => json_bytes(bytes),
        Err(e) => e.into_response(),
    }
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/items", get(list_items))
        .route("/items/{id}/image", get(get_image))
        .route("/items/{id}/roi", put(put_roi))
        .route("/items/{id}/farwall", post(post_farwall))
        .route("/items/{id}/axis", put(put_axis))
        .route("/items/{id}/segment", post(post_segment))
        .route("/items/{id}/result", get(get_result))
        .with_state(service)
}

pub async fn serve(service: Arc<Service>, host: &str, port: u16) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind((host, port)).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
