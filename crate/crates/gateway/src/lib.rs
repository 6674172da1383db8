//! Operational shell around the segmentation engine: dataset ingestion, a
//! file-backed session store, the command line, and the HTTP review API.

pub mod cli;
pub mod error;
pub mod evaluate;
pub mod http;
pub mod ingest;
pub mod predictors;
pub mod service;
pub mod store;

pub use error::{GatewayError, Result};
pub use service::Service;
pub use store::Store;
