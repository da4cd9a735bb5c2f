//! Serving side of the copywriting pipeline: description store, screening
//! queue, event analytics, latency bench and the HTTP API.

pub mod app;
pub mod bench;
pub mod error;
pub mod events;
pub mod http;
pub mod screening;
pub mod store;

pub use app::{
    default_lexicon, open_service, record_pairs, BatchSummary, DataDir, GenerateRequest, Health, Service,
    ServiceConfig, ServiceParts, Stats,
};
pub use error::ServiceError;

/// Environment variable naming the data directory.
pub const DATA_DIR_ENV: &str = "APCG_DATA_DIR";
/// Environment variable naming the HTTP listen address.
pub const LISTEN_ENV: &str = "APCG_LISTEN";
