//! Online pipeline: ingest observations, gate faulty stations, serve
//! corrected forecasts and persist everything to an append-only log.

pub mod http;
pub mod service;
pub mod state;
pub mod store;

pub use http::{router, serve};
pub use service::{ForcingPayload, IngestOutcome, ObservationPayload, Service, ServiceError, StationStatus};
pub use store::{IngestStatus, PipelineRecord, RecordStore, StoreEntry};
