//! HTTP transport. Request and response bodies are newline-delimited JSON;
//! every route lives under `/v1`.

use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use rwis_core::Horizon;
use serde::{Deserialize, Serialize};

use crate::service::{ForcingPayload, ObservationPayload, Service, ServiceError};

pub const NDJSON: &str = "application/x-ndjson";

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/v1/observations", post(observations))
        .route("/v1/forcing", post(forcing))
        .route("/v1/forecast", get(forecast))
        .route("/v1/stations/{id}/status", get(status))
        .route("/v1/admin/quarantine/reset", post(reset))
        .with_state(service)
}

/// Error body: `{"status": "<kind>", "message": "..."}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub status: String,
    pub message: String,
}

fn kind(e: &ServiceError) -> (StatusCode, &'static str) {
    match e {
        ServiceError::MalformedPayload(_) => (StatusCode::BAD_REQUEST, "malformed_payload"),
        ServiceError::UnknownStation(_) => (StatusCode::NOT_FOUND, "unknown_station"),
        ServiceError::OutOfOrder { .. } => (StatusCode::CONFLICT, "out_of_order"),
        ServiceError::Quarantined(_) => (StatusCode::CONFLICT, "quarantined"),
        ServiceError::WarmingUp(_) => (StatusCode::CONFLICT, "warming_up"),
        ServiceError::MissingMeteo { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "missing_meteo"),
        ServiceError::Store(_) | ServiceError::Internal(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
    }
}

fn error_body(e: &ServiceError) -> ErrorBody {
    ErrorBody {
        status: kind(e).1.into(),
        message: e.to_string(),
    }
}

fn error_response(e: ServiceError) -> Response {
    let (code, _) = kind(&e);
    if code == StatusCode::INTERNAL_SERVER_ERROR {
        tracing::error!(error = %e, "request failed");
    }
    (code, ndjson([serde_json::to_string(&error_body(&e)).expect("serializes")])).into_response()
}

fn ndjson(lines: impl IntoIterator<Item = String>) -> impl IntoResponse {
    let mut body = String::new();
    for l in lines {
        body.push_str(&l);
        body.push('\n');
    }
    ([(header::CONTENT_TYPE, NDJSON)], body)
}

/// Applies `f` to every non-blank line, answering one line per input line.
fn per_line<T, R>(body: &str, f: impl Fn(&T) -> Result<R, ServiceError>) -> Response
where
    T: for<'de> Deserialize<'de>,
    R: Serialize,
{
    let out = body.lines().filter(|l| !l.trim().is_empty()).map(|line| {
        let res = serde_json::from_str::<T>(line)
            .map_err(|e| ServiceError::MalformedPayload(e.to_string()))
            .and_then(|p| f(&p));
        match res {
            Ok(r) => serde_json::to_string(&r),
            Err(e) => serde_json::to_string(&error_body(&e)),
        }
        .expect("serializes")
    });
    ndjson(out.collect::<Vec<_>>()).into_response()
}

async fn observations(State(svc): State<Arc<Service>>, body: String) -> Response {
    per_line(&body, |p: &ObservationPayload| svc.ingest(p))
}

#[derive(Serialize)]
struct Ack {
    ok: bool,
}

async fn forcing(State(svc): State<Arc<Service>>, body: String) -> Response {
    per_line(&body, |p: &ForcingPayload| svc.ingest_forcing(p).map(|_| Ack { ok: true }))
}

#[derive(Deserialize)]
struct ForecastQuery {
    station: String,
    horizon: String,
}

async fn forecast(State(svc): State<Arc<Service>>, Query(q): Query<ForecastQuery>) -> Response {
    let horizon: Horizon = match serde_json::from_value(serde_json::Value::String(q.horizon.clone())) {
        Ok(h) => h,
        Err(_) => {
            return error_response(ServiceError::MalformedPayload(format!(
                "horizon `{}` is not one of 1h, 2h, 3h",
                q.horizon
            )))
        }
    };
    match svc.forecast(&q.station, horizon) {
        Ok(records) => ndjson(records.iter().map(|r| serde_json::to_string(r).expect("serializes"))).into_response(),
        Err(e) => error_response(e),
    }
}

async fn status(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> Response {
    match svc.status(&id) {
        Ok(s) => ndjson([serde_json::to_string(&s).expect("serializes")]).into_response(),
        Err(e) => error_response(e),
    }
}

#[derive(Deserialize)]
struct ResetQuery {
    station: String,
}

async fn reset(State(svc): State<Arc<Service>>, Query(q): Query<ResetQuery>) -> Response {
    match svc.reset_quarantine(&q.station) {
        Ok(s) => ndjson([serde_json::to_string(&s).expect("serializes")]).into_response(),
        Err(e) => error_response(e),
    }
}

/// Serves `service` on `addr` until the process is stopped.
pub async fn serve(service: Arc<Service>, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(service)).await
}
