use std::sync::{Arc, OnceLock};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use chrono::TimeDelta;
use http_body_util::BodyExt;
use rwis_core::anomaly::{quarantine_gate, AnomalyLabel, GateDecision};
use rwis_core::config::Config;
use rwis_core::correction::{correction_features, ModelGrid};
use rwis_core::data::{SlotSource, StationSeries};
use rwis_core::evaluation::{generate_scenario, BenchmarkScenario};
use rwis_core::gbdt::TrainConfig;
use rwis_core::pipeline::{train, Artifacts};
use rwis_core::{Channel, ChannelValues, Horizon};
use rwis_service::store::ObservationEntry;
use rwis_service::*;
use tower::ServiceExt;

struct Fixture {
    artifacts: Artifacts,
    stations: Vec<StationSeries>,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let data = generate_scenario(&BenchmarkScenario {
            days: 14,
            holdout_days: 2,
            ..BenchmarkScenario::default()
        })
        .unwrap();
        let mut cfg = Config::default().with_seed(5);
        cfg.correction = TrainConfig {
            n_stages: 30,
            ..cfg.correction
        };
        let (artifacts, _) = train(&data.stations, &cfg).unwrap();
        Fixture {
            artifacts,
            stations: data.stations,
        }
    })
}

fn lag() -> usize {
    fixture().artifacts.predictor.layout().lag_window
}

fn payload(s: &StationSeries, t: usize) -> ObservationPayload {
    let v = s.slots()[t].reading.unwrap();
    ObservationPayload {
        station_id: s.station_id().into(),
        timestamp: s.slot_time(t),
        air_temp: v[Channel::Air],
        road_temp: v[Channel::Road],
        underground_temp: v[Channel::Underground],
        humidity: v[Channel::Humidity],
        forcing: s.forcing(t),
    }
}

fn with_values(mut p: ObservationPayload, v: ChannelValues) -> ObservationPayload {
    p.air_temp = v[Channel::Air];
    p.road_temp = v[Channel::Road];
    p.underground_temp = v[Channel::Underground];
    p.humidity = v[Channel::Humidity];
    p
}

fn send_forcing_ahead(svc: &Service, s: &StationSeries, t: usize) {
    for k in t + 1..=t + 3 {
        svc.ingest_forcing(&ForcingPayload {
            station_id: s.station_id().into(),
            timestamp: s.slot_time(k),
            forcing: s.forcing(k).unwrap(),
        })
        .unwrap();
    }
}

fn forecasts_in(entries: &[StoreEntry]) -> Vec<PipelineRecord> {
    entries
        .iter()
        .filter_map(|e| match e {
            StoreEntry::Forecast(r) => Some(r.clone()),
            _ => None,
        })
        .collect()
}

fn observations_in(entries: &[StoreEntry]) -> Vec<ObservationEntry> {
    entries
        .iter()
        .filter_map(|e| match e {
            StoreEntry::Observation(o) => Some(o.clone()),
            _ => None,
        })
        .collect()
}

/// Rebuilds a regular series from persisted observation and forcing
/// entries.
fn series_from_store(id: &str, entries: &[StoreEntry]) -> StationSeries {
    let obs = observations_in(entries);
    let start = obs[0].timestamp;
    let end = entries
        .iter()
        .filter_map(|e| match e {
            StoreEntry::Forcing(f) => Some(f.timestamp),
            StoreEntry::Observation(o) => Some(o.timestamp),
            _ => None,
        })
        .max()
        .unwrap();
    let n = ((end - start).num_hours() + 1) as usize;
    let mut rows = vec![(None, None); n];
    for e in entries {
        match e {
            StoreEntry::Observation(o) => {
                let i = (o.timestamp - start).num_hours() as usize;
                rows[i].0 = Some(o.values);
                if o.forcing.is_some() {
                    rows[i].1 = o.forcing;
                }
            }
            StoreEntry::Forcing(f) => {
                let i = (f.timestamp - start).num_hours() as usize;
                rows[i].1 = Some(f.forcing);
            }
            _ => {}
        }
    }
    StationSeries::regular(id, start, TimeDelta::hours(1), rows)
}

#[test]
fn warm_up_then_zero_residual_is_normal() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let svc = Service::open(f.artifacts.clone(), dir.path()).unwrap();
    let s = &f.stations[0];
    for t in 0..lag() {
        let out = svc.ingest(&payload(s, t)).unwrap();
        assert_eq!(out.status, IngestStatus::Accepted);
        assert_eq!(out.label, None);
        assert_eq!(out.warning.is_some(), t == 0);
        send_forcing_ahead(&svc, s, t);
        assert!(matches!(svc.forecast(s.station_id(), Horizon::H1), Err(ServiceError::WarmingUp(_))));
    }
    // the exact one-step prediction is accepted as normal
    let hist = s.slice(0..lag());
    let mut v = ChannelValues::default();
    for ch in Channel::ALL {
        v[ch] = f.artifacts.predictor.predict(&hist, lag(), ch).unwrap().unwrap();
    }
    let out = svc.ingest(&with_values(payload(s, lag()), v)).unwrap();
    assert_eq!(out.status, IngestStatus::Accepted);
    assert_eq!(out.label, Some(AnomalyLabel::Normal));
    let obs = observations_in(&svc.history(s.station_id()).unwrap());
    assert_eq!(obs.last().unwrap().predicted, Some(v));
}

#[test]
fn ingest_quarantine_forecast_reset_scenario() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let svc = Service::open(f.artifacts.clone(), dir.path()).unwrap();
    let s = &f.stations[1];
    let id = s.station_id();
    let k = f.artifacts.detector.count;
    let warm = lag() + 4;
    for t in 0..warm {
        svc.ingest(&payload(s, t)).unwrap();
    }
    send_forcing_ahead(&svc, s, warm - 1);
    let served = svc.forecast(id, Horizon::H2).unwrap();
    assert_eq!(served.len(), 4);

    // persisted corrections match the grid evaluated offline on features
    // rebuilt from the persisted inputs
    let entries = svc.history(id).unwrap();
    let offline = series_from_store(id, &entries);
    let layout = *f.artifacts.grid.layout();
    for r in forecasts_in(&entries) {
        assert_eq!(r.grid_version, f.artifacts.grid.version());
        let issue = offline.slot_of(r.issue_time).unwrap();
        let x = correction_features(&offline, issue, r.channel, r.horizon, r.physical, &layout)
            .unwrap()
            .unwrap();
        let term = f.artifacts.grid.get(r.channel, r.horizon).unwrap().predict(&x.to_row()).unwrap();
        if r.channel != Channel::Humidity {
            assert!((r.corrected - r.physical - term).abs() <= 1e-12);
        }
        let direct = rwis_core::correction::correct(r.physical, &x, &f.artifacts.grid).unwrap();
        assert_eq!(r.corrected, direct);
    }

    // k consecutive readings on a fault ramp, so every residual stays large
    // whether or not the previous slot was screened
    let mut t = warm;
    for i in 0..k {
        let mut p = payload(s, t);
        p.road_temp += 15.0 * (i + 1) as f64;
        let out = svc.ingest(&p).unwrap();
        assert_eq!(out.status, IngestStatus::Flagged, "fault {i}");
        assert_eq!(out.label, Some(AnomalyLabel::Anomaly));
        assert_eq!(out.quarantined, i + 1 == k);
        t += 1;
    }
    let out = svc.ingest(&payload(s, t)).unwrap();
    assert_eq!(out.status, IngestStatus::QuarantinedDrop);
    send_forcing_ahead(&svc, s, t);
    t += 1;
    let before = svc.history(id).unwrap().len();
    assert!(matches!(svc.forecast(id, Horizon::H1), Err(ServiceError::Quarantined(_))));
    assert_eq!(svc.history(id).unwrap().len(), before, "nothing persisted while quarantined");
    assert!(svc.status(id).unwrap().quarantined);

    let st = svc.reset_quarantine(id).unwrap();
    assert!(!st.quarantined);
    assert_eq!(st.recent_anomalies, 0);
    // resume with clean data, forecasting works again
    for t in t..t + 2 {
        let out = svc.ingest(&payload(s, t)).unwrap();
        assert_ne!(out.status, IngestStatus::QuarantinedDrop);
        send_forcing_ahead(&svc, s, t);
    }
    assert_eq!(svc.forecast(id, Horizon::H3).unwrap().len(), 4);
}

#[test]
fn online_gate_matches_offline_gate_on_persisted_labels() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let svc = Service::open(f.artifacts.clone(), dir.path()).unwrap();
    let s = &f.stations[2];
    let policy = &f.artifacts.detector;
    let mut labels: Vec<AnomalyLabel> = Vec::new();
    let mut quarantined = false;
    for t in 0..120 {
        let mut p = payload(s, t);
        if t % 17 == 9 || (60..63).contains(&t) {
            p.air_temp += 25.0;
        }
        let out = svc.ingest(&p).unwrap();
        if let (Some(l), false) = (out.label, quarantined) {
            labels.push(l);
            quarantined = quarantine_gate(&labels, policy) == GateDecision::Quarantined;
        }
        assert_eq!(out.quarantined, quarantined, "slot {t}");
    }
    assert!(quarantined);
}

#[test]
fn restart_replays_to_the_same_state() {
    let f = fixture();
    let s = &f.stations[0];
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let n = 40;
    let spike = |t: usize| {
        let mut p = payload(s, t);
        if t % 11 == 3 {
            p.humidity = (p.humidity - 40.0).max(0.0);
        }
        p
    };
    {
        let svc = Service::open(f.artifacts.clone(), a.path()).unwrap();
        for t in 0..n {
            svc.ingest(&spike(t)).unwrap();
        }
    }
    let resumed = Service::open(f.artifacts.clone(), a.path()).unwrap();
    let fresh = Service::open(f.artifacts.clone(), b.path()).unwrap();
    for t in 0..n {
        fresh.ingest(&spike(t)).unwrap();
    }
    assert_eq!(resumed.status(s.station_id()).unwrap(), fresh.status(s.station_id()).unwrap());
    for t in n..n + 10 {
        assert_eq!(resumed.ingest(&spike(t)).unwrap(), fresh.ingest(&spike(t)).unwrap());
    }
    assert_eq!(resumed.history(s.station_id()).unwrap(), fresh.history(s.station_id()).unwrap());
}

#[test]
fn null_grid_serves_physical_values() {
    let f = fixture();
    let mut art = f.artifacts.clone();
    art.grid = ModelGrid::null(*art.grid.layout());
    let dir = tempfile::tempdir().unwrap();
    let svc = Service::open(art, dir.path()).unwrap();
    let s = &f.stations[3];
    for t in 0..=lag() {
        svc.ingest(&payload(s, t)).unwrap();
    }
    send_forcing_ahead(&svc, s, lag());
    for h in [Horizon::H1, Horizon::H2, Horizon::H3] {
        for r in svc.forecast(s.station_id(), h).unwrap() {
            assert_eq!(r.corrected, r.physical);
        }
    }
}

#[test]
fn errors() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let svc = Service::open(f.artifacts.clone(), dir.path()).unwrap();
    let s = &f.stations[0];
    assert!(matches!(svc.forecast("nope", Horizon::H1), Err(ServiceError::UnknownStation(_))));
    let mut p = payload(s, 0);
    p.humidity = 140.0;
    assert!(matches!(svc.ingest(&p), Err(ServiceError::MalformedPayload(_))));
    svc.ingest(&payload(s, 5)).unwrap();
    assert!(matches!(svc.ingest(&payload(s, 5)), Err(ServiceError::OutOfOrder { .. })));
    assert!(matches!(svc.ingest(&payload(s, 4)), Err(ServiceError::OutOfOrder { .. })));
    for t in 6..=6 + lag() {
        svc.ingest(&payload(s, t)).unwrap();
    }
    // no forcing beyond the last observation
    assert!(matches!(
        svc.forecast(s.station_id(), Horizon::H1),
        Err(ServiceError::MissingMeteo { .. })
    ));
}

async fn call(app: &axum::Router, req: Request<Body>) -> (StatusCode, String) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let code = resp.status();
    let body = resp.into_body().collect().await.unwrap().to_bytes();
    (code, String::from_utf8(body.to_vec()).unwrap())
}

fn post(uri: &str, body: String) -> Request<Body> {
    Request::post(uri).body(Body::from(body)).unwrap()
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

#[tokio::test]
async fn http_round_trip() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let svc = Arc::new(Service::open(f.artifacts.clone(), dir.path()).unwrap());
    let app = router(svc.clone());
    let s = &f.stations[1];
    let id = s.station_id();
    let n = lag() + 2;

    let mut body: String = (0..n)
        .map(|t| serde_json::to_string(&payload(s, t)).unwrap() + "\n")
        .collect();
    body.push_str("{\"station_id\": 3}\n\n");
    let (code, text) = call(&app, post("/v1/observations", body)).await;
    assert_eq!(code, StatusCode::OK);
    let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), n + 1);
    assert_eq!(lines[0]["status"], "accepted");
    assert!(lines[0]["warning"].is_string());
    assert_eq!(lines[n - 1]["label"], 1);
    assert_eq!(lines[n]["status"], "malformed_payload");

    let (code, text) = call(&app, get(&format!("/v1/forecast?station={id}&horizon=2h"))).await;
    assert_eq!(code, StatusCode::UNPROCESSABLE_ENTITY, "{text}");

    let forcing: String = (n..n + 3)
        .map(|t| {
            serde_json::to_string(&ForcingPayload {
                station_id: id.into(),
                timestamp: s.slot_time(t),
                forcing: s.forcing(t).unwrap(),
            })
            .unwrap()
                + "\n"
        })
        .collect();
    let (code, text) = call(&app, post("/v1/forcing", forcing)).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(text.lines().count(), 3);

    let (code, text) = call(&app, get(&format!("/v1/forecast?station={id}&horizon=2h"))).await;
    assert_eq!(code, StatusCode::OK, "{text}");
    let recs: Vec<PipelineRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(recs.len(), 4);
    assert!(recs.iter().all(|r| r.horizon == Horizon::H2 && r.station_id == id));

    let (code, _) = call(&app, get(&format!("/v1/forecast?station={id}&horizon=5h"))).await;
    assert_eq!(code, StatusCode::BAD_REQUEST);
    let (code, _) = call(&app, get("/v1/forecast?station=missing&horizon=1h")).await;
    assert_eq!(code, StatusCode::NOT_FOUND);

    // drive into quarantine over HTTP
    let k = f.artifacts.detector.count;
    let bad: String = (n..n + k)
        .map(|t| {
            let mut p = payload(s, t);
            p.underground_temp += 15.0 * (t - n + 1) as f64;
            serde_json::to_string(&p).unwrap() + "\n"
        })
        .collect();
    let (_, text) = call(&app, post("/v1/observations", bad)).await;
    assert!(text.lines().last().unwrap().contains("\"quarantined\":true"));
    let (code, text) = call(&app, get(&format!("/v1/forecast?station={id}&horizon=1h"))).await;
    assert_eq!(code, StatusCode::CONFLICT);
    assert!(text.contains("\"status\":\"quarantined\""));
    let (code, text) = call(&app, get(&format!("/v1/stations/{id}/status"))).await;
    assert_eq!(code, StatusCode::OK);
    let st: StationStatus = serde_json::from_str(text.trim()).unwrap();
    assert!(st.quarantined);
    let (code, text) = call(&app, post(&format!("/v1/admin/quarantine/reset?station={id}"), String::new())).await;
    assert_eq!(code, StatusCode::OK);
    let st: StationStatus = serde_json::from_str(text.trim()).unwrap();
    assert!(!st.quarantined);
}
