use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, TimeDelta, Utc};
use rwis_core::anomaly::{detect, AnomalyLabel, SCREEN_RUN};
use rwis_core::correction::{correct, correction_features};
use rwis_core::data::{nearest_slot, validate_values, Forcing};
use rwis_core::energy_balance::{issue_forecast, PhysicsError};
use rwis_core::pipeline::Artifacts;
use rwis_core::{Channel, ChannelValues, Horizon};
use serde::{Deserialize, Serialize};

use crate::state::StationState;
use crate::store::{ForcingEntry, IngestStatus, ObservationEntry, PipelineRecord, RecordStore, StoreEntry, StoreError};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("malformed payload: {0}")]
    MalformedPayload(String),
    #[error("unknown station `{0}`")]
    UnknownStation(String),
    #[error("observation at {got} is not after the last slot {last}")]
    OutOfOrder { got: DateTime<Utc>, last: DateTime<Utc> },
    #[error("station `{0}` is quarantined")]
    Quarantined(String),
    #[error("station `{0}` is still warming up")]
    WarmingUp(String),
    #[error("station `{station}`: {reason}")]
    MissingMeteo { station: String, reason: String },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("internal: {0}")]
    Internal(String),
}

/// One observation as posted by a station, optionally with the forcing
/// for its slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationPayload {
    pub station_id: String,
    pub timestamp: DateTime<Utc>,
    pub air_temp: f64,
    pub road_temp: f64,
    pub underground_temp: f64,
    pub humidity: f64,
    #[serde(default, flatten)]
    pub forcing: Option<Forcing>,
}

/// Forecast forcing for a future (or current) slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcingPayload {
    pub station_id: String,
    pub timestamp: DateTime<Utc>,
    #[serde(flatten)]
    pub forcing: Forcing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestOutcome {
    pub station_id: String,
    pub timestamp: DateTime<Utc>,
    pub status: IngestStatus,
    pub label: Option<AnomalyLabel>,
    pub quarantined: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationStatus {
    pub station_id: String,
    pub quarantined: bool,
    pub observations: u64,
    pub last_observation: Option<DateTime<Utc>>,
    pub last_label: Option<AnomalyLabel>,
    pub recent_anomalies: usize,
    pub window: usize,
    pub warmed_up: bool,
}

type Station = Arc<Mutex<StationState>>;

/// The online pipeline. Stations are locked individually, so requests for
/// different stations only contend on the store append.
pub struct Service {
    artifacts: RwLock<Arc<Artifacts>>,
    stations: Mutex<BTreeMap<String, Station>>,
    store: Mutex<RecordStore>,
}

impl Service {
    /// Opens the store in `store_dir` and replays it.
    pub fn open(artifacts: Artifacts, store_dir: impl AsRef<Path>) -> Result<Self, ServiceError> {
        let (store, entries) = RecordStore::open(store_dir)?;
        let svc = Service {
            artifacts: RwLock::new(Arc::new(artifacts)),
            stations: Mutex::new(BTreeMap::new()),
            store: Mutex::new(store),
        };
        let art = svc.artifacts();
        for e in &entries {
            let st = svc.station_or_register(e.station_id(), &art).0;
            st.lock().unwrap().apply(e, &art.detector);
        }
        tracing::info!(entries = entries.len(), stations = svc.station_ids().len(), "store replayed");
        Ok(svc)
    }

    pub fn artifacts(&self) -> Arc<Artifacts> {
        self.artifacts.read().unwrap().clone()
    }

    /// Swaps in new models; in-flight requests finish on the old ones.
    pub fn swap_artifacts(&self, artifacts: Artifacts) {
        *self.artifacts.write().unwrap() = Arc::new(artifacts);
    }

    pub fn station_ids(&self) -> Vec<String> {
        self.stations.lock().unwrap().keys().cloned().collect()
    }

    fn cadence(art: &Artifacts) -> TimeDelta {
        TimeDelta::minutes(art.settings.cadence_minutes)
    }

    fn station(&self, id: &str) -> Option<Station> {
        self.stations.lock().unwrap().get(id).cloned()
    }

    fn station_or_register(&self, id: &str, art: &Artifacts) -> (Station, bool) {
        let mut map = self.stations.lock().unwrap();
        if let Some(s) = map.get(id) {
            return (s.clone(), false);
        }
        let lag = art.predictor.layout().lag_window.max(art.grid.layout().lag_window);
        let st = Arc::new(Mutex::new(StationState::new(id, Self::cadence(art), lag, &art.detector)));
        map.insert(id.to_string(), st.clone());
        (st, true)
    }

    fn snap(ts: DateTime<Utc>, cadence: TimeDelta) -> DateTime<Utc> {
        let secs = cadence.num_seconds();
        DateTime::from_timestamp(nearest_slot(ts, secs) * secs, 0).expect("in range")
    }

    fn append(&self, entry: &StoreEntry) -> Result<(), ServiceError> {
        Ok(self.store.lock().unwrap().append(entry)?)
    }

    pub fn ingest(&self, p: &ObservationPayload) -> Result<IngestOutcome, ServiceError> {
        let values = ChannelValues([p.air_temp, p.road_temp, p.underground_temp, p.humidity]);
        if p.station_id.is_empty() {
            return Err(ServiceError::MalformedPayload("empty station_id".into()));
        }
        validate_values(&values).map_err(|e| ServiceError::MalformedPayload(e.to_string()))?;
        if let Some(f) = &p.forcing {
            check_forcing(f)?;
        }
        let art = self.artifacts();
        let ts = Self::snap(p.timestamp, Self::cadence(&art));
        let (station, registered) = self.station_or_register(&p.station_id, &art);
        let mut st = station.lock().unwrap();
        if let Err(last) = st.slot_for(ts) {
            return Err(ServiceError::OutOfOrder { got: ts, last });
        }
        let (next, t) = st.advanced_to(ts);

        let mut predicted = ChannelValues::default();
        let mut labels = [AnomalyLabel::Normal; 4];
        let mut screened = Vec::new();
        let mut warm = true;
        for ch in Channel::ALL {
            let pred = art
                .predictor
                .predict(&next.screened(), t, ch)
                .map_err(|e| ServiceError::Internal(e.to_string()))?;
            let Some(pred) = pred else {
                warm = false;
                break;
            };
            predicted[ch] = pred;
            labels[ch.index()] = detect(values[ch], pred, art.detector.threshold(ch))
                .map_err(|e| ServiceError::Internal(e.to_string()))?;
            if labels[ch.index()].is_anomaly() && next.runs()[ch.index()] < SCREEN_RUN {
                screened.push(ch);
            }
        }
        let (predicted, labels, screened) = if warm {
            (Some(predicted), Some(labels), screened)
        } else {
            (None, None, Vec::new())
        };
        let any_anomaly = labels.is_some_and(|ls| ls.iter().any(|l| l.is_anomaly()));
        let status = if st.is_quarantined() {
            IngestStatus::QuarantinedDrop
        } else if any_anomaly {
            IngestStatus::Flagged
        } else {
            IngestStatus::Accepted
        };
        let entry = ObservationEntry {
            station_id: p.station_id.clone(),
            timestamp: ts,
            values,
            forcing: p.forcing,
            predicted,
            labels,
            screened,
            status,
        };
        let label = entry.label();
        let entry = StoreEntry::Observation(entry);
        self.append(&entry)?;
        st.apply(&entry, &art.detector);
        Ok(IngestOutcome {
            station_id: p.station_id.clone(),
            timestamp: ts,
            status,
            label,
            quarantined: st.is_quarantined(),
            warning: registered.then(|| format!("station `{}` was unknown and has been registered", p.station_id)),
        })
    }

    pub fn ingest_forcing(&self, p: &ForcingPayload) -> Result<(), ServiceError> {
        if p.station_id.is_empty() {
            return Err(ServiceError::MalformedPayload("empty station_id".into()));
        }
        check_forcing(&p.forcing)?;
        let art = self.artifacts();
        let ts = Self::snap(p.timestamp, Self::cadence(&art));
        let (station, _) = self.station_or_register(&p.station_id, &art);
        let mut st = station.lock().unwrap();
        let entry = StoreEntry::Forcing(ForcingEntry {
            station_id: p.station_id.clone(),
            timestamp: ts,
            forcing: p.forcing,
        });
        self.append(&entry)?;
        st.apply(&entry, &art.detector);
        Ok(())
    }

    /// Physical and corrected forecasts for all four channels at `horizon`,
    /// issued at the station's latest slot. Persisted before returning.
    pub fn forecast(&self, station_id: &str, horizon: Horizon) -> Result<Vec<PipelineRecord>, ServiceError> {
        let station = self
            .station(station_id)
            .ok_or_else(|| ServiceError::UnknownStation(station_id.into()))?;
        let art = self.artifacts();
        let st = station.lock().unwrap();
        if st.is_quarantined() {
            return Err(ServiceError::Quarantined(station_id.into()));
        }
        let warming = || ServiceError::WarmingUp(station_id.into());
        let issue = st.last_slot().ok_or_else(warming)?;
        if st.last_label().is_none() {
            return Err(warming());
        }
        let view = st.raw();
        let step = art.settings.cadence_minutes as f64 / 60.0;
        let phys = &art.settings.physics;
        let fc = issue_forecast(&view, issue, step, &phys.column, &phys.surface).map_err(|e| match e {
            PhysicsError::InsufficientMeteo { .. } => ServiceError::MissingMeteo {
                station: station_id.into(),
                reason: e.to_string(),
            },
            PhysicsError::MissingObservation(_) => warming(),
            other => ServiceError::Internal(other.to_string()),
        })?;
        let version = art.grid.version();
        let layout = *art.grid.layout();
        let mut out = Vec::with_capacity(4);
        for ch in Channel::ALL {
            let physical = fc.get(ch, horizon);
            let x = correction_features(&view, issue, ch, horizon, physical, &layout)
                .map_err(|e| ServiceError::Internal(e.to_string()))?
                .ok_or_else(warming)?;
            let corrected = correct(physical, &x, &art.grid).map_err(|e| ServiceError::Internal(e.to_string()))?;
            out.push(PipelineRecord {
                station_id: station_id.into(),
                issue_time: view_time(&st, issue),
                channel: ch,
                horizon,
                physical,
                corrected,
                label: st.last_label(),
                grid_version: version.clone(),
            });
        }
        for r in &out {
            self.append(&StoreEntry::Forecast(r.clone()))?;
        }
        Ok(out)
    }

    pub fn status(&self, station_id: &str) -> Result<StationStatus, ServiceError> {
        let station = self
            .station(station_id)
            .ok_or_else(|| ServiceError::UnknownStation(station_id.into()))?;
        let art = self.artifacts();
        let st = station.lock().unwrap();
        Ok(StationStatus {
            station_id: station_id.into(),
            quarantined: st.is_quarantined(),
            observations: st.observations(),
            last_observation: st.last_time(),
            last_label: st.last_label(),
            recent_anomalies: st.labels().filter(|l| l.is_anomaly()).count(),
            window: art.detector.window,
            warmed_up: st.last_label().is_some(),
        })
    }

    pub fn reset_quarantine(&self, station_id: &str) -> Result<StationStatus, ServiceError> {
        let station = self
            .station(station_id)
            .ok_or_else(|| ServiceError::UnknownStation(station_id.into()))?;
        let art = self.artifacts();
        {
            let mut st = station.lock().unwrap();
            let entry = StoreEntry::Reset {
                station_id: station_id.into(),
            };
            self.append(&entry)?;
            st.apply(&entry, &art.detector);
        }
        self.status(station_id)
    }

    /// Entries persisted for one station, in order.
    pub fn history(&self, station_id: &str) -> Result<Vec<StoreEntry>, ServiceError> {
        Ok(self.store.lock().unwrap().entries_for(station_id)?)
    }
}

fn view_time(st: &StationState, slot: usize) -> DateTime<Utc> {
    use rwis_core::data::SlotSource;
    st.raw().slot_time(slot)
}

fn check_forcing(f: &Forcing) -> Result<(), ServiceError> {
    let ok = [f.shortwave_in, f.longwave_in, f.wind_speed, f.precip_phase_flux]
        .iter()
        .all(|v| v.is_finite())
        && f.shortwave_in >= 0.0
        && f.longwave_in >= 0.0
        && f.wind_speed >= 0.0;
    if ok {
        Ok(())
    } else {
        Err(ServiceError::MalformedPayload("forcing must be finite and non-negative".into()))
    }
}
