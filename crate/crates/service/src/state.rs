//! Per-station rolling state, rebuilt from store entries on restart.

use std::collections::{BTreeMap, VecDeque};

use chrono::{DateTime, TimeDelta, Utc};
use rwis_core::anomaly::{quarantine_gate, AnomalyLabel, DetectorConfig, GateDecision};
use rwis_core::data::{Forcing, SlotSource};
use rwis_core::{Channel, ChannelValues};

use crate::store::{ForcingEntry, ObservationEntry, StoreEntry};

/// Recent slots on the cadence grid. Raw values feed the forecaster;
/// screened values (flagged readings replaced by their prediction) feed the
/// detector.
#[derive(Debug, Clone)]
pub struct StationState {
    station_id: String,
    cadence: TimeDelta,
    capacity: usize,
    start: Option<DateTime<Utc>>,
    raw: VecDeque<Option<ChannelValues>>,
    screened: VecDeque<Option<ChannelValues>>,
    forcing: BTreeMap<DateTime<Utc>, Forcing>,
    /// Consecutive screened slots per channel.
    runs: [usize; 4],
    labels: VecDeque<AnomalyLabel>,
    window: usize,
    quarantined: bool,
    last_label: Option<AnomalyLabel>,
    observations: u64,
}

/// Read-only slot view of a [`StationState`].
pub struct View<'a> {
    state: &'a StationState,
    screened: bool,
}

impl SlotSource for View<'_> {
    fn slot_count(&self) -> usize {
        self.state.raw.len()
    }

    fn is_gap(&self, slot: usize) -> bool {
        self.values().get(slot).is_none_or(|v| v.is_none())
    }

    fn value(&self, slot: usize, channel: Channel) -> f64 {
        self.values()[slot].expect("value requested at a gap slot")[channel]
    }

    fn slot_time(&self, slot: usize) -> DateTime<Utc> {
        self.state.start.expect("time of an empty window") + self.state.cadence * slot as i32
    }

    fn forcing(&self, slot: usize) -> Option<Forcing> {
        self.state.start?;
        self.state.forcing.get(&self.slot_time(slot)).copied()
    }
}

impl View<'_> {
    fn values(&self) -> &VecDeque<Option<ChannelValues>> {
        if self.screened {
            &self.state.screened
        } else {
            &self.state.raw
        }
    }
}

impl StationState {
    pub fn new(station_id: impl Into<String>, cadence: TimeDelta, lag_window: usize, policy: &DetectorConfig) -> Self {
        StationState {
            station_id: station_id.into(),
            cadence,
            capacity: lag_window + 3,
            start: None,
            raw: VecDeque::new(),
            screened: VecDeque::new(),
            forcing: BTreeMap::new(),
            runs: [0; 4],
            labels: VecDeque::new(),
            window: policy.window,
            quarantined: false,
            last_label: None,
            observations: 0,
        }
    }

    pub fn raw(&self) -> View<'_> {
        View {
            state: self,
            screened: false,
        }
    }

    pub fn screened(&self) -> View<'_> {
        View {
            state: self,
            screened: true,
        }
    }

    pub fn station_id(&self) -> &str {
        &self.station_id
    }

    pub fn is_quarantined(&self) -> bool {
        self.quarantined
    }

    pub fn labels(&self) -> impl Iterator<Item = AnomalyLabel> + '_ {
        self.labels.iter().copied()
    }

    pub fn last_label(&self) -> Option<AnomalyLabel> {
        self.last_label
    }

    pub fn observations(&self) -> u64 {
        self.observations
    }

    pub fn runs(&self) -> [usize; 4] {
        self.runs
    }

    /// Index of the last slot, if any.
    pub fn last_slot(&self) -> Option<usize> {
        self.raw.len().checked_sub(1)
    }

    pub fn last_time(&self) -> Option<DateTime<Utc>> {
        self.last_slot().map(|s| self.raw().slot_time(s))
    }

    /// Slot index `ts` would occupy. `Err` if it is not after the last slot.
    pub fn slot_for(&self, ts: DateTime<Utc>) -> Result<usize, DateTime<Utc>> {
        match (self.start, self.last_time()) {
            (Some(start), Some(last)) => {
                if ts <= last {
                    return Err(last);
                }
                Ok(((ts - start).num_seconds() / self.cadence.num_seconds()) as usize)
            }
            _ => Ok(0),
        }
    }

    /// Copy with the window advanced so `ts` is the next slot, padding
    /// skipped slots as gaps; a long silence restarts the window.
    pub fn advanced_to(&self, ts: DateTime<Utc>) -> (StationState, usize) {
        let mut s = self.clone();
        let t = match s.slot_for(ts) {
            Ok(t) => t,
            Err(_) => unreachable!("caller checks ordering"),
        };
        if s.start.is_none() || t > s.raw.len() + s.capacity {
            s.start = Some(ts);
            s.raw.clear();
            s.screened.clear();
            s.runs = [0; 4];
            return (s, 0);
        }
        while s.raw.len() < t {
            s.raw.push_back(None);
            s.screened.push_back(None);
            s.runs = [0; 4];
        }
        (s, t)
    }

    fn trim(&mut self) {
        while self.raw.len() > self.capacity {
            self.raw.pop_front();
            self.screened.pop_front();
            self.start = self.start.map(|t| t + self.cadence);
        }
        if let Some(start) = self.start {
            self.forcing = self.forcing.split_off(&start);
        }
    }

    /// Applies a persisted entry. Ingest and replay both go through here,
    /// so a restarted service reaches the same state.
    pub fn apply(&mut self, entry: &StoreEntry, policy: &DetectorConfig) {
        match entry {
            StoreEntry::Observation(o) => self.apply_observation(o, policy),
            StoreEntry::Forcing(ForcingEntry { timestamp, forcing, .. }) => {
                if self.start.is_none_or(|s| *timestamp >= s) {
                    self.forcing.insert(*timestamp, *forcing);
                }
            }
            StoreEntry::Forecast(_) => {}
            StoreEntry::Reset { .. } => {
                self.quarantined = false;
                self.labels.clear();
            }
        }
    }

    fn apply_observation(&mut self, o: &ObservationEntry, policy: &DetectorConfig) {
        let (mut next, _) = self.advanced_to(o.timestamp);
        let mut screened = o.values;
        for ch in Channel::ALL {
            if o.screened.contains(&ch) {
                screened[ch] = o.predicted.expect("screened channels have a prediction")[ch];
                next.runs[ch.index()] += 1;
            } else {
                next.runs[ch.index()] = 0;
            }
        }
        next.raw.push_back(Some(o.values));
        next.screened.push_back(Some(screened));
        if let Some(f) = o.forcing {
            next.forcing.insert(o.timestamp, f);
        }
        next.observations += 1;
        next.last_label = o.label();
        if let (Some(label), false) = (o.label(), next.quarantined) {
            next.labels.push_back(label);
            while next.labels.len() > next.window {
                next.labels.pop_front();
            }
            let recent: Vec<AnomalyLabel> = next.labels.iter().copied().collect();
            if quarantine_gate(&recent, policy) == GateDecision::Quarantined {
                next.quarantined = true;
            }
        }
        next.trim();
        *self = next;
    }
}
