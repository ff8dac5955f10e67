//! Station time series: CSV ingest, validation and regularization onto a
//! fixed cadence grid.
//!
//! The CSV envelope is
//!
//! ```text
//! station_id,timestamp,air_temp,road_temp,underground_temp,humidity[,shortwave_in,longwave_in,wind_speed,precip_phase_flux]
//! ```
//!
//! Timestamps are ISO-8601 with an explicit UTC offset and are normalized to
//! UTC on read. An empty field is a missing value: a row with any empty
//! channel becomes a gap slot (its forcing columns, if complete, are kept).

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, SecondsFormat, TimeDelta, Utc};
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::channel::{Channel, ChannelValues};

/// Physical plausibility bounds for temperatures, °C.
pub const TEMP_BOUNDS: (f64, f64) = (-90.0, 90.0);
/// Relative humidity bounds, percent.
pub const HUMIDITY_BOUNDS: (f64, f64) = (0.0, 100.0);

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("input contains no usable rows")]
    EmptyInput,
    #[error("row {row}: {reason}")]
    UnparseableRow { row: usize, reason: String },
    #[error("cadence must be positive")]
    InvalidCadence,
    #[error("cadence too coarse: {collided} of {rows} rows collide into shared slots")]
    CadenceTooCoarse { collided: usize, rows: usize },
    #[error("series `{0}` is not regularized")]
    NotRegular(String),
    #[error("observation invalid: {0}")]
    Invalid(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One timestamped multi-sensor reading from one station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub station_id: String,
    pub timestamp: DateTime<Utc>,
    pub air_temp: f64,
    pub road_temp: f64,
    pub underground_temp: f64,
    pub humidity: f64,
}

impl Observation {
    pub fn values(&self) -> ChannelValues {
        ChannelValues([
            self.air_temp,
            self.road_temp,
            self.underground_temp,
            self.humidity,
        ])
    }

    pub fn from_values(station_id: &str, timestamp: DateTime<Utc>, v: ChannelValues) -> Self {
        Observation {
            station_id: station_id.to_string(),
            timestamp,
            air_temp: v[Channel::Air],
            road_temp: v[Channel::Road],
            underground_temp: v[Channel::Underground],
            humidity: v[Channel::Humidity],
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.station_id.is_empty() {
            return Err(DataError::Invalid("empty station_id".into()));
        }
        validate_values(&self.values())
    }
}

pub fn validate_values(v: &ChannelValues) -> Result<(), DataError> {
    for ch in Channel::ALL {
        let x = v[ch];
        let (lo, hi) = if ch == Channel::Humidity {
            HUMIDITY_BOUNDS
        } else {
            TEMP_BOUNDS
        };
        if !x.is_finite() || x < lo || x > hi {
            return Err(DataError::Invalid(format!(
                "{ch} = {x} outside [{lo}, {hi}]"
            )));
        }
    }
    Ok(())
}

/// Meteorological forcing accompanying a slot: treated as the forecast
/// meteo for that time when the slot lies ahead of an issue time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Forcing {
    /// W/m²
    pub shortwave_in: f64,
    /// W/m²
    pub longwave_in: f64,
    /// m/s
    pub wind_speed: f64,
    /// kg/(m²·s), positive when freezing
    pub precip_phase_flux: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub timestamp: DateTime<Utc>,
    pub reading: Option<ChannelValues>,
    pub forcing: Option<Forcing>,
}

/// Read access to a slot-indexed station history.
///
/// Implementors must never be asked for `value` at a gap slot; callers check
/// [`SlotSource::is_gap`] first.
pub trait SlotSource {
    fn slot_count(&self) -> usize;
    fn is_gap(&self, slot: usize) -> bool;
    fn value(&self, slot: usize, channel: Channel) -> f64;
    /// Timestamp of `slot`; defined one past the end on regular sources.
    fn slot_time(&self, slot: usize) -> DateTime<Utc>;
    fn forcing(&self, slot: usize) -> Option<Forcing>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationSeries {
    station_id: String,
    cadence: Option<TimeDelta>,
    slots: Vec<Slot>,
}

impl StationSeries {
    /// A raw series: slots are sorted by timestamp but not necessarily evenly
    /// spaced.
    pub fn raw(station_id: impl Into<String>, mut slots: Vec<Slot>) -> Self {
        slots.sort_by_key(|s| s.timestamp);
        StationSeries {
            station_id: station_id.into(),
            cadence: None,
            slots,
        }
    }

    /// A regular series starting at `start` with one slot per cadence step.
    pub fn regular(
        station_id: impl Into<String>,
        start: DateTime<Utc>,
        cadence: TimeDelta,
        readings: Vec<(Option<ChannelValues>, Option<Forcing>)>,
    ) -> Self {
        let slots = readings
            .into_iter()
            .enumerate()
            .map(|(i, (reading, forcing))| Slot {
                timestamp: start + cadence * i as i32,
                reading,
                forcing,
            })
            .collect();
        StationSeries {
            station_id: station_id.into(),
            cadence: Some(cadence),
            slots,
        }
    }

    pub fn station_id(&self) -> &str {
        &self.station_id
    }

    pub fn cadence(&self) -> Option<TimeDelta> {
        self.cadence
    }

    pub fn is_regular(&self) -> bool {
        self.cadence.is_some()
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn slots_mut(&mut self) -> &mut [Slot] {
        &mut self.slots
    }

    pub fn gap_mask(&self) -> Vec<bool> {
        self.slots.iter().map(|s| s.reading.is_none()).collect()
    }

    pub fn observation(&self, slot: usize) -> Option<Observation> {
        let s = self.slots.get(slot)?;
        s.reading
            .map(|v| Observation::from_values(&self.station_id, s.timestamp, v))
    }

    pub fn observations(&self) -> impl Iterator<Item = Observation> + '_ {
        (0..self.len()).filter_map(|i| self.observation(i))
    }

    /// Values of one channel; gaps are `None`.
    pub fn channel(&self, channel: Channel) -> Vec<Option<f64>> {
        self.slots
            .iter()
            .map(|s| s.reading.map(|v| v[channel]))
            .collect()
    }

    /// Index of the slot at `t` on a regular series.
    pub fn slot_of(&self, t: DateTime<Utc>) -> Option<usize> {
        let cadence = self.cadence?;
        let start = self.slots.first()?.timestamp;
        let offset = t - start;
        if offset < TimeDelta::zero() {
            return None;
        }
        let c = cadence.num_seconds();
        let o = offset.num_seconds();
        if o % c != 0 {
            return None;
        }
        let idx = (o / c) as usize;
        (idx < self.len()).then_some(idx)
    }

    /// Sub-series over `range` (regular series keep their cadence).
    pub fn slice(&self, range: std::ops::Range<usize>) -> StationSeries {
        StationSeries {
            station_id: self.station_id.clone(),
            cadence: self.cadence,
            slots: self.slots[range].to_vec(),
        }
    }

    pub fn with_station_id(mut self, id: impl Into<String>) -> Self {
        self.station_id = id.into();
        self
    }
}

impl SlotSource for StationSeries {
    fn slot_count(&self) -> usize {
        self.len()
    }

    fn is_gap(&self, slot: usize) -> bool {
        self.slots.get(slot).is_none_or(|s| s.reading.is_none())
    }

    fn value(&self, slot: usize, channel: Channel) -> f64 {
        self.slots[slot]
            .reading
            .expect("value requested at a gap slot")[channel]
    }

    fn slot_time(&self, slot: usize) -> DateTime<Utc> {
        match (self.slots.get(slot), self.cadence) {
            (Some(s), _) => s.timestamp,
            (None, Some(c)) => self.slots[0].timestamp + c * slot as i32,
            (None, None) => panic!("slot {slot} out of range on a raw series"),
        }
    }

    fn forcing(&self, slot: usize) -> Option<Forcing> {
        self.slots.get(slot).and_then(|s| s.forcing)
    }
}

/// Header names for each logical column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    pub station_id: String,
    pub timestamp: String,
    pub air_temp: String,
    pub road_temp: String,
    pub underground_temp: String,
    pub humidity: String,
    pub shortwave_in: String,
    pub longwave_in: String,
    pub wind_speed: String,
    pub precip_phase_flux: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            station_id: "station_id".into(),
            timestamp: "timestamp".into(),
            air_temp: "air_temp".into(),
            road_temp: "road_temp".into(),
            underground_temp: "underground_temp".into(),
            humidity: "humidity".into(),
            shortwave_in: "shortwave_in".into(),
            longwave_in: "longwave_in".into(),
            wind_speed: "wind_speed".into(),
            precip_phase_flux: "precip_phase_flux".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedRow {
    /// 1-based data row index (header excluded).
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct ParseOutcome {
    pub series: Vec<StationSeries>,
    pub skipped: Vec<SkippedRow>,
    pub duplicate_warnings: usize,
}

pub fn parse_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<ParseOutcome, DataError> {
    let file = std::fs::File::open(path)?;
    parse_csv_reader(file, schema)
}

pub fn parse_csv_reader(reader: impl Read, schema: &CsvSchema) -> Result<ParseOutcome, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let headers = match rdr.headers() {
        Ok(h) => h.clone(),
        Err(e) if matches!(e.kind(), csv::ErrorKind::Io(_)) => return Err(e.into()),
        Err(_) => return Err(DataError::EmptyInput),
    };
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(DataError::EmptyInput);
    }
    let find = |name: &str| headers.iter().position(|h| h == name);
    let required = |name: &str| find(name).ok_or_else(|| DataError::MissingColumn(name.to_string()));
    let cols = [
        required(&schema.station_id)?,
        required(&schema.timestamp)?,
        required(&schema.air_temp)?,
        required(&schema.road_temp)?,
        required(&schema.underground_temp)?,
        required(&schema.humidity)?,
    ];
    let forcing_cols = [
        find(&schema.shortwave_in),
        find(&schema.longwave_in),
        find(&schema.wind_speed),
        find(&schema.precip_phase_flux),
    ];
    let forcing_cols = if forcing_cols.iter().all(Option::is_some) {
        Some(forcing_cols.map(Option::unwrap))
    } else {
        None
    };

    // station -> timestamp -> slot; BTreeMap keeps stations and times ordered.
    let mut by_station: BTreeMap<String, BTreeMap<DateTime<Utc>, Slot>> = BTreeMap::new();
    let mut skipped = Vec::new();
    let mut duplicates = 0usize;
    let mut rows = 0usize;

    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        rows += 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                skipped.push(SkippedRow {
                    row,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        match parse_row(&record, &cols, forcing_cols.as_ref()) {
            Ok((station, slot)) => {
                let series = by_station.entry(station.clone()).or_default();
                if series.insert(slot.timestamp, slot).is_some() {
                    duplicates += 1;
                    warn!(station = %station, row, "duplicate timestamp, keeping the later row");
                }
            }
            Err(reason) => {
                warn!(row, %reason, "skipping unparseable row");
                skipped.push(SkippedRow { row, reason });
            }
        }
    }
    if rows == 0 || by_station.is_empty() {
        return Err(DataError::EmptyInput);
    }
    let series = by_station
        .into_iter()
        .map(|(id, slots)| StationSeries::raw(id, slots.into_values().collect()))
        .collect();
    Ok(ParseOutcome {
        series,
        skipped,
        duplicate_warnings: duplicates,
    })
}

fn parse_row(
    record: &csv::StringRecord,
    cols: &[usize; 6],
    forcing_cols: Option<&[usize; 4]>,
) -> Result<(String, Slot), String> {
    let field = |i: usize| record.get(i).ok_or_else(|| format!("missing field {i}"));
    let station = field(cols[0])?;
    if station.is_empty() {
        return Err("empty station_id".into());
    }
    let ts = field(cols[1])?;
    let timestamp = DateTime::parse_from_rfc3339(ts)
        .map_err(|e| format!("timestamp `{ts}`: {e}"))?
        .with_timezone(&Utc);
    let number = |i: usize| -> Result<Option<f64>, String> {
        let raw = field(i)?;
        if raw.is_empty() {
            return Ok(None);
        }
        raw.parse::<f64>()
            .map(Some)
            .map_err(|_| format!("`{raw}` is not a number"))
    };
    let mut values = [0.0; 4];
    let mut missing = false;
    for (k, &c) in cols[2..].iter().enumerate() {
        match number(c)? {
            Some(v) => values[k] = v,
            None => missing = true,
        }
    }
    let reading = if missing {
        None
    } else {
        let v = ChannelValues(values);
        validate_values(&v).map_err(|e| e.to_string())?;
        Some(v)
    };
    let forcing = match forcing_cols {
        None => None,
        Some(fc) => {
            let f: Vec<Option<f64>> = fc.iter().map(|&c| number(c)).collect::<Result<_, _>>()?;
            if f.iter().all(Option::is_none) {
                None
            } else if f.iter().all(Option::is_some) {
                let forcing = Forcing {
                    shortwave_in: f[0].unwrap(),
                    longwave_in: f[1].unwrap(),
                    wind_speed: f[2].unwrap(),
                    precip_phase_flux: f[3].unwrap(),
                };
                if forcing.shortwave_in < 0.0 || forcing.longwave_in < 0.0 || forcing.wind_speed < 0.0 {
                    return Err("negative radiation or wind speed".into());
                }
                Some(forcing)
            } else {
                return Err("partially filled forcing columns".into());
            }
        }
    };
    if reading.is_none() && forcing.is_none() {
        return Err("row carries neither a reading nor forcing".into());
    }
    Ok((
        station.to_string(),
        Slot {
            timestamp,
            reading,
            forcing,
        },
    ))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, false)
}

/// Writes series in the CSV envelope. Gap slots without forcing are omitted;
/// forcing columns appear when any slot carries forcing.
pub fn write_csv<W: Write>(series: &[StationSeries], writer: W) -> Result<(), DataError> {
    let schema = CsvSchema::default();
    let with_forcing = series
        .iter()
        .any(|s| s.slots().iter().any(|slot| slot.forcing.is_some()));
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![
        schema.station_id.as_str(),
        &schema.timestamp,
        &schema.air_temp,
        &schema.road_temp,
        &schema.underground_temp,
        &schema.humidity,
    ];
    if with_forcing {
        header.extend([
            schema.shortwave_in.as_str(),
            &schema.longwave_in,
            &schema.wind_speed,
            &schema.precip_phase_flux,
        ]);
    }
    w.write_record(&header)?;
    for s in series {
        for slot in s.slots() {
            if slot.reading.is_none() && slot.forcing.is_none() {
                continue;
            }
            let mut rec = vec![s.station_id().to_string(), format_timestamp(&slot.timestamp)];
            for ch in Channel::ALL {
                rec.push(fmt_opt(slot.reading.map(|v| v[ch])));
            }
            if with_forcing {
                let f = slot.forcing;
                rec.push(fmt_opt(f.map(|f| f.shortwave_in)));
                rec.push(fmt_opt(f.map(|f| f.longwave_in)));
                rec.push(fmt_opt(f.map(|f| f.wind_speed)));
                rec.push(fmt_opt(f.map(|f| f.precip_phase_flux)));
            }
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file(series: &[StationSeries], path: impl AsRef<Path>) -> Result<(), DataError> {
    let file = std::fs::File::create(path)?;
    write_csv(series, std::io::BufWriter::new(file))
}

/// Nearest grid slot (epoch-anchored) for `t`; exact half-way ties go to
/// the earlier slot.
pub fn nearest_slot(t: DateTime<Utc>, cadence_secs: i64) -> i64 {
    let secs = t.timestamp();
    let q = secs.div_euclid(cadence_secs);
    let rem = secs.rem_euclid(cadence_secs);
    if 2 * rem > cadence_secs {
        q + 1
    } else {
        q
    }
}

/// Snaps a series onto an epoch-anchored grid of the given cadence.
///
/// When several rows land in one slot the row nearest the slot time wins
/// (earlier row on ties); readings and forcing are chosen independently.
/// Empty slots become gaps. Values are never imputed.
pub fn regularize(series: &StationSeries, cadence: TimeDelta) -> Result<StationSeries, DataError> {
    let c = cadence.num_seconds();
    if c <= 0 || cadence.subsec_nanos() != 0 {
        return Err(DataError::InvalidCadence);
    }
    if series.is_empty() {
        return Ok(StationSeries {
            station_id: series.station_id.clone(),
            cadence: Some(cadence),
            slots: Vec::new(),
        });
    }
    let mut groups: BTreeMap<i64, Vec<&Slot>> = BTreeMap::new();
    for slot in series.slots() {
        groups.entry(nearest_slot(slot.timestamp, c)).or_default().push(slot);
    }
    let rows = series.len();
    let collided: usize = groups.values().filter(|g| g.len() > 1).map(Vec::len).sum();
    if 2 * collided > rows {
        return Err(DataError::CadenceTooCoarse { collided, rows });
    }
    let first = *groups.keys().next().unwrap();
    let last = *groups.keys().next_back().unwrap();
    let start = DateTime::from_timestamp(first * c, 0).expect("grid time in range");
    let mut slots: Vec<Slot> = (0..=(last - first))
        .map(|k| Slot {
            timestamp: start + cadence * k as i32,
            reading: None,
            forcing: None,
        })
        .collect();
    for (k, group) in groups {
        let target = &mut slots[(k - first) as usize];
        let slot_secs = k * c;
        // Raw slots are time-sorted, so min_by_key keeps the earlier row on ties.
        let distance = |s: &&&Slot| (s.timestamp.timestamp() - slot_secs).abs();
        target.reading = group
            .iter()
            .filter(|s| s.reading.is_some())
            .min_by_key(distance)
            .and_then(|s| s.reading);
        target.forcing = group
            .iter()
            .filter(|s| s.forcing.is_some())
            .min_by_key(distance)
            .and_then(|s| s.forcing);
    }
    Ok(StationSeries {
        station_id: series.station_id.clone(),
        cadence: Some(cadence),
        slots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    const HEADER: &str = "station_id,timestamp,air_temp,road_temp,underground_temp,humidity\n";

    fn t(h: u32, m: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2019, 3, 1, h, m, 0).unwrap()
    }

    fn parse(body: &str) -> Result<ParseOutcome, DataError> {
        parse_csv_reader(body.as_bytes(), &CsvSchema::default())
    }

    #[test]
    fn partitions_by_station() {
        let mut body = HEADER.to_string();
        for st in ["B", "A"] {
            for h in 0..3 {
                body.push_str(&format!(
                    "{st},2019-03-01T0{h}:00:00+00:00,1.0,2.0,3.0,50\n"
                ));
            }
        }
        let out = parse(&body).unwrap();
        assert_eq!(out.series.len(), 2);
        assert_eq!(out.series[0].station_id(), "A");
        assert!(out.series.iter().all(|s| s.len() == 3));
        assert!(out.skipped.is_empty());
    }

    #[test]
    fn duplicate_timestamp_keeps_last() {
        let body = format!(
            "{HEADER}S,2019-03-01T00:00:00+00:00,1,2,3,50\n\
             S,2019-03-01T01:00:00+00:00,1,2,3,50\n\
             S,2019-03-01T00:00:00+00:00,9,2,3,50\n"
        );
        let out = parse(&body).unwrap();
        assert_eq!(out.duplicate_warnings, 1);
        let s = &out.series[0];
        assert_eq!(s.len(), 2);
        assert_eq!(s.value(0, Channel::Air), 9.0);
    }

    #[test]
    fn offsets_normalize_to_utc_and_sort() {
        let body = format!(
            "{HEADER}S,2019-03-01T05:00:00+03:00,1,2,3,50\n\
             S,2019-03-01T01:00:00+00:00,1,2,3,50\n"
        );
        let out = parse(&body).unwrap();
        let s = &out.series[0];
        assert_eq!(s.slot_time(0), t(1, 0));
        assert_eq!(s.slot_time(1), t(2, 0));
    }

    #[test]
    fn errors_and_skips() {
        assert!(matches!(parse(""), Err(DataError::EmptyInput)));
        assert!(matches!(parse(HEADER), Err(DataError::EmptyInput)));
        assert!(matches!(
            parse("station_id,timestamp,air_temp,road_temp,humidity\n"),
            Err(DataError::MissingColumn(c)) if c == "underground_temp"
        ));
        let body = format!(
            "{HEADER}S,2019-03-01T00:00:00+00:00,1,2,3,50\n\
             S,not-a-time,1,2,3,50\n\
             S,2019-03-01T02:00:00+00:00,1,2,3,150\n\
             S,2019-03-01T03:00:00,1,2,3,50\n"
        );
        let out = parse(&body).unwrap();
        assert_eq!(out.series[0].len(), 1);
        let rows: Vec<usize> = out.skipped.iter().map(|s| s.row).collect();
        assert_eq!(rows, vec![2, 3, 4]);
    }

    #[test]
    fn empty_fields_become_gaps() {
        let body = format!(
            "{HEADER}S,2019-03-01T00:00:00+00:00,1,2,3,50\n\
             S,2019-03-01T01:00:00+00:00,1,,3,50\n\
             S,2019-03-01T02:00:00+00:00,1,2,3,50\n"
        );
        // the middle row has no forcing either, so it is unusable
        let out = parse(&body).unwrap();
        assert_eq!(out.skipped.len(), 1);
        let reg = regularize(&out.series[0], TimeDelta::hours(1)).unwrap();
        assert_eq!(reg.gap_mask(), vec![false, true, false]);
    }

    #[test]
    fn regular_series_is_fixpoint() {
        let readings = (0..10)
            .map(|i| (Some(ChannelValues([i as f64, 1.0, 2.0, 50.0])), None))
            .collect();
        let s = StationSeries::regular("S", t(0, 0), TimeDelta::hours(1), readings);
        let r = regularize(&s, TimeDelta::hours(1)).unwrap();
        assert_eq!(r, s);
        assert!(r.gap_mask().iter().all(|g| !g));
    }

    #[test]
    fn one_missing_hour_is_one_gap() {
        let slots = [0, 1, 2, 4, 5]
            .iter()
            .map(|&h| Slot {
                timestamp: t(h, 0),
                reading: Some(ChannelValues([1.0, 2.0, 3.0, 40.0])),
                forcing: None,
            })
            .collect();
        let r = regularize(&StationSeries::raw("S", slots), TimeDelta::hours(1)).unwrap();
        assert_eq!(r.len(), 6);
        assert_eq!(r.gap_mask().iter().filter(|&&g| g).count(), 1);
        assert!(r.is_gap(3));
    }

    #[test]
    fn half_way_ties_go_to_earlier_slot() {
        assert_eq!(nearest_slot(t(0, 30), 3600), nearest_slot(t(0, 0), 3600));
        assert_eq!(nearest_slot(t(0, 31), 3600), nearest_slot(t(1, 0), 3600));
    }

    #[test]
    fn coarse_cadence_is_rejected() {
        let slots = (0..6)
            .map(|m| Slot {
                timestamp: t(0, m * 5),
                reading: Some(ChannelValues([1.0, 2.0, 3.0, 40.0])),
                forcing: None,
            })
            .collect();
        let s = StationSeries::raw("S", slots);
        assert!(matches!(
            regularize(&s, TimeDelta::hours(1)),
            Err(DataError::CadenceTooCoarse { collided: 6, rows: 6 })
        ));
        assert!(matches!(
            regularize(&s, TimeDelta::zero()),
            Err(DataError::InvalidCadence)
        ));
    }
}
