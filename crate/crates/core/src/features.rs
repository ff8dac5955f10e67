//! Regression inputs: lagged sensor history, cyclic calendar encodings and
//! the physical model's own prediction.
//!
//! Row layout (lag-major):
//!
//! ```text
//! [lag1: air road underground humidity] … [lagL: …] day_sin day_cos hour_sin hour_cos [physical]
//! ```
//!
//! where lag1 is the slot immediately before the reference slot.

use std::f64::consts::TAU;

use chrono::{DateTime, Datelike, NaiveDate, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::channel::{Channel, Horizon};
use crate::data::SlotSource;

pub const FEATURE_LAYOUT_VERSION: u32 = 1;
pub const DEFAULT_LAG_WINDOW: usize = 6;
const CYCLIC_WIDTH: usize = 4;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FeatureError {
    #[error("{what} = {value} out of range")]
    OutOfRange { what: &'static str, value: i64 },
    #[error("slot {slot} needs {lag} prior slots (series has {len})")]
    IndexOutOfBounds { slot: usize, lag: usize, len: usize },
    #[error("layout expects {expected} physical inputs, got {got}")]
    PhysicalInputs { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CyclicEncoding {
    pub day_sin: f64,
    pub day_cos: f64,
    pub hour_sin: f64,
    pub hour_cos: f64,
}

impl CyclicEncoding {
    pub fn as_array(&self) -> [f64; 4] {
        [self.day_sin, self.day_cos, self.hour_sin, self.hour_cos]
    }
}

pub(crate) fn cyclic_unchecked(day: f64, days_in_year: f64, hour: f64) -> CyclicEncoding {
    let (day_sin, day_cos) = (TAU * day / days_in_year).sin_cos();
    let (hour_sin, hour_cos) = (TAU * hour / 24.0).sin_cos();
    CyclicEncoding {
        day_sin,
        day_cos,
        hour_sin,
        hour_cos,
    }
}

/// Encodes day of year and hour of day on the unit circle (one full turn per
/// year and per day).
pub fn encode_cyclic(
    day_of_year: u32,
    days_in_year: u32,
    hour: u32,
) -> Result<CyclicEncoding, FeatureError> {
    if days_in_year != 365 && days_in_year != 366 {
        return Err(FeatureError::OutOfRange {
            what: "days_in_year",
            value: days_in_year as i64,
        });
    }
    if day_of_year < 1 || day_of_year > days_in_year {
        return Err(FeatureError::OutOfRange {
            what: "day_of_year",
            value: day_of_year as i64,
        });
    }
    if hour > 23 {
        return Err(FeatureError::OutOfRange {
            what: "hour",
            value: hour as i64,
        });
    }
    Ok(cyclic_unchecked(
        day_of_year as f64,
        days_in_year as f64,
        hour as f64,
    ))
}

pub fn days_in_year(year: i32) -> u32 {
    if NaiveDate::from_ymd_opt(year, 2, 29).is_some() {
        366
    } else {
        365
    }
}

pub fn encode_time(t: DateTime<Utc>) -> CyclicEncoding {
    encode_cyclic(t.ordinal(), days_in_year(t.year()), t.hour())
        .expect("calendar fields are always in range")
}

/// Shape of a model's input row. One layout per trained model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub version: u32,
    pub lag_window: usize,
    /// Whether the row ends with the physical model's prediction.
    pub physical_input: bool,
}

impl FeatureLayout {
    pub fn new(lag_window: usize, physical_input: bool) -> Self {
        FeatureLayout {
            version: FEATURE_LAYOUT_VERSION,
            lag_window,
            physical_input,
        }
    }

    /// Layout used by the residual corrector.
    pub fn correction(lag_window: usize) -> Self {
        Self::new(lag_window, true)
    }

    /// Layout used by the anomaly-facing predictor (no physical inputs).
    pub fn anomaly(lag_window: usize) -> Self {
        Self::new(lag_window, false)
    }

    pub fn dimension(&self) -> usize {
        self.lag_window * Channel::ALL.len() + CYCLIC_WIDTH + usize::from(self.physical_input)
    }
}

impl Default for FeatureLayout {
    fn default() -> Self {
        Self::correction(DEFAULT_LAG_WINDOW)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    /// `lag_window × 4` values, lag-major, most recent first.
    pub lagged_values: Vec<f64>,
    pub cyclic: CyclicEncoding,
    pub physical_preds: Vec<f64>,
    pub target_channel: Channel,
    pub horizon: Horizon,
}

impl FeatureVector {
    pub fn dimension(&self) -> usize {
        self.lagged_values.len() + CYCLIC_WIDTH + self.physical_preds.len()
    }

    pub fn write_row(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.lagged_values);
        out.extend_from_slice(&self.cyclic.as_array());
        out.extend_from_slice(&self.physical_preds);
    }

    pub fn to_row(&self) -> Vec<f64> {
        let mut row = Vec::with_capacity(self.dimension());
        self.write_row(&mut row);
        row
    }
}

/// Builds the input row for predicting at slot `t` from the `lag_window`
/// slots strictly before it.
///
/// Returns `Ok(None)` (skip) when any slot in the lag window is a gap; gap
/// slots are never read. `t` may be one past the end of the source.
pub fn build_features<S: SlotSource + ?Sized>(
    source: &S,
    t: usize,
    channel: Channel,
    horizon: Horizon,
    physical_pred: Option<f64>,
    layout: &FeatureLayout,
) -> Result<Option<FeatureVector>, FeatureError> {
    let lag = layout.lag_window;
    let len = source.slot_count();
    if t < lag || t > len {
        return Err(FeatureError::IndexOutOfBounds { slot: t, lag, len });
    }
    let expected = usize::from(layout.physical_input);
    let got = usize::from(physical_pred.is_some());
    if expected != got {
        return Err(FeatureError::PhysicalInputs { expected, got });
    }
    if (t - lag..t).any(|s| source.is_gap(s)) {
        return Ok(None);
    }
    let mut lagged_values = Vec::with_capacity(lag * Channel::ALL.len());
    for k in 1..=lag {
        for ch in Channel::ALL {
            lagged_values.push(source.value(t - k, ch));
        }
    }
    Ok(Some(FeatureVector {
        lagged_values,
        cyclic: encode_time(source.slot_time(t)),
        physical_preds: physical_pred.into_iter().collect(),
        target_channel: channel,
        horizon,
    }))
}
