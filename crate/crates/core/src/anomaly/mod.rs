//! Residual-threshold sensor fault detection.

mod inject;
mod labels;
mod predictor;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::channel::Channel;

pub use inject::{inject, inject_all, InjectionKind, InjectionSpec, InjectionUnits};
pub use labels::{read_labels_csv, write_labels_csv, LabelRecord};
pub use predictor::{anomaly_targets, AnomalyPredictor, Backbone, SCREEN_RUN};

#[derive(Debug, thiserror::Error)]
pub enum AnomalyError {
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("threshold must be finite and > 0, got {0}")]
    InvalidThreshold(f64),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("labels contain a single class")]
    DegenerateLabels,
    #[error("series of {len} slots cannot hold events of {needed}")]
    SpanTooShort { len: usize, needed: usize },
    #[error("could not place {requested} non-overlapping events")]
    OverlapExhaustion { requested: usize },
    #[error("gap at slot {0} inside the injection span")]
    GapInSpan(usize),
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Feature(#[from] crate::features::FeatureError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// `+1` normal, `−1` anomaly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
pub enum AnomalyLabel {
    Normal,
    Anomaly,
}

impl AnomalyLabel {
    pub fn value(self) -> i8 {
        match self {
            AnomalyLabel::Normal => 1,
            AnomalyLabel::Anomaly => -1,
        }
    }

    pub fn is_anomaly(self) -> bool {
        self == AnomalyLabel::Anomaly
    }
}

impl From<AnomalyLabel> for i8 {
    fn from(l: AnomalyLabel) -> i8 {
        l.value()
    }
}

impl TryFrom<i8> for AnomalyLabel {
    type Error = String;

    fn try_from(v: i8) -> Result<Self, String> {
        match v {
            1 => Ok(AnomalyLabel::Normal),
            -1 => Ok(AnomalyLabel::Anomaly),
            _ => Err(format!("label must be 1 or -1, got {v}")),
        }
    }
}

/// Per-channel thresholds and the quarantine policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub air: f64,
    pub road: f64,
    pub underground: f64,
    pub humidity: f64,
    /// Quarantine window, slots.
    pub window: usize,
    /// Anomalies within the window that trip quarantine.
    pub count: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            air: 1.0,
            road: 1.0,
            underground: 0.5,
            humidity: 5.0,
            window: 24,
            count: 3,
        }
    }
}

impl DetectorConfig {
    pub fn threshold(&self, channel: Channel) -> f64 {
        match channel {
            Channel::Air => self.air,
            Channel::Road => self.road,
            Channel::Underground => self.underground,
            Channel::Humidity => self.humidity,
        }
    }

    pub fn set_threshold(&mut self, channel: Channel, delta: f64) {
        *match channel {
            Channel::Air => &mut self.air,
            Channel::Road => &mut self.road,
            Channel::Underground => &mut self.underground,
            Channel::Humidity => &mut self.humidity,
        } = delta;
    }

    pub fn validate(&self) -> Result<(), AnomalyError> {
        for ch in Channel::ALL {
            let d = self.threshold(ch);
            if !(d.is_finite() && d > 0.0) {
                return Err(AnomalyError::InvalidThreshold(d));
            }
        }
        if !(1 <= self.count && self.count <= self.window) {
            return Err(AnomalyError::InvalidSpec(format!(
                "quarantine count {} outside 1..={}",
                self.count, self.window
            )));
        }
        Ok(())
    }
}

/// `+1` iff `|actual − predicted| ≤ delta`.
pub fn detect(actual: f64, predicted: f64, delta: f64) -> Result<AnomalyLabel, AnomalyError> {
    if !actual.is_finite() || !predicted.is_finite() {
        return Err(AnomalyError::NonFiniteInput);
    }
    if !(delta.is_finite() && delta > 0.0) {
        return Err(AnomalyError::InvalidThreshold(delta));
    }
    Ok(label_for(actual - predicted, delta))
}

fn label_for(residual: f64, delta: f64) -> AnomalyLabel {
    if residual.abs() <= delta {
        AnomalyLabel::Normal
    } else {
        AnomalyLabel::Anomaly
    }
}

/// Confusion counts with the anomaly class as positive.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `2TP / (2TP + FP + FN)`, equal to `2pr/(p+r)`.
    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    /// `pr/(p+r)`: half of [`Confusion::f1`].
    pub fn paper_f1(&self) -> f64 {
        ratio(self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    /// Orders by f1 exactly, without rounding.
    pub fn cmp_f1(&self, other: &Confusion) -> Ordering {
        let (a, b) = (self.tp as u128, (2 * self.tp + self.fp + self.fn_) as u128);
        let (c, d) = (other.tp as u128, (2 * other.tp + other.fp + other.fn_) as u128);
        match (b, d) {
            (0, 0) => Ordering::Equal,
            (0, _) => 0.cmp(&c),
            (_, 0) => a.cmp(&0),
            _ => (a * d).cmp(&(c * b)),
        }
    }

    pub fn add(&mut self, truth: AnomalyLabel, pred: AnomalyLabel) {
        match (truth.is_anomaly(), pred.is_anomaly()) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (true, false) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn merge(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub paper_f1: f64,
    pub confusion: Confusion,
}

impl From<Confusion> for Scores {
    fn from(c: Confusion) -> Self {
        Scores {
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
            paper_f1: c.paper_f1(),
            confusion: c,
        }
    }
}

pub fn confusion(pred: &[AnomalyLabel], truth: &[AnomalyLabel]) -> Result<Confusion, AnomalyError> {
    if pred.len() != truth.len() {
        return Err(AnomalyError::LengthMismatch(pred.len(), truth.len()));
    }
    let mut c = Confusion::default();
    for (p, t) in pred.iter().zip(truth) {
        c.add(*t, *p);
    }
    Ok(c)
}

pub fn score(pred: &[AnomalyLabel], truth: &[AnomalyLabel]) -> Result<Scores, AnomalyError> {
    Ok(confusion(pred, truth)?.into())
}

/// Optimization target of [`tune_threshold_by`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    F1,
    PaperF1,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TunedThreshold {
    pub delta: f64,
    pub scores: Scores,
}

/// F1-optimal threshold over `|residual|` values.
pub fn tune_threshold(residuals: &[f64], truth: &[AnomalyLabel]) -> Result<TunedThreshold, AnomalyError> {
    tune_threshold_by(residuals, truth, Objective::F1)
}

/// Sweeps thresholds at the midpoints between consecutive distinct
/// magnitudes plus one below the smallest and one above the largest, and
/// returns the best; ties go to the larger threshold.
pub fn tune_threshold_by(
    residuals: &[f64],
    truth: &[AnomalyLabel],
    objective: Objective,
) -> Result<TunedThreshold, AnomalyError> {
    if residuals.len() != truth.len() {
        return Err(AnomalyError::LengthMismatch(residuals.len(), truth.len()));
    }
    if residuals.iter().any(|r| !r.is_finite()) {
        return Err(AnomalyError::NonFiniteInput);
    }
    let positives = truth.iter().filter(|l| l.is_anomaly()).count() as u64;
    let negatives = truth.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(AnomalyError::DegenerateLabels);
    }
    let mut order: Vec<(f64, bool)> = residuals
        .iter()
        .zip(truth)
        .map(|(r, l)| (r.abs(), l.is_anomaly()))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Groups of equal magnitude with their class counts.
    let mut groups: Vec<(f64, u64, u64)> = Vec::new();
    for (m, anom) in order {
        match groups.last_mut() {
            Some(g) if g.0 == m => {
                if anom {
                    g.1 += 1
                } else {
                    g.2 += 1
                }
            }
            _ => groups.push((m, u64::from(anom), u64::from(!anom))),
        }
    }

    // Candidate k flags everything in groups k.. as anomalous.
    let mut candidates: Vec<(f64, Confusion)> = Vec::with_capacity(groups.len() + 1);
    let top = groups.last().unwrap().0;
    candidates.push((top + top.max(1.0), Confusion {
        tp: 0,
        fp: 0,
        fn_: positives,
        tn: negatives,
    }));
    let (mut flagged_pos, mut flagged_neg) = (0u64, 0u64);
    for k in (0..groups.len()).rev() {
        flagged_pos += groups[k].1;
        flagged_neg += groups[k].2;
        let delta = if k == 0 { groups[0].0 / 2.0 } else { 0.5 * (groups[k - 1].0 + groups[k].0) };
        if delta <= 0.0 {
            // zero residuals always pass a positive threshold
            continue;
        }
        candidates.push((delta, Confusion {
            tp: flagged_pos,
            fp: flagged_neg,
            fn_: positives - flagged_pos,
            tn: negatives - flagged_neg,
        }));
    }
    // candidates run from the largest delta down, so keeping the first
    // maximum breaks ties toward the larger threshold
    let better = |a: &Confusion, b: &Confusion| match objective {
        Objective::F1 => a.cmp_f1(b) == Ordering::Greater,
        Objective::PaperF1 => a.paper_f1() > b.paper_f1(),
    };
    let mut best = candidates[0];
    for c in &candidates[1..] {
        if better(&c.1, &best.1) {
            best = *c;
        }
    }
    Ok(TunedThreshold {
        delta: best.0,
        scores: best.1.into(),
    })
}

/// Labels for a residual stream under threshold `delta`.
pub fn label_residuals(residuals: &[f64], delta: f64) -> Vec<AnomalyLabel> {
    residuals.iter().map(|r| label_for(*r, delta)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateDecision {
    Pass,
    Quarantined,
}

/// Quarantined iff at least `cfg.count` of the most recent `cfg.window`
/// labels are anomalies.
pub fn quarantine_gate(recent: &[AnomalyLabel], cfg: &DetectorConfig) -> GateDecision {
    let tail = &recent[recent.len().saturating_sub(cfg.window)..];
    if tail.iter().filter(|l| l.is_anomaly()).count() >= cfg.count {
        GateDecision::Quarantined
    } else {
        GateDecision::Pass
    }
}
