//! Offline pipeline: parse, regularize, train the correction grid, fit the
//! one-step predictor and tune its thresholds on injected faults.

use std::fs;
use std::path::Path;

use chrono::{DateTime, TimeDelta, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anomaly::{
    inject_all, tune_threshold, AnomalyError, AnomalyLabel, AnomalyPredictor, DetectorConfig, LabelRecord,
};
use crate::channel::{Channel, Horizon};
use crate::config::{Config, PhysicsConfig};
use crate::correction::{
    build_datasets, cells, correct, correction_features, physical_forecasts, train_grid, CellReport,
    CorrectionError, ModelGrid, StationForecasts,
};
use crate::data::{parse_csv, regularize, DataError, SlotSource, StationSeries};
use crate::energy_balance::PhysicalForecast;
use crate::features::FeatureLayout;

pub const GRID_DIR: &str = "grid";
pub const DETECTOR_DIR: &str = "detector";
pub const THRESHOLDS_FILE: &str = "thresholds.json";
pub const SETTINGS_FILE: &str = "settings.json";
pub const REPORT_FILE: &str = "train_report.json";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Data { path: String, source: DataError },
    #[error(transparent)]
    Correction(#[from] CorrectionError),
    #[error(transparent)]
    Anomaly(#[from] AnomalyError),
    #[error("not enough clean data: {0}")]
    InsufficientData(String),
    #[error("{path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Parses a CSV and puts every station on the configured cadence grid.
pub fn load_series(path: impl AsRef<Path>, cfg: &Config) -> Result<Vec<StationSeries>, PipelineError> {
    let path = path.as_ref();
    let wrap = |source| PipelineError::Data {
        path: path.display().to_string(),
        source,
    };
    let parsed = parse_csv(path, &cfg.data.schema).map_err(wrap)?;
    if !parsed.skipped.is_empty() {
        tracing::warn!(skipped = parsed.skipped.len(), "unparseable rows skipped");
    }
    let cadence = TimeDelta::minutes(cfg.data.cadence_minutes);
    parsed
        .series
        .iter()
        .map(|s| regularize(s, cadence).map_err(wrap))
        .collect()
}

/// Everything the online service and the batch commands need.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifacts {
    pub grid: ModelGrid,
    pub predictor: AnomalyPredictor,
    pub detector: DetectorConfig,
    pub settings: Settings,
}

/// Settings the models were trained under and must be served with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub cadence_minutes: i64,
    pub physics: PhysicsConfig,
}

impl Settings {
    pub fn from_config(cfg: &Config) -> Self {
        Settings {
            cadence_minutes: cfg.data.cadence_minutes,
            physics: cfg.physics.clone(),
        }
    }
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(v).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, PipelineError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| PipelineError::Json {
        path: path.display().to_string(),
        source,
    })
}

impl Artifacts {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), PipelineError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        self.grid.save_dir(dir.join(GRID_DIR))?;
        self.predictor.save_dir(dir.join(DETECTOR_DIR))?;
        write_json(&dir.join(DETECTOR_DIR).join(THRESHOLDS_FILE), &self.detector)?;
        write_json(&dir.join(SETTINGS_FILE), &self.settings)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let dir = dir.as_ref();
        let detector: DetectorConfig = read_json(&dir.join(DETECTOR_DIR).join(THRESHOLDS_FILE))?;
        detector.validate()?;
        Ok(Artifacts {
            grid: ModelGrid::load_dir(dir.join(GRID_DIR))?,
            predictor: AnomalyPredictor::load_dir(dir.join(DETECTOR_DIR))?,
            detector,
            settings: read_json(&dir.join(SETTINGS_FILE))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub channel: Channel,
    pub horizon: Horizon,
    pub rows: usize,
    pub seed: u64,
    pub initial_mae: f64,
    pub final_mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelTuning {
    pub channel: Channel,
    pub threshold: f64,
    pub f1: f64,
    pub anomalies: u64,
    pub samples: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub grid_version: String,
    pub stations: Vec<String>,
    pub cells: Vec<CellSummary>,
    pub model_stations: Vec<String>,
    pub threshold_stations: Vec<String>,
    pub tuning: Vec<ChannelTuning>,
}

impl TrainReport {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PipelineError> {
        write_json(path.as_ref(), self)
    }
}

pub fn train_correction(
    stations: &[StationSeries],
    cfg: &Config,
) -> Result<(ModelGrid, Vec<CellReport>), PipelineError> {
    let layout = FeatureLayout::correction(cfg.lag_window);
    let phys = &cfg.physics;
    let forecasts: Vec<Vec<Option<PhysicalForecast>>> = stations
        .par_iter()
        .map(|s| physical_forecasts(s, &phys.column, &phys.surface))
        .collect::<Result<_, _>>()?;
    let inputs: Vec<StationForecasts<'_>> = stations
        .iter()
        .zip(&forecasts)
        .map(|(series, f)| StationForecasts { series, forecasts: f })
        .collect();
    let datasets = build_datasets(&inputs, &layout)?;
    Ok(train_grid(&datasets, &cfg.correction)?)
}

/// Longest stretch of consecutive observed slots.
pub fn longest_clean_run(series: &StationSeries) -> std::ops::Range<usize> {
    let mut best = 0..0;
    let mut start = 0;
    for t in 0..=series.len() {
        if t == series.len() || series.is_gap(t) {
            if t - start > best.len() {
                best = start..t;
            }
            start = t + 1;
        }
    }
    best
}

struct TuningSet {
    series: StationSeries,
    labels: Vec<Vec<AnomalyLabel>>,
}

fn tuning_sets(stations: &[&StationSeries], cfg: &Config) -> Result<Vec<TuningSet>, PipelineError> {
    let needed = cfg.detector.injection.iter().map(|s| s.max_length()).max().unwrap_or(1) + cfg.lag_window;
    let mut out = Vec::new();
    for (i, s) in stations.iter().enumerate() {
        let run = longest_clean_run(s);
        if run.len() < needed {
            tracing::warn!(station = s.station_id(), "no clean run long enough for fault injection");
            continue;
        }
        let mut series = s.slice(run);
        let mut labels = Vec::with_capacity(4);
        for ch in Channel::ALL {
            let base = crate::derive_seed(cfg.seed, 3_000 + 10 * i as u64 + ch.index() as u64);
            let specs: Vec<_> = cfg
                .detector
                .injection
                .iter()
                .enumerate()
                .map(|(k, spec)| crate::anomaly::InjectionSpec {
                    seed: crate::derive_seed(base, k as u64),
                    ..spec.clone()
                })
                .collect();
            let (next, l) = inject_all(&series, ch, &specs)?;
            series = next;
            labels.push(l);
        }
        out.push(TuningSet { series, labels });
    }
    if out.is_empty() {
        return Err(PipelineError::InsufficientData(format!(
            "threshold tuning needs a gap-free run of {needed} slots"
        )));
    }
    Ok(out)
}

/// Tunes per-channel thresholds of `predictor` on injected faults in
/// `stations`. Truly faulty slots are screened from the lag history.
pub fn tune_thresholds(
    predictor: &AnomalyPredictor,
    stations: &[&StationSeries],
    cfg: &Config,
) -> Result<(DetectorConfig, Vec<ChannelTuning>), PipelineError> {
    let sets = tuning_sets(stations, cfg)?;
    let mut detector = cfg.detector.policy.clone();
    let mut tuning = Vec::new();
    for ch in Channel::ALL {
        let mut r = Vec::new();
        let mut l = Vec::new();
        for set in &sets {
            let truth = &set.labels[ch.index()];
            let res = predictor.screened_residuals(&set.series, ch, |t, _| truth[t].is_anomaly())?;
            for (t, v) in res.into_iter().enumerate() {
                if let Some(v) = v {
                    r.push(v);
                    l.push(truth[t]);
                }
            }
        }
        let tuned = tune_threshold(&r, &l)?;
        if !(tuned.delta > 0.0) {
            return Err(AnomalyError::InvalidThreshold(tuned.delta).into());
        }
        detector.set_threshold(ch, tuned.delta);
        let c = tuned.scores.confusion;
        tuning.push(ChannelTuning {
            channel: ch,
            threshold: tuned.delta,
            f1: tuned.scores.f1,
            anomalies: c.tp + c.fn_,
            samples: c.tp + c.fp + c.fn_ + c.tn,
        });
    }
    Ok((detector, tuning))
}

/// The full offline pipeline on regularized stations.
pub fn train(stations: &[StationSeries], cfg: &Config) -> Result<(Artifacts, TrainReport), PipelineError> {
    if stations.is_empty() {
        return Err(PipelineError::Data {
            path: "<input>".into(),
            source: DataError::EmptyInput,
        });
    }
    let (grid, reports) = train_correction(stations, cfg)?;

    let n = stations.len();
    let (model, threshold): (Vec<&StationSeries>, Vec<&StationSeries>) = if n == 1 {
        (vec![&stations[0]], vec![&stations[0]])
    } else {
        let k = ((cfg.detector.model_station_fraction * n as f64).round() as usize).clamp(1, n - 1);
        (stations[..k].iter().collect(), stations[k..].iter().collect())
    };
    let layout = FeatureLayout::anomaly(cfg.lag_window);
    let predictor = AnomalyPredictor::fit(&model, &cfg.detector.backbone, layout)?;
    let (detector, tuning) = tune_thresholds(&predictor, &threshold, cfg)?;

    let ids = |v: &[&StationSeries]| v.iter().map(|s| s.station_id().to_string()).collect();
    let report = TrainReport {
        grid_version: grid.version(),
        stations: stations.iter().map(|s| s.station_id().to_string()).collect(),
        cells: reports
            .iter()
            .map(|r| CellSummary {
                channel: r.channel,
                horizon: r.horizon,
                rows: r.report.rows,
                seed: r.seed,
                initial_mae: r.report.initial_mae(),
                final_mae: r.report.final_mae(),
            })
            .collect(),
        model_stations: ids(&model),
        threshold_stations: ids(&threshold),
        tuning,
    };
    Ok((
        Artifacts {
            grid,
            predictor,
            detector,
            settings: Settings::from_config(cfg),
        },
        report,
    ))
}

/// Online detection over whole series, one record per predicted slot.
pub fn detect_stations(stations: &[StationSeries], artifacts: &Artifacts) -> Result<Vec<LabelRecord>, PipelineError> {
    let mut out = Vec::new();
    for s in stations {
        for ch in Channel::ALL {
            let res = artifacts
                .predictor
                .detect_series(s, ch, artifacts.detector.threshold(ch))?;
            for (t, r) in res.into_iter().enumerate() {
                if let Some((residual, label)) = r {
                    out.push(LabelRecord {
                        station_id: s.station_id().to_string(),
                        timestamp: s.slot_time(t),
                        channel: ch,
                        label,
                        residual,
                    });
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectedForecast {
    pub station_id: String,
    pub issue_time: DateTime<Utc>,
    pub channel: Channel,
    pub horizon: Horizon,
    pub physical: f64,
    pub corrected: f64,
}

/// Physical and corrected forecasts at every issue slot where both exist.
pub fn correct_stations(
    stations: &[StationSeries],
    artifacts: &Artifacts,
) -> Result<Vec<CorrectedForecast>, PipelineError> {
    let phys = &artifacts.settings.physics;
    let layout = *artifacts.grid.layout();
    let mut out = Vec::new();
    for s in stations {
        let forecasts = physical_forecasts(s, &phys.column, &phys.surface)?;
        for (issue, fc) in forecasts.iter().enumerate() {
            let Some(fc) = fc else { continue };
            for (c, h) in cells() {
                let physical = fc.get(c, h);
                let Some(x) = correction_features(s, issue, c, h, physical, &layout).map_err(CorrectionError::from)?
                else {
                    continue;
                };
                out.push(CorrectedForecast {
                    station_id: s.station_id().to_string(),
                    issue_time: s.slot_time(issue),
                    channel: c,
                    horizon: h,
                    physical,
                    corrected: correct(physical, &x, &artifacts.grid)?,
                });
            }
        }
    }
    Ok(out)
}
