//! Synthetic benchmarks: forecast error by variant and detector scores by
//! backbone, with per-row audit trails.

mod scenario;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::path::Path;

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use scenario::{
    default_corruption, generate_scenario, BenchmarkScenario, ScenarioData, SensorNoise, TrafficHeat, WeatherDriver,
    HOLDOUT_CONTEXT,
};

use crate::anomaly::{
    inject_all, read_labels_csv, tune_threshold, write_labels_csv, AnomalyError,
    AnomalyLabel, AnomalyPredictor, Backbone, Confusion, DetectorConfig, LabelRecord, Scores,
};
use crate::channel::{Channel, Horizon};
use crate::correction::{
    build_datasets, cells, correct, correction_features, physical_forecasts, train_grid, CellReport,
    CorrectionError, ModelGrid, StationForecasts,
};
use crate::data::{SlotSource, StationSeries};
use crate::energy_balance::{PhysicalForecast, PhysicsError, SurfaceParams};
use crate::features::{FeatureLayout, DEFAULT_LAG_WINDOW};
use crate::gbdt::TrainConfig;

pub const TABLE1: &str = "table1.csv";
pub const TABLE2: &str = "table2.csv";
pub const FORECAST_AUDIT: &str = "forecast_audit.csv";
pub const TRUTH_LABELS: &str = "labels_truth.csv";

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("invalid scenario: {0}")]
    SpecInvalid(String),
    #[error("held-out data drew no injected anomalies")]
    DegenerateLabels,
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error(transparent)]
    Correction(#[from] CorrectionError),
    #[error(transparent)]
    Anomaly(#[from] AnomalyError),
    #[error(transparent)]
    Feature(#[from] crate::features::FeatureError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Model settings shared by both benchmarks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub lag_window: usize,
    pub correction: TrainConfig,
    pub detector: TrainConfig,
    /// Candidate regularization strengths for the ridge backbone.
    pub ridge_lambdas: Vec<f64>,
    /// Share of training stations used to fit predictors; the rest tune
    /// thresholds.
    pub model_station_fraction: f64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            lag_window: DEFAULT_LAG_WINDOW,
            correction: TrainConfig::default(),
            detector: TrainConfig::default(),
            ridge_lambdas: vec![0.01, 0.1, 1.0, 10.0],
            model_station_fraction: 0.7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    WithAnomalies,
    MetroOnly,
    Corrected,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::WithAnomalies, Variant::MetroOnly, Variant::Corrected];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRow {
    pub channel: Channel,
    pub horizon: Horizon,
    pub variant: Variant,
    pub mae: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastAuditRow {
    pub station_id: String,
    pub issue_time: DateTime<Utc>,
    pub channel: Channel,
    pub horizon: Horizon,
    pub variant: Variant,
    pub predicted: f64,
    pub actual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorRow {
    pub algorithm: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub paper_f1: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl DetectorRow {
    fn new(algorithm: &str, s: Scores) -> Self {
        DetectorRow {
            algorithm: algorithm.into(),
            precision: s.precision,
            recall: s.recall,
            f1: s.f1,
            paper_f1: s.paper_f1,
            tp: s.confusion.tp,
            fp: s.confusion.fp,
            fn_: s.confusion.fn_,
            tn: s.confusion.tn,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportTable {
    pub forecast: Vec<ForecastRow>,
    pub detector: Vec<DetectorRow>,
}

impl ReportTable {
    pub fn forecast_mae(&self, channel: Channel, horizon: Horizon, variant: Variant) -> Option<f64> {
        self.forecast
            .iter()
            .find(|r| r.channel == channel && r.horizon == horizon && r.variant == variant)
            .map(|r| r.mae)
    }

    pub fn detector(&self, algorithm: &str) -> Option<&DetectorRow> {
        self.detector.iter().find(|r| r.algorithm == algorithm)
    }

    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<(), EvalError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        if !self.forecast.is_empty() {
            write_csv(&dir.join(TABLE1), &self.forecast)?;
        }
        if !self.detector.is_empty() {
            write_csv(&dir.join(TABLE2), &self.detector)?;
        }
        Ok(())
    }

    /// Reads whichever of the two tables exist in `dir`.
    pub fn read_dir(dir: impl AsRef<Path>) -> Result<Self, EvalError> {
        let dir = dir.as_ref();
        let mut t = ReportTable::default();
        if dir.join(TABLE1).exists() {
            t.forecast = read_csv(&dir.join(TABLE1))?;
        }
        if dir.join(TABLE2).exists() {
            t.detector = read_csv(&dir.join(TABLE2))?;
        }
        Ok(t)
    }

    /// Rebuilds both tables from the audit files in `dir`.
    pub fn recompute_from_audit(dir: impl AsRef<Path>) -> Result<Self, EvalError> {
        let dir = dir.as_ref();
        let mut t = ReportTable::default();
        if dir.join(FORECAST_AUDIT).exists() {
            t.forecast = summarize_forecasts(&read_csv(&dir.join(FORECAST_AUDIT))?);
        }
        if dir.join(TRUTH_LABELS).exists() {
            let truth = read_label_file(&dir.join(TRUTH_LABELS))?;
            for algo in ["gbdt", "ridge"] {
                let p = dir.join(label_file(algo));
                if p.exists() {
                    t.detector.push(summarize_detector(algo, &read_label_file(&p)?, &truth)?);
                }
            }
        }
        Ok(t)
    }
}

pub fn label_file(algorithm: &str) -> String {
    format!("labels_{algorithm}.csv")
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(path))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, EvalError> {
    csv::Reader::from_path(path)?
        .deserialize()
        .map(|r| r.map_err(EvalError::from))
        .collect()
}

fn read_label_file(path: &Path) -> Result<Vec<LabelRecord>, EvalError> {
    Ok(read_labels_csv(File::open(path).map_err(io_err(path))?)?)
}

fn write_label_file(path: &Path, rows: &[LabelRecord]) -> Result<(), EvalError> {
    Ok(write_labels_csv(rows, File::create(path).map_err(io_err(path))?)?)
}

/// MAE per (channel, horizon, variant), accumulated in audit order.
pub fn summarize_forecasts(audit: &[ForecastAuditRow]) -> Vec<ForecastRow> {
    let mut acc: BTreeMap<(usize, usize, Variant), (f64, usize)> = BTreeMap::new();
    for r in audit {
        let e = acc
            .entry((r.channel.index(), r.horizon.index(), r.variant))
            .or_insert((0.0, 0));
        e.0 += (r.predicted - r.actual).abs();
        e.1 += 1;
    }
    let mut rows = Vec::new();
    for (c, h) in cells() {
        for v in Variant::ALL {
            if let Some((sum, n)) = acc.get(&(c.index(), h.index(), v)) {
                rows.push(ForecastRow {
                    channel: c,
                    horizon: h,
                    variant: v,
                    mae: sum / *n as f64,
                    n: *n,
                });
            }
        }
    }
    rows
}

/// Scores pooled over channels, pairing predicted and true label rows by
/// position.
pub fn summarize_detector(
    algorithm: &str,
    predicted: &[LabelRecord],
    truth: &[LabelRecord],
) -> Result<DetectorRow, EvalError> {
    if predicted.len() != truth.len() {
        return Err(AnomalyError::LengthMismatch(predicted.len(), truth.len()).into());
    }
    let mut c = Confusion::default();
    for (p, t) in predicted.iter().zip(truth) {
        if p.station_id != t.station_id || p.timestamp != t.timestamp || p.channel != t.channel {
            return Err(EvalError::SpecInvalid("label files are not aligned".into()));
        }
        c.add(t.label, p.label);
    }
    Ok(DetectorRow::new(algorithm, c.into()))
}

/// Surface parameters of the forecaster: the scenario's surface without
/// the traffic term it cannot know about.
fn forecaster_params(spec: &BenchmarkScenario) -> SurfaceParams {
    SurfaceParams {
        anthropogenic: 0.0,
        ..spec.surface
    }
}

/// Corrupts every channel of `series` (with the forecast corruption suite
/// for [`PURPOSE_FORECAST`], the injection suite otherwise), returning the corrupted copy and
/// per-channel truth labels.
pub fn corrupt_station(
    spec: &BenchmarkScenario,
    purpose: u64,
    station: usize,
    series: &StationSeries,
) -> Result<(StationSeries, Vec<Vec<AnomalyLabel>>), EvalError> {
    let mut out = series.clone();
    let mut labels = Vec::with_capacity(4);
    for ch in Channel::ALL {
        let specs = if purpose == PURPOSE_FORECAST {
            spec.corruption_for(purpose, station, ch)
        } else {
            spec.injection_for(purpose, station, ch)
        };
        let (next, l) = inject_all(&out, ch, &specs)?;
        out = next;
        labels.push(l);
    }
    Ok((out, labels))
}

pub const PURPOSE_FORECAST: u64 = 1;
pub const PURPOSE_THRESHOLD: u64 = 2;
pub const PURPOSE_TEST: u64 = 3;

#[derive(Debug, Clone)]
pub struct ForecastBenchmark {
    pub table: ReportTable,
    pub audit: Vec<ForecastAuditRow>,
    pub grid: ModelGrid,
    pub reports: Vec<CellReport>,
}

impl ForecastBenchmark {
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<(), EvalError> {
        let dir = dir.as_ref();
        self.table.write_dir(dir)?;
        write_csv(&dir.join(FORECAST_AUDIT), &self.audit)
    }
}

/// Trains the corrector on the training block and scores the three
/// forecast variants on the held-out block.
pub fn run_forecast_benchmark(data: &ScenarioData, cfg: &BenchmarkConfig) -> Result<ForecastBenchmark, EvalError> {
    let spec = &data.spec;
    let params = forecaster_params(spec);
    let layout = FeatureLayout::correction(cfg.lag_window);

    let training = data.training();
    let forecasts: Vec<Vec<Option<PhysicalForecast>>> = training
        .par_iter()
        .map(|s| physical_forecasts(s, &spec.column, &params))
        .collect::<Result<_, _>>()?;
    let inputs: Vec<StationForecasts<'_>> = training
        .iter()
        .zip(&forecasts)
        .map(|(series, f)| StationForecasts { series, forecasts: f })
        .collect();
    let datasets = build_datasets(&inputs, &layout)?;
    let (grid, reports) = train_grid(&datasets, &cfg.correction)?;

    let from = spec.split_slot() - HOLDOUT_CONTEXT;
    let per_station: Vec<Vec<ForecastAuditRow>> = data
        .holdout()
        .into_par_iter()
        .zip(data.holdout_indices().into_par_iter())
        .map(|(clean, idx)| {
            // corrupt the whole station record, then cut the same window
            let (corrupted, _) = corrupt_station(spec, PURPOSE_FORECAST, idx, &data.stations[idx])?;
            let corrupted = corrupted.slice(from..spec.slots());
            let clean_fc = physical_forecasts(&clean, &spec.column, &params)?;
            let corrupt_fc = physical_forecasts(&corrupted, &spec.column, &params)?;
            let mut rows = Vec::new();
            for issue in HOLDOUT_CONTEXT..clean.len() {
                let (Some(fc), Some(bad)) = (clean_fc[issue], corrupt_fc[issue]) else {
                    continue;
                };
                for (c, h) in cells() {
                    let target = issue + h.hours() as usize;
                    if target >= clean.len() || clean.is_gap(target) {
                        continue;
                    }
                    let actual = clean.value(target, c);
                    let metro = fc.get(c, h);
                    let Some(x) = correction_features(&clean, issue, c, h, metro, &layout)? else {
                        continue;
                    };
                    let corrected = correct(metro, &x, &grid)?;
                    for (variant, predicted) in [
                        (Variant::WithAnomalies, bad.get(c, h)),
                        (Variant::MetroOnly, metro),
                        (Variant::Corrected, corrected),
                    ] {
                        rows.push(ForecastAuditRow {
                            station_id: clean.station_id().to_string(),
                            issue_time: clean.slot_time(issue),
                            channel: c,
                            horizon: h,
                            variant,
                            predicted,
                            actual,
                        });
                    }
                }
            }
            Ok(rows)
        })
        .collect::<Result<_, EvalError>>()?;
    let audit: Vec<ForecastAuditRow> = per_station.into_iter().flatten().collect();
    Ok(ForecastBenchmark {
        table: ReportTable {
            forecast: summarize_forecasts(&audit),
            detector: Vec::new(),
        },
        audit,
        grid,
        reports,
    })
}

#[derive(Debug, Clone)]
pub struct DetectorBenchmark {
    pub table: ReportTable,
    pub predicted: Vec<(String, Vec<LabelRecord>)>,
    pub truth: Vec<LabelRecord>,
    pub thresholds: Vec<(String, DetectorConfig)>,
    pub ridge_lambda: f64,
    pub model_stations: Vec<String>,
    pub threshold_stations: Vec<String>,
}

impl DetectorBenchmark {
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<(), EvalError> {
        let dir = dir.as_ref();
        self.table.write_dir(dir)?;
        write_label_file(&dir.join(TRUTH_LABELS), &self.truth)?;
        for (algo, rows) in &self.predicted {
            write_label_file(&dir.join(label_file(algo)), rows)?;
        }
        Ok(())
    }
}

struct Corrupted {
    series: StationSeries,
    labels: Vec<Vec<AnomalyLabel>>,
}

/// Residuals and truth labels of one channel over several stations,
/// skipping slots without a prediction. Truly faulty slots are screened out
/// of the lag history, as a tuned detector would do online.
fn channel_residuals(
    predictor: &AnomalyPredictor,
    stations: &[Corrupted],
    channel: Channel,
) -> Result<(Vec<f64>, Vec<AnomalyLabel>), EvalError> {
    let mut r = Vec::new();
    let mut l = Vec::new();
    for st in stations {
        let truth = &st.labels[channel.index()];
        let res = predictor.screened_residuals(&st.series, channel, |t, _| truth[t].is_anomaly())?;
        for (t, res) in res.into_iter().enumerate() {
            if let Some(res) = res {
                r.push(res);
                l.push(st.labels[channel.index()][t]);
            }
        }
    }
    Ok((r, l))
}

/// Per-channel F1-optimal thresholds and the pooled confusion they give.
fn tune_channels(
    predictor: &AnomalyPredictor,
    stations: &[Corrupted],
) -> Result<(DetectorConfig, Confusion), EvalError> {
    let mut cfg = DetectorConfig::default();
    let mut pooled = Confusion::default();
    for ch in Channel::ALL {
        let (r, l) = channel_residuals(predictor, stations, ch)?;
        let tuned = tune_threshold(&r, &l)?;
        cfg.set_threshold(ch, tuned.delta);
        pooled.merge(&tuned.scores.confusion);
    }
    Ok((cfg, pooled))
}

fn test_labels(
    predictor: &AnomalyPredictor,
    thresholds: &DetectorConfig,
    stations: &[Corrupted],
) -> Result<(Vec<LabelRecord>, Vec<LabelRecord>), EvalError> {
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for st in stations {
        for ch in Channel::ALL {
            let res = predictor.detect_series(&st.series, ch, thresholds.threshold(ch))?;
            for (t, r) in res.into_iter().enumerate() {
                let Some((r, label)) = r else { continue };
                let rec = |label| LabelRecord {
                    station_id: st.series.station_id().to_string(),
                    timestamp: st.series.slot_time(t),
                    channel: ch,
                    label,
                    residual: r,
                };
                pred.push(rec(label));
                truth.push(rec(st.labels[ch.index()][t]));
            }
        }
    }
    Ok((pred, truth))
}

/// Fits boosted and ridge one-step predictors on the model stations, tunes
/// per-channel thresholds on injected faults at the threshold stations and
/// scores both on injected faults at the held-out stations.
pub fn run_detector_benchmark(data: &ScenarioData, cfg: &BenchmarkConfig) -> Result<DetectorBenchmark, EvalError> {
    let spec = &data.spec;
    let layout = FeatureLayout::anomaly(cfg.lag_window);
    let train: Vec<usize> = data.training_indices().collect();
    let n_model = ((cfg.model_station_fraction * train.len() as f64).round() as usize).clamp(1, train.len() - 1);
    let (model_idx, threshold_idx) = train.split_at(n_model);
    let model_series: Vec<&StationSeries> = model_idx.iter().map(|&i| &data.stations[i]).collect();
    let corrupt = |purpose: u64, idx: &[usize]| -> Result<Vec<Corrupted>, EvalError> {
        idx.iter()
            .map(|&i| {
                let (series, labels) = corrupt_station(spec, purpose, i, &data.stations[i])?;
                Ok(Corrupted { series, labels })
            })
            .collect()
    };
    let threshold_set = corrupt(PURPOSE_THRESHOLD, threshold_idx)?;
    let test_idx: Vec<usize> = data.holdout_indices().collect();
    let test_set = corrupt(PURPOSE_TEST, &test_idx)?;

    let gbdt = AnomalyPredictor::fit(&model_series, &Backbone::Gbdt(cfg.detector), layout)?;
    let (gbdt_cfg, _) = tune_channels(&gbdt, &threshold_set)?;

    // ridge: the strength with the best pooled threshold-station F1, the
    // smallest one on ties
    let mut best: Option<(f64, AnomalyPredictor, DetectorConfig, Confusion)> = None;
    for &lambda in &cfg.ridge_lambdas {
        let p = AnomalyPredictor::fit(&model_series, &Backbone::Ridge { lambda }, layout)?;
        let (dc, conf) = tune_channels(&p, &threshold_set)?;
        if best.as_ref().is_none_or(|b| conf.cmp_f1(&b.3).is_gt()) {
            best = Some((lambda, p, dc, conf));
        }
    }
    let (ridge_lambda, ridge, ridge_cfg, _) =
        best.ok_or_else(|| EvalError::SpecInvalid("no ridge strengths to try".into()))?;

    let (gbdt_pred, truth) = test_labels(&gbdt, &gbdt_cfg, &test_set)?;
    let (ridge_pred, _) = test_labels(&ridge, &ridge_cfg, &test_set)?;
    if !truth.iter().any(|r| r.label.is_anomaly()) {
        return Err(EvalError::DegenerateLabels);
    }
    let table = ReportTable {
        forecast: Vec::new(),
        detector: vec![
            summarize_detector("gbdt", &gbdt_pred, &truth)?,
            summarize_detector("ridge", &ridge_pred, &truth)?,
        ],
    };
    let ids = |idx: &[usize]| idx.iter().map(|&i| data.stations[i].station_id().to_string()).collect();
    Ok(DetectorBenchmark {
        table,
        predicted: vec![("gbdt".into(), gbdt_pred), ("ridge".into(), ridge_pred)],
        truth,
        thresholds: vec![("gbdt".into(), gbdt_cfg), ("ridge".into(), ridge_cfg)],
        ridge_lambda,
        model_stations: ids(model_idx),
        threshold_stations: ids(threshold_idx),
    })
}
