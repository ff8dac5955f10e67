//! Residual correction: `ŷ = physical + F̂(x)` with one boosted model per
//! (channel, horizon).

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{Channel, Horizon};
use crate::data::{SlotSource, StationSeries};
use crate::energy_balance::{issue_forecast, ColumnConfig, PhysicalForecast, SurfaceParams};
use crate::features::{build_features, FeatureError, FeatureLayout, FeatureVector};
use crate::gbdt::{fit_ensemble, BoostedEnsemble, FitReport, GbdtError, TrainConfig};
use crate::matrix::Matrix;
use crate::model::{Model, ModelError, ModelFile};

pub const GRID_MANIFEST: &str = "manifest.json";
pub const GRID_FORMAT: &str = "rwis-grid";
pub const GRID_FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CorrectionError {
    #[error("misaligned inputs: {0}")]
    Alignment(String),
    #[error("no model for {channel}/{horizon}")]
    MissingModelCell { channel: Channel, horizon: Horizon },
    #[error("training {channel}/{horizon}: {source}")]
    Fit {
        channel: Channel,
        horizon: Horizon,
        source: GbdtError,
    },
    #[error("row tagged {got_channel}/{got_horizon} pushed into {channel}/{horizon} dataset")]
    TagMismatch {
        channel: Channel,
        horizon: Horizon,
        got_channel: Channel,
        got_horizon: Horizon,
    },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Gbdt(#[from] GbdtError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("grid: {0}")]
    Grid(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorrectionError + '_ {
    move |source| CorrectionError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// All twelve (channel, horizon) cells in grid order.
pub fn cells() -> impl Iterator<Item = (Channel, Horizon)> {
    Channel::ALL
        .into_iter()
        .flat_map(|c| Horizon::ALL.into_iter().map(move |h| (c, h)))
}

fn cell_index(channel: Channel, horizon: Horizon) -> usize {
    channel.index() * Horizon::ALL.len() + horizon.index()
}

/// `actual − physical` elementwise on pre-aligned streams; `None` wherever
/// either side is missing.
pub fn compute_residuals(
    actuals: &[Option<f64>],
    physical: &[Option<f64>],
) -> Result<Vec<Option<f64>>, CorrectionError> {
    if actuals.len() != physical.len() {
        return Err(CorrectionError::Alignment(format!(
            "{} actuals vs {} forecasts",
            actuals.len(),
            physical.len()
        )));
    }
    Ok(actuals
        .iter()
        .zip(physical)
        .map(|(a, p)| match (a, p) {
            (Some(a), Some(p)) => Some(a - p),
            _ => None,
        })
        .collect())
}

/// Pairs each issue-slot forecast with the observation it targets:
/// element `i` of both outputs refers to issue `i` and valid time
/// `i + horizon`.
pub fn align_targets(
    series: &StationSeries,
    forecasts: &[Option<PhysicalForecast>],
    channel: Channel,
    horizon: Horizon,
) -> Result<(Vec<Option<f64>>, Vec<Option<f64>>), CorrectionError> {
    if forecasts.len() != series.len() {
        return Err(CorrectionError::Alignment(format!(
            "{} forecasts for {} slots",
            forecasts.len(),
            series.len()
        )));
    }
    let step = horizon_slots(series, horizon)?;
    let actual = (0..series.len())
        .map(|i| {
            let t = i + step;
            (!series.is_gap(t)).then(|| series.value(t, channel))
        })
        .collect();
    let physical = forecasts
        .iter()
        .map(|f| f.map(|f| f.get(channel, horizon)))
        .collect();
    Ok((actual, physical))
}

pub(crate) fn step_hours(series: &StationSeries) -> Result<f64, CorrectionError> {
    series
        .cadence()
        .map(|c| c.num_seconds() as f64 / 3600.0)
        .ok_or_else(|| CorrectionError::Alignment("series is not regular".into()))
}

pub(crate) fn horizon_slots(series: &StationSeries, horizon: Horizon) -> Result<usize, CorrectionError> {
    let step = step_hours(series)?;
    let slots = horizon.hours() as f64 / step;
    if slots.fract() != 0.0 || slots < 1.0 {
        return Err(CorrectionError::Alignment(format!(
            "horizon {horizon} is not a whole number of {step} h slots"
        )));
    }
    Ok(slots as usize)
}

/// Physical forecast at every issue slot of a regular series; `None` where
/// the observation or the forcing needed to issue one is missing.
pub fn physical_forecasts(
    series: &StationSeries,
    column: &ColumnConfig,
    params: &SurfaceParams,
) -> Result<Vec<Option<PhysicalForecast>>, CorrectionError> {
    let step = step_hours(series)?;
    Ok((0..series.len())
        .map(|i| issue_forecast(series, i, step, column, params).ok())
        .collect())
}

/// Features of the corrector for a forecast issued at `issue`: lags end at
/// the issue slot, calendar terms come from the next slot.
pub fn correction_features<S: SlotSource + ?Sized>(
    source: &S,
    issue: usize,
    channel: Channel,
    horizon: Horizon,
    physical: f64,
    layout: &FeatureLayout,
) -> Result<Option<FeatureVector>, FeatureError> {
    if issue + 1 < layout.lag_window {
        return Ok(None);
    }
    build_features(source, issue + 1, channel, horizon, Some(physical), layout)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualRow {
    pub station_id: String,
    pub issue_time: DateTime<Utc>,
    pub features: FeatureVector,
    pub physical: f64,
    pub actual: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualDataset {
    pub channel: Channel,
    pub horizon: Horizon,
    pub layout: FeatureLayout,
    rows: Vec<ResidualRow>,
}

impl ResidualDataset {
    pub fn new(channel: Channel, horizon: Horizon, layout: FeatureLayout) -> Self {
        ResidualDataset {
            channel,
            horizon,
            layout,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: ResidualRow) -> Result<(), CorrectionError> {
        let f = &row.features;
        if f.target_channel != self.channel || f.horizon != self.horizon {
            return Err(CorrectionError::TagMismatch {
                channel: self.channel,
                horizon: self.horizon,
                got_channel: f.target_channel,
                got_horizon: f.horizon,
            });
        }
        if !row.residual.is_finite() {
            return Err(CorrectionError::Alignment("non-finite residual".into()));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[ResidualRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn stations(&self) -> BTreeSet<String> {
        self.rows.iter().map(|r| r.station_id.clone()).collect()
    }

    pub fn span(&self) -> Option<(DateTime<Utc>, DateTime<Utc>)> {
        let min = self.rows.iter().map(|r| r.issue_time).min()?;
        let max = self.rows.iter().map(|r| r.issue_time).max()?;
        Some((min, max))
    }

    pub fn matrix(&self) -> Matrix {
        let mut m = Matrix::empty(self.layout.dimension());
        let mut buf = Vec::with_capacity(self.layout.dimension());
        for r in &self.rows {
            buf.clear();
            r.features.write_row(&mut buf);
            m.push_row(&buf);
        }
        m
    }

    pub fn targets(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.residual).collect()
    }
}

/// A station history together with its issue-slot physical forecasts.
#[derive(Debug, Clone, Copy)]
pub struct StationForecasts<'a> {
    pub series: &'a StationSeries,
    pub forecasts: &'a [Option<PhysicalForecast>],
}

/// Residual datasets for all twelve cells, in [`cells`] order.
pub fn build_datasets(
    stations: &[StationForecasts<'_>],
    layout: &FeatureLayout,
) -> Result<Vec<ResidualDataset>, CorrectionError> {
    let mut out: Vec<ResidualDataset> = cells()
        .map(|(c, h)| ResidualDataset::new(c, h, *layout))
        .collect();
    for st in stations {
        for ds in out.iter_mut() {
            let (actual, physical) = align_targets(st.series, st.forecasts, ds.channel, ds.horizon)?;
            let residuals = compute_residuals(&actual, &physical)?;
            for (issue, r) in residuals.iter().enumerate() {
                let Some(r) = *r else { continue };
                let phys = physical[issue].expect("residual implies forecast");
                let Some(features) =
                    correction_features(st.series, issue, ds.channel, ds.horizon, phys, layout)?
                else {
                    continue;
                };
                ds.push(ResidualRow {
                    station_id: st.series.station_id().to_string(),
                    issue_time: st.series.slot_time(issue),
                    features,
                    physical: phys,
                    actual: actual[issue].expect("residual implies actual"),
                    residual: r,
                })?;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellEntry {
    pub channel: Channel,
    pub horizon: Horizon,
    pub file: String,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridManifest {
    pub format: String,
    pub format_version: u32,
    /// Content digest of the twelve model files.
    pub version: String,
    pub layout: FeatureLayout,
    pub training_span: Option<(DateTime<Utc>, DateTime<Utc>)>,
    pub stations: Vec<String>,
    pub cells: Vec<CellEntry>,
}

/// One boosted corrector per (channel, horizon).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrid {
    layout: FeatureLayout,
    models: Vec<Option<BoostedEnsemble>>,
    rows: Vec<usize>,
    training_span: Option<(DateTime<Utc>, DateTime<Utc>)>,
    stations: Vec<String>,
}

impl ModelGrid {
    pub fn empty(layout: FeatureLayout) -> Self {
        ModelGrid {
            layout,
            models: vec![None; 12],
            rows: vec![0; 12],
            training_span: None,
            stations: Vec::new(),
        }
    }

    /// Grid of all-zero correctors.
    pub fn null(layout: FeatureLayout) -> Self {
        let mut g = Self::empty(layout);
        for (c, h) in cells() {
            g.insert(c, h, BoostedEnsemble::constant(0.0, layout.dimension()))
                .expect("dimension matches");
        }
        g
    }

    pub fn layout(&self) -> &FeatureLayout {
        &self.layout
    }

    pub fn insert(
        &mut self,
        channel: Channel,
        horizon: Horizon,
        model: BoostedEnsemble,
    ) -> Result<(), CorrectionError> {
        if model.n_features() != self.layout.dimension() {
            return Err(CorrectionError::Grid(format!(
                "{channel}/{horizon} model takes {} features, layout has {}",
                model.n_features(),
                self.layout.dimension()
            )));
        }
        self.models[cell_index(channel, horizon)] = Some(model);
        Ok(())
    }

    pub fn get(&self, channel: Channel, horizon: Horizon) -> Result<&BoostedEnsemble, CorrectionError> {
        self.models[cell_index(channel, horizon)]
            .as_ref()
            .ok_or(CorrectionError::MissingModelCell { channel, horizon })
    }

    pub fn len(&self) -> usize {
        self.models.iter().filter(|m| m.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_complete(&self) -> bool {
        self.len() == 12
    }

    fn cell_file(channel: Channel, horizon: Horizon) -> String {
        format!("{}_{}.json", channel.name(), horizon.name())
    }

    fn model_files(&self) -> Result<Vec<(CellEntry, String)>, CorrectionError> {
        cells()
            .map(|(c, h)| {
                let model = self.get(c, h)?.clone();
                let text = ModelFile {
                    layout: self.layout,
                    channel: Some(c),
                    horizon: Some(h),
                    model: Model::Gbdt(model),
                }
                .to_json();
                Ok((
                    CellEntry {
                        channel: c,
                        horizon: h,
                        file: Self::cell_file(c, h),
                        rows: self.rows[cell_index(c, h)],
                    },
                    text,
                ))
            })
            .collect()
    }

    /// Content digest of the serialized models: identical grids share it.
    pub fn version(&self) -> String {
        let mut hasher = Sha256::new();
        for (c, h) in cells() {
            if let Ok(m) = self.get(c, h) {
                hasher.update(
                    ModelFile {
                        layout: self.layout,
                        channel: Some(c),
                        horizon: Some(h),
                        model: Model::Gbdt(m.clone()),
                    }
                    .to_json(),
                );
            }
        }
        hasher
            .finalize()
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn manifest(&self) -> Result<GridManifest, CorrectionError> {
        Ok(GridManifest {
            format: GRID_FORMAT.into(),
            format_version: GRID_FORMAT_VERSION,
            version: self.version(),
            layout: self.layout,
            training_span: self.training_span,
            stations: self.stations.clone(),
            cells: self.model_files()?.into_iter().map(|(e, _)| e).collect(),
        })
    }

    /// Writes the twelve model files and a manifest into `dir`.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<GridManifest, CorrectionError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        for (entry, text) in self.model_files()? {
            let p = dir.join(&entry.file);
            fs::write(&p, text).map_err(io_err(&p))?;
        }
        let manifest = self.manifest()?;
        let p = dir.join(GRID_MANIFEST);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&p, text).map_err(io_err(&p))?;
        Ok(manifest)
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, CorrectionError> {
        let dir = dir.as_ref();
        let p = dir.join(GRID_MANIFEST);
        let text = fs::read_to_string(&p).map_err(io_err(&p))?;
        let manifest: GridManifest = serde_json::from_str(&text)
            .map_err(|e| CorrectionError::Grid(format!("{}: {e}", p.display())))?;
        if manifest.format != GRID_FORMAT || manifest.format_version != GRID_FORMAT_VERSION {
            return Err(CorrectionError::Grid(format!(
                "unsupported grid format {} v{}",
                manifest.format, manifest.format_version
            )));
        }
        let mut grid = Self::empty(manifest.layout);
        grid.training_span = manifest.training_span;
        grid.stations = manifest.stations.clone();
        for entry in &manifest.cells {
            let file = ModelFile::load(dir.join(&entry.file))?;
            if file.layout != manifest.layout
                || file.channel != Some(entry.channel)
                || file.horizon != Some(entry.horizon)
            {
                return Err(CorrectionError::Grid(format!(
                    "{} does not match its manifest entry",
                    entry.file
                )));
            }
            let Model::Gbdt(e) = file.model else {
                return Err(CorrectionError::Grid(format!("{} is not a boosted model", entry.file)));
            };
            grid.insert(entry.channel, entry.horizon, e)?;
            grid.rows[cell_index(entry.channel, entry.horizon)] = entry.rows;
        }
        if grid.version() != manifest.version {
            return Err(CorrectionError::Grid("model files do not match manifest version".into()));
        }
        Ok(grid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub channel: Channel,
    pub horizon: Horizon,
    pub seed: u64,
    pub report: FitReport,
}

/// Trains one corrector per dataset in parallel. Cell seeds derive from
/// `cfg.seed` and the cell, so results do not depend on scheduling.
pub fn train_grid(
    datasets: &[ResidualDataset],
    cfg: &TrainConfig,
) -> Result<(ModelGrid, Vec<CellReport>), CorrectionError> {
    let layout = datasets
        .first()
        .map(|d| d.layout)
        .ok_or_else(|| CorrectionError::Grid("no datasets".into()))?;
    for (c, h) in cells() {
        let n = datasets
            .iter()
            .filter(|d| d.channel == c && d.horizon == h)
            .count();
        if n != 1 {
            return Err(if n == 0 {
                CorrectionError::MissingModelCell {
                    channel: c,
                    horizon: h,
                }
            } else {
                CorrectionError::Grid(format!("{n} datasets for {c}/{h}"))
            });
        }
    }
    if datasets.iter().any(|d| d.layout != layout) {
        return Err(CorrectionError::Grid("datasets disagree on feature layout".into()));
    }
    let fits: Vec<_> = datasets
        .par_iter()
        .map(|ds| {
            let seed = crate::derive_seed(cfg.seed, cell_index(ds.channel, ds.horizon) as u64);
            let cell_cfg = TrainConfig { seed, ..*cfg };
            let wrap = |source| CorrectionError::Fit {
                channel: ds.channel,
                horizon: ds.horizon,
                source,
            };
            if ds.is_empty() {
                return Err(wrap(GbdtError::EmptyInput));
            }
            let (model, report) = fit_ensemble(&ds.matrix(), &ds.targets(), &cell_cfg).map_err(wrap)?;
            Ok((
                ds,
                model,
                CellReport {
                    channel: ds.channel,
                    horizon: ds.horizon,
                    seed,
                    report,
                },
            ))
        })
        .collect::<Result<_, CorrectionError>>()?;

    let mut grid = ModelGrid::empty(layout);
    let mut stations = BTreeSet::new();
    let mut span: Option<(DateTime<Utc>, DateTime<Utc>)> = None;
    let mut reports = Vec::with_capacity(12);
    for (ds, model, report) in fits {
        grid.insert(ds.channel, ds.horizon, model)?;
        grid.rows[cell_index(ds.channel, ds.horizon)] = ds.len();
        stations.extend(ds.stations());
        if let Some((a, b)) = ds.span() {
            span = Some(span.map_or((a, b), |(x, y)| (x.min(a), y.max(b))));
        }
        reports.push(report);
    }
    grid.stations = stations.into_iter().collect();
    grid.training_span = span;
    Ok((grid, reports))
}

/// The corrector's output for the cell matching `x`'s tags.
pub fn correction_term(x: &FeatureVector, grid: &ModelGrid) -> Result<f64, CorrectionError> {
    let model = grid.get(x.target_channel, x.horizon)?;
    Ok(model.predict(&x.to_row())?)
}

/// `physical + F̂(x)`; humidity is clamped to [0, 100] afterwards.
pub fn correct(physical_value: f64, x: &FeatureVector, grid: &ModelGrid) -> Result<f64, CorrectionError> {
    let y = physical_value + correction_term(x, grid)?;
    Ok(match x.target_channel {
        Channel::Humidity => y.clamp(0.0, 100.0),
        _ => y,
    })
}
