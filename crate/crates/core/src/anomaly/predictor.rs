use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AnomalyError, AnomalyLabel};
use crate::channel::{Channel, Horizon};
use crate::data::{SlotSource, StationSeries};
use crate::features::{build_features, FeatureLayout, FeatureVector};
use crate::gbdt::{fit_ensemble, TrainConfig};
use crate::matrix::Matrix;
use crate::model::{Model, ModelError, ModelFile};
use crate::ridge::fit_ridge;

/// Consecutive rejected slots replaced during screening.
pub const SCREEN_RUN: usize = 1;

/// Regression backend of the one-step predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    Gbdt(TrainConfig),
    Ridge { lambda: f64 },
}

/// Design matrix and one-step increments `y_t − y_{t−1}` over every slot
/// with a complete lag window and an observation.
pub fn anomaly_targets(
    series: &StationSeries,
    channel: Channel,
    layout: &FeatureLayout,
) -> Result<(Matrix, Vec<f64>), AnomalyError> {
    let mut x = Matrix::empty(layout.dimension());
    let mut y = Vec::new();
    let mut buf = Vec::with_capacity(layout.dimension());
    for t in layout.lag_window..series.len() {
        if series.is_gap(t) {
            continue;
        }
        let Some(f) = build_features(series, t, channel, Horizon::H1, None, layout)? else {
            continue;
        };
        buf.clear();
        f.write_row(&mut buf);
        x.push_row(&buf);
        y.push(series.value(t, channel) - series.value(t - 1, channel));
    }
    Ok((x, y))
}

/// One-step-ahead predictor per channel: the previous value plus a learned
/// increment from lagged values and calendar terms. Physical forecasts are
/// not used.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyPredictor {
    layout: FeatureLayout,
    models: Vec<Model>,
}

impl AnomalyPredictor {
    pub fn new(layout: FeatureLayout, models: Vec<Model>) -> Result<Self, AnomalyError> {
        if layout.physical_input {
            return Err(AnomalyError::InvalidSpec("predictor layout takes no physical input".into()));
        }
        if models.len() != Channel::ALL.len() || models.iter().any(|m| m.n_features() != layout.dimension()) {
            return Err(AnomalyError::InvalidSpec("need one model per channel matching the layout".into()));
        }
        Ok(AnomalyPredictor { layout, models })
    }

    pub fn fit(
        series: &[&StationSeries],
        backbone: &Backbone,
        layout: FeatureLayout,
    ) -> Result<Self, AnomalyError> {
        let models = Channel::ALL
            .par_iter()
            .map(|&ch| {
                let mut x = Matrix::empty(layout.dimension());
                let mut y = Vec::new();
                for s in series {
                    let (xs, ys) = anomaly_targets(s, ch, &layout)?;
                    for r in xs.iter_rows() {
                        x.push_row(r);
                    }
                    y.extend(ys);
                }
                Ok(match backbone {
                    Backbone::Gbdt(cfg) => {
                        let cfg = TrainConfig {
                            seed: crate::derive_seed(cfg.seed, 100 + ch.index() as u64),
                            ..*cfg
                        };
                        Model::Gbdt(fit_ensemble(&x, &y, &cfg).map_err(ModelError::from)?.0)
                    }
                    Backbone::Ridge { lambda } => Model::Ridge(fit_ridge(&x, &y, *lambda).map_err(ModelError::from)?),
                })
            })
            .collect::<Result<Vec<_>, AnomalyError>>()?;
        Self::new(layout, models)
    }

    pub fn layout(&self) -> &FeatureLayout {
        &self.layout
    }

    pub fn model(&self, channel: Channel) -> &Model {
        &self.models[channel.index()]
    }

    pub fn features<S: SlotSource + ?Sized>(
        &self,
        source: &S,
        t: usize,
        channel: Channel,
    ) -> Result<Option<FeatureVector>, AnomalyError> {
        if t < self.layout.lag_window {
            return Ok(None);
        }
        Ok(build_features(source, t, channel, Horizon::H1, None, &self.layout)?)
    }

    /// Prediction from a prepared row: the lag-1 value of the target
    /// channel plus the model's increment.
    pub fn predict_features(&self, x: &FeatureVector) -> Result<f64, AnomalyError> {
        let base = x.lagged_values[x.target_channel.index()];
        Ok(base + self.models[x.target_channel.index()].predict(&x.to_row())?)
    }

    /// Prediction for slot `t` (which may be one past the end), `None`
    /// while the lag window is incomplete.
    pub fn predict<S: SlotSource + ?Sized>(
        &self,
        source: &S,
        t: usize,
        channel: Channel,
    ) -> Result<Option<f64>, AnomalyError> {
        match self.features(source, t, channel)? {
            Some(x) => Ok(Some(self.predict_features(&x)?)),
            None => Ok(None),
        }
    }

    /// `actual − predicted` per slot; `None` at gaps and incomplete windows.
    pub fn residuals(&self, series: &StationSeries, channel: Channel) -> Result<Vec<Option<f64>>, AnomalyError> {
        (0..series.len())
            .map(|t| {
                if series.is_gap(t) {
                    return Ok(None);
                }
                Ok(self
                    .predict(series, t, channel)?
                    .map(|p| series.value(t, channel) - p))
            })
            .collect()
    }

    /// Residuals computed slot by slot from a history in which an earlier
    /// slot that `screen` rejected holds its prediction instead of the
    /// observation, so an isolated fault does not leak into the next lag
    /// inputs. Of consecutive rejections only the first is replaced; the
    /// predictor would otherwise free-run through a drift and never resync.
    pub fn screened_residuals(
        &self,
        series: &StationSeries,
        channel: Channel,
        mut screen: impl FnMut(usize, f64) -> bool,
    ) -> Result<Vec<Option<f64>>, AnomalyError> {
        let mut work = series.clone();
        let mut out = Vec::with_capacity(series.len());
        let mut run = 0;
        for t in 0..series.len() {
            if series.is_gap(t) {
                out.push(None);
                continue;
            }
            let Some(p) = self.predict(&work, t, channel)? else {
                out.push(None);
                continue;
            };
            let r = series.value(t, channel) - p;
            if screen(t, r) && run < SCREEN_RUN {
                if let Some(v) = work.slots_mut()[t].reading.as_mut() {
                    v[channel] = p;
                }
                run += 1;
            } else {
                run = 0;
            }
            out.push(Some(r));
        }
        Ok(out)
    }

    /// Online detection at threshold `delta`: labels and residuals, with
    /// flagged observations replaced by their prediction downstream.
    pub fn detect_series(
        &self,
        series: &StationSeries,
        channel: Channel,
        delta: f64,
    ) -> Result<Vec<Option<(f64, AnomalyLabel)>>, AnomalyError> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(AnomalyError::InvalidThreshold(delta));
        }
        let res = self.screened_residuals(series, channel, |_, r| r.abs() > delta)?;
        Ok(res
            .into_iter()
            .map(|r| r.map(|r| (r, super::label_residuals(&[r], delta)[0])))
            .collect())
    }

    fn file_name(channel: Channel) -> String {
        format!("anomaly_{}.json", channel.name())
    }

    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<(), AnomalyError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|source| AnomalyError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        for ch in Channel::ALL {
            ModelFile {
                layout: self.layout,
                channel: Some(ch),
                horizon: Some(Horizon::H1),
                model: self.models[ch.index()].clone(),
            }
            .save(dir.join(Self::file_name(ch)))?;
        }
        Ok(())
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, AnomalyError> {
        let dir = dir.as_ref();
        let mut layout = None;
        let mut models = Vec::with_capacity(4);
        for ch in Channel::ALL {
            let f = ModelFile::load(dir.join(Self::file_name(ch)))?;
            if f.channel != Some(ch) || layout.is_some_and(|l| l != f.layout) {
                return Err(AnomalyError::InvalidSpec(format!("{} is inconsistent", Self::file_name(ch))));
            }
            layout = Some(f.layout);
            models.push(f.model);
        }
        Self::new(layout.expect("four channels"), models)
    }
}
