use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{line_search_alpha, mae_loss, median, negative_gradient};
use super::tree::{fit_tree_rows, RegressionTree, SortedColumns, TreeParams};
use super::GbdtError;
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub n_stages: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Multiplies every line-search weight; 1 disables shrinkage.
    pub shrinkage: f64,
    /// Fraction of rows drawn (without replacement) for each stage.
    pub subsample: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_stages: 100,
            max_depth: 3,
            min_samples_leaf: 5,
            shrinkage: 0.1,
            subsample: 0.8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), GbdtError> {
        let bad = |m: &str| Err(GbdtError::ConfigInvalid(m.to_string()));
        if !(self.shrinkage > 0.0 && self.shrinkage <= 1.0) {
            return bad("shrinkage must lie in (0, 1]");
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad("subsample must lie in (0, 1]");
        }
        if self.max_depth == 0 {
            return bad("max_depth must be ≥ 1");
        }
        if self.min_samples_leaf == 0 {
            return bad("min_samples_leaf must be ≥ 1");
        }
        Ok(())
    }

    pub fn tree_params(&self) -> TreeParams {
        TreeParams {
            max_depth: self.max_depth,
            min_samples_leaf: self.min_samples_leaf,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub weight: f64,
    pub tree: RegressionTree,
}

/// `base_value + Σ weightᵢ · treeᵢ(x)`, fitted under absolute-error loss.
#[derive(Debug, Clone, PartialEq)]
pub struct BoostedEnsemble {
    pub(crate) base_value: f64,
    pub(crate) stages: Vec<Stage>,
    pub(crate) n_features: usize,
    pub(crate) config: TrainConfig,
}

/// Per-stage training loss of one fit. `stage_mae[0]` is the loss of the
/// constant initializer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub stage_mae: Vec<f64>,
    pub weights: Vec<f64>,
    pub rows: usize,
}

impl FitReport {
    pub fn initial_mae(&self) -> f64 {
        self.stage_mae[0]
    }

    pub fn final_mae(&self) -> f64 {
        *self.stage_mae.last().unwrap()
    }

    /// Whether the loss never rises by more than `tol` between stages.
    pub fn is_non_increasing(&self, tol: f64) -> bool {
        self.stage_mae.windows(2).all(|w| w[1] <= w[0] + tol)
    }
}

impl BoostedEnsemble {
    /// An ensemble with no stages predicting `base_value` everywhere.
    pub fn constant(base_value: f64, n_features: usize) -> Self {
        BoostedEnsemble {
            base_value,
            stages: Vec::new(),
            n_features,
            config: TrainConfig {
                n_stages: 0,
                ..TrainConfig::default()
            },
        }
    }

    pub fn from_parts(
        base_value: f64,
        stages: Vec<Stage>,
        n_features: usize,
        config: TrainConfig,
    ) -> Result<Self, GbdtError> {
        if !base_value.is_finite() || stages.iter().any(|s| !s.weight.is_finite()) {
            return Err(GbdtError::Malformed("non-finite weight".into()));
        }
        for s in &stages {
            if s.tree.split_features().any(|f| f >= n_features) {
                return Err(GbdtError::Malformed("split feature out of range".into()));
            }
        }
        Ok(BoostedEnsemble {
            base_value,
            stages,
            n_features,
            config,
        })
    }

    pub fn base_value(&self) -> f64 {
        self.base_value
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64, GbdtError> {
        if x.len() != self.n_features {
            return Err(GbdtError::DimensionMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        Ok(self.predict_unchecked(x))
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> f64 {
        self.stages
            .iter()
            .fold(self.base_value, |acc, s| acc + s.weight * s.tree.predict(x))
    }

    pub fn predict_matrix(&self, x: &Matrix) -> Result<Vec<f64>, GbdtError> {
        x.iter_rows().map(|r| self.predict(r)).collect()
    }
}

/// Stagewise boosting under absolute-error loss.
///
/// Each stage fits a least-squares tree to the negative subgradient on a
/// row subsample, then weights it by `shrinkage × exact line-search α`
/// computed on the same rows.
pub fn fit_ensemble(
    x: &Matrix,
    y: &[f64],
    cfg: &TrainConfig,
) -> Result<(BoostedEnsemble, FitReport), GbdtError> {
    cfg.validate()?;
    let n = x.rows();
    if y.len() != n {
        return Err(GbdtError::LengthMismatch(n, y.len()));
    }
    if n == 0 {
        return Err(GbdtError::EmptyInput);
    }
    if n < 2 * cfg.min_samples_leaf {
        return Err(GbdtError::TooFewSamples {
            rows: n,
            needed: 2 * cfg.min_samples_leaf,
        });
    }
    if y.iter().any(|v| !v.is_finite()) || x.iter_rows().flatten().any(|v| !v.is_finite()) {
        return Err(GbdtError::NonFinite);
    }

    let base = median(y).expect("non-empty");
    let mut preds = vec![base; n];
    let mut report = FitReport {
        stage_mae: vec![mae_loss(&preds, y)?],
        weights: Vec::with_capacity(cfg.n_stages),
        rows: n,
    };
    let mut stages = Vec::with_capacity(cfg.n_stages);
    let sorted = SortedColumns::new(x);
    let params = cfg.tree_params();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let take = ((cfg.subsample * n as f64).round() as usize).clamp(1, n);
    let all_rows: Vec<usize> = (0..n).collect();
    let mut gradient = vec![0.0; n];

    for _ in 0..cfg.n_stages {
        for i in 0..n {
            gradient[i] = negative_gradient(preds[i], y[i]);
        }
        let rows = if take == n {
            all_rows.clone()
        } else {
            let mut r = sample(&mut rng, n, take).into_vec();
            r.sort_unstable();
            r
        };
        let tree = fit_tree_rows(x, &gradient, &rows, &sorted, &params)?;
        let tree_out: Vec<f64> = (0..n).map(|i| tree.predict(x.row(i))).collect();
        let (cur, h, t): (Vec<f64>, Vec<f64>, Vec<f64>) = rows
            .iter()
            .map(|&i| (preds[i], tree_out[i], y[i]))
            .fold((Vec::new(), Vec::new(), Vec::new()), |mut acc, (a, b, c)| {
                acc.0.push(a);
                acc.1.push(b);
                acc.2.push(c);
                acc
            });
        let alpha = line_search_alpha(&cur, &h, &t)?;
        let weight = cfg.shrinkage * alpha;
        for i in 0..n {
            preds[i] += weight * tree_out[i];
        }
        report.stage_mae.push(mae_loss(&preds, y)?);
        report.weights.push(weight);
        stages.push(Stage { weight, tree });
    }

    Ok((
        BoostedEnsemble {
            base_value: base,
            stages,
            n_features: x.cols(),
            config: *cfg,
        },
        report,
    ))
}
