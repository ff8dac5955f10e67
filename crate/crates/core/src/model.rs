//! Trained-model wrapper and its on-disk format.
//!
//! A model file is one JSON document:
//!
//! ```text
//! {
//!   "format": "rwis-model",
//!   "format_version": 1,
//!   "layout": {"version": 1, "lag_window": 6, "physical_input": true},
//!   "channel": "road", "horizon": "1h",
//!   "model": {"gbdt": {"config": {...}, "base_value": 0.1, "n_features": 29,
//!             "stages": [{"weight": 0.05, "nodes": [{"split": {"feature": 3, "threshold": 1.5}},
//!                                                   {"leaf": -0.2}, {"leaf": 0.4}]}]}}
//! }
//! ```
//!
//! Tree nodes are listed in preorder; a split's left subtree follows it
//! directly. Ridge models use `{"ridge": {"weights": [...], "intercept": .., "lambda": ..}}`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::{Channel, Horizon};
use crate::features::FeatureLayout;
use crate::gbdt::{BoostedEnsemble, GbdtError, Node, RegressionTree, Stage, TrainConfig};
use crate::ridge::{RidgeError, RidgeModel};

pub const MODEL_FORMAT: &str = "rwis-model";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("not a model file: {0}")]
    Format(String),
    #[error(transparent)]
    Gbdt(#[from] GbdtError),
    #[error(transparent)]
    Ridge(#[from] RidgeError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Gbdt(BoostedEnsemble),
    Ridge(RidgeModel),
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::Gbdt(_) => "gbdt",
            Model::Ridge(_) => "ridge",
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            Model::Gbdt(e) => e.n_features(),
            Model::Ridge(r) => r.n_features(),
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64, ModelError> {
        Ok(match self {
            Model::Gbdt(e) => e.predict(x)?,
            Model::Ridge(r) => r.predict(x)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub layout: FeatureLayout,
    pub channel: Option<Channel>,
    pub horizon: Option<Horizon>,
    pub model: Model,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum NodeRepr {
    Split { feature: usize, threshold: f64 },
    Leaf(f64),
}

#[derive(Serialize, Deserialize)]
struct StageRepr {
    weight: f64,
    nodes: Vec<NodeRepr>,
}

#[derive(Serialize, Deserialize)]
struct GbdtRepr {
    config: TrainConfig,
    base_value: f64,
    n_features: usize,
    stages: Vec<StageRepr>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ModelRepr {
    Gbdt(GbdtRepr),
    Ridge(RidgeModel),
}

#[derive(Serialize, Deserialize)]
struct FileRepr {
    format: String,
    format_version: u32,
    layout: FeatureLayout,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    channel: Option<Channel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    horizon: Option<Horizon>,
    model: ModelRepr,
}

fn tree_to_repr(tree: &RegressionTree) -> Vec<NodeRepr> {
    tree.nodes()
        .iter()
        .map(|n| match *n {
            Node::Split {
                feature, threshold, ..
            } => NodeRepr::Split { feature, threshold },
            Node::Leaf { value } => NodeRepr::Leaf(value),
        })
        .collect()
}

fn tree_from_repr(nodes: Vec<NodeRepr>) -> Result<RegressionTree, GbdtError> {
    // Right-child indices are implied by preorder; recover them by walking
    // each split's left subtree.
    fn subtree_end(nodes: &[NodeRepr], i: usize) -> Result<usize, GbdtError> {
        match nodes.get(i) {
            None => Err(GbdtError::Malformed("truncated node list".into())),
            Some(NodeRepr::Leaf(_)) => Ok(i + 1),
            Some(NodeRepr::Split { .. }) => {
                let left_end = subtree_end(nodes, i + 1)?;
                subtree_end(nodes, left_end)
            }
        }
    }
    let mut out = Vec::with_capacity(nodes.len());
    for (i, n) in nodes.iter().enumerate() {
        out.push(match *n {
            NodeRepr::Leaf(value) => Node::Leaf { value },
            NodeRepr::Split { feature, threshold } => {
                if !threshold.is_finite() {
                    return Err(GbdtError::Malformed("non-finite threshold".into()));
                }
                Node::Split {
                    feature,
                    threshold,
                    right: subtree_end(&nodes, i + 1)?,
                }
            }
        });
    }
    RegressionTree::from_preorder(out)
}

impl ModelFile {
    pub fn to_json(&self) -> String {
        let model = match &self.model {
            Model::Gbdt(e) => ModelRepr::Gbdt(GbdtRepr {
                config: *e.config(),
                base_value: e.base_value(),
                n_features: e.n_features(),
                stages: e
                    .stages()
                    .iter()
                    .map(|s| StageRepr {
                        weight: s.weight,
                        nodes: tree_to_repr(&s.tree),
                    })
                    .collect(),
            }),
            Model::Ridge(r) => ModelRepr::Ridge(r.clone()),
        };
        let repr = FileRepr {
            format: MODEL_FORMAT.into(),
            format_version: MODEL_FORMAT_VERSION,
            layout: self.layout,
            channel: self.channel,
            horizon: self.horizon,
            model,
        };
        serde_json::to_string_pretty(&repr).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let repr: FileRepr = serde_json::from_str(text)?;
        if repr.format != MODEL_FORMAT {
            return Err(ModelError::Format(format!("format tag {:?}", repr.format)));
        }
        if repr.format_version != MODEL_FORMAT_VERSION {
            return Err(ModelError::Format(format!(
                "unsupported format version {}",
                repr.format_version
            )));
        }
        let model = match repr.model {
            ModelRepr::Gbdt(g) => {
                let stages = g
                    .stages
                    .into_iter()
                    .map(|s| {
                        Ok(Stage {
                            weight: s.weight,
                            tree: tree_from_repr(s.nodes)?,
                        })
                    })
                    .collect::<Result<Vec<_>, GbdtError>>()?;
                Model::Gbdt(BoostedEnsemble::from_parts(
                    g.base_value,
                    stages,
                    g.n_features,
                    g.config,
                )?)
            }
            ModelRepr::Ridge(r) => Model::Ridge(r),
        };
        if model.n_features() != repr.layout.dimension() {
            return Err(ModelError::Format(format!(
                "model takes {} features but layout has {}",
                model.n_features(),
                repr.layout.dimension()
            )));
        }
        Ok(ModelFile {
            layout: repr.layout,
            channel: repr.channel,
            horizon: repr.horizon,
            model,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}
