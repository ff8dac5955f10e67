//! Gradient boosting over regression trees with absolute-error loss.

mod ensemble;
mod loss;
mod tree;

pub use ensemble::{fit_ensemble, BoostedEnsemble, FitReport, Stage, TrainConfig};
pub use loss::{line_search_alpha, loss_negative_gradient, mae_loss, median};
pub use tree::{fit_tree, Node, RegressionTree, TreeParams};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GbdtError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    EmptyInput,
    #[error("{rows} rows, need at least {needed}")]
    TooFewSamples { rows: usize, needed: usize },
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite training data")]
    NonFinite,
    #[error("malformed model: {0}")]
    Malformed(String),
}
