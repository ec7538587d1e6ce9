//! Hedonic models of rent per square meter: penalized-spline additive
//! models, random forests, holdout evaluation and prediction grids.

mod bspline;
mod eval;
mod features;
mod forest;
mod gam;
mod grid;
mod persist;

pub use bspline::{difference_penalty, BSplineBasis, DEGREE};
pub use eval::{evaluate, split_train_test, Evaluation};
pub use features::{build_features, FeatureRow, FeatureSet, DEFAULT_VOCAB};
pub use forest::{fit_random_forest, FeatureEncoder, ForestModel, ForestParams, Tree, TreeNode};
pub use gam::{fit_gam, log_grid, FittedTerm, GamDesign, GamFit, GamModel, GamSpec, Penalty, SmoothTerm, PENALTY_ORDER};
pub use grid::{prediction_grid, FeatureProfile, GridCell, PredictionGrid};
pub use persist::{FittedModel, ModelBody, ModelKind, FORMAT_VERSION, MAGIC};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("validation: {0}")]
    Validation(String),
    #[error("singular design at term {term}")]
    Singular { term: String },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("holdout overlaps training rows ({0} shared ids)")]
    Overlap(usize),
    #[error("model file: {0}")]
    Format(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
