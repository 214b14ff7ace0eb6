//! Regression and classification metrics, OLS fit lines, Grad-CAM heatmaps
//! and two-model comparisons with geographic aggregation.

mod compare;
mod gradcam;
mod metrics;
mod plots;

use thiserror::Error;

pub use compare::{
    compare_models, export_differences, parse_differences_csv, parse_differences_geojson, ComparisonReport,
    ExportFormat, GroupStats, SiteDifference, SiteInfo,
};
pub use gradcam::{cam_from_activations, feature_layer, grad_cam, grad_cam_network, CamTarget, Heatmap};
pub use metrics::{
    classification_metrics, classification_report, describe, ols_fit, r_squared, regression_report, rmse,
    ClassificationMetrics, EvalReport, FitLine, Summary, NUM_CLASSES, Z_95,
};
pub use plots::{confusion_csv, confusion_svg, scatter_csv, scatter_svg};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("no values")]
    Empty,
    #[error("need at least {need} values, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("truth values have zero variance")]
    DegenerateVariance,
    #[error("x values are constant")]
    DegenerateX,
    #[error("class {0} outside 1..=10")]
    ClassOutOfRange(u8),
    #[error("model has no convolutional layer")]
    NoConvLayer,
    #[error("invalid target: {0}")]
    InvalidTarget(String),
    #[error("shape: {0}")]
    Shape(String),
    #[error("parse: {0}")]
    Parse(String),
    #[error(transparent)]
    Geo(#[from] crate::geo::GeoError),
    #[error(transparent)]
    Model(#[from] crate::models::ModelError),
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
