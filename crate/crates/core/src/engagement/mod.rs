//! Engaged/disengaged classification from window features, its evaluation
//! metrics and the class-mean engagement timeline.

pub mod metrics;
pub mod svm;
pub mod timeline;

use thiserror::Error;

pub use metrics::{action_metrics, compute_metrics, f1_score, ActionReport, ClassReport, ConfusionMatrix, EngagementReport};
pub use svm::{max_kkt_violation, solve_smo, train_svm, Kernel, SmoSolution, SupportVector, SvmModel, SvmParams};
pub use timeline::{mean_engagement_timeline, pearson, write_timeline_csv, Timeline, TimelinePoint, WindowPrediction};

#[derive(Debug, Error, PartialEq)]
pub enum EngagementError {
    #[error("training data contains a single class")]
    SingleClassData,
    #[error("SMO did not converge within {0} iterations")]
    NoConvergence(usize),
    #[error("feature has dimension {found}, model expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{predictions} predictions but {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("input is empty")]
    EmptyInput,
    #[error("label {0} is out of range")]
    LabelOutOfRange(usize),
    #[error("invalid SVM parameters: {0}")]
    InvalidParams(&'static str),
    #[error("invalid SVM model: {0}")]
    InvalidModel(&'static str),
    #[error("cannot parse SVM model: {0}")]
    Parse(String),
}
