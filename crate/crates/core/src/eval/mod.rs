//! Evaluation harness: tie-aware AUROC, stratified cross-validation
//! folds, and experiment reports.

mod auroc;
mod kfold;
mod report;

pub use auroc::{auroc, roc_points};
pub use kfold::stratified_kfold;
pub use report::EvalReport;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("scores and labels contain a single class")]
    SingleClass,
    #[error("length mismatch: {scores} scores vs {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("k={k} folds require at least k members per class (smallest class has {class_size})")]
    ClassTooSmall { k: usize, class_size: usize },
    #[error("k must be >= 2, got {0}")]
    BadK(usize),
    #[error("non-finite score at index {0}")]
    NonFiniteScore(usize),
}
