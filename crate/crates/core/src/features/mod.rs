//! Windowed time-series feature extraction and feature selection.

mod anova;
mod rfe;
mod table;
mod window;

pub use anova::anova_f;
pub use rfe::rfe;
pub use table::{FeatureTable, TableError};
pub use window::{windowed_features, WindowSpec, WindowStat};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("labels contain a single class")]
    SingleClass,
    #[error("keep={keep} exceeds column count {columns}")]
    KeepTooLarge { keep: usize, columns: usize },
    #[error("need at least 2 rows per class, got {pos} positive / {neg} negative")]
    TooFewRows { pos: usize, neg: usize },
    #[error(transparent)]
    Table(#[from] TableError),
}
