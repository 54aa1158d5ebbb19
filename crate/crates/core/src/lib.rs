//! Patient-specific Gaussian-process trajectory imputation, multimodal
//! transformer fusion, and a rank-based evaluation harness for binary
//! progression prediction on cohorts that mix static clinical features
//! with irregular daily digital-biomarker time series.

pub mod cohort;
pub mod config;
pub mod eval;
pub mod features;
pub mod gp;
pub mod logistic;
pub mod pipeline;
pub mod synth;
pub mod transformer;

pub use cohort::{Cohort, DigitalChannel, PatientRecord, StaticFeatures};
pub use config::RunConfig;
pub use eval::EvalReport;
pub use features::FeatureTable;
pub use gp::{GpBounds, GpFit, GpHyperparams};
pub use transformer::{FusionModel, ModelConfig};

/// Number of days in the input window (days 0..=84, 12 weeks).
pub const WINDOW_DAYS: usize = 85;
/// Last valid observation day.
pub const MAX_DAY: u32 = 84;
