//! Patient-specific Gaussian process regression over daily time series:
//! RBF-plus-white-noise kernel, exact inference through Cholesky
//! factorization, marginal-likelihood hyperparameter optimization, and
//! posterior trajectory sampling for imputation and augmentation.

mod channel;
mod fit;
mod kernel;
mod predict;

pub use channel::{
    augment_patient, complete_channel, fit_channel, synthetic_channel, ChannelGp, ChannelGpRecord,
};
pub use fit::{
    cholesky_with_jitter, fit_gp, heuristic_init, lml_and_grad, log_marginal_likelihood, FitOptions,
    GpFit,
};
pub use kernel::{kernel_matrix, kernel_value};
pub use predict::{complete_trajectory, posterior, posterior_joint, sample_trajectory};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GpError {
    #[error("empty input")]
    EmptyInput,
    #[error("length mismatch: {times} times vs {values} values")]
    LengthMismatch { times: usize, values: usize },
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("invalid bounds: {0}")]
    InvalidBounds(String),
    #[error("Cholesky factorization failed even at jitter {max_jitter:e}")]
    Factorization { max_jitter: f64 },
    #[error("GP fit failed for {key}: {detail}")]
    FitFailed { key: String, detail: String },
}

/// Kernel hyperparameters: output variance, length-scale (days), noise
/// variance. All strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpHyperparams {
    pub sigma_c2: f64,
    pub length_scale: f64,
    pub sigma_n2: f64,
}

impl GpHyperparams {
    pub fn new(sigma_c2: f64, length_scale: f64, sigma_n2: f64) -> Result<Self, GpError> {
        let theta = GpHyperparams {
            sigma_c2,
            length_scale,
            sigma_n2,
        };
        theta.validate()?;
        Ok(theta)
    }

    pub fn validate(&self) -> Result<(), GpError> {
        for (name, v) in [
            ("sigma_c2", self.sigma_c2),
            ("length_scale", self.length_scale),
            ("sigma_n2", self.sigma_n2),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(GpError::InvalidHyperparams(format!("{name} = {v}")));
            }
        }
        Ok(())
    }

    pub(crate) fn to_log(self) -> [f64; 3] {
        [
            self.sigma_c2.ln(),
            self.length_scale.ln(),
            self.sigma_n2.ln(),
        ]
    }

    pub(crate) fn from_log(z: [f64; 3]) -> Self {
        GpHyperparams {
            sigma_c2: z[0].exp(),
            length_scale: z[1].exp(),
            sigma_n2: z[2].exp(),
        }
    }
}

/// Per-hyperparameter box bounds plus the heuristic starting point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpBounds {
    pub lower: GpHyperparams,
    pub upper: GpHyperparams,
    pub initial: GpHyperparams,
    /// True when fewer than 3 samples forced fallback defaults.
    pub fallback: bool,
}

impl GpBounds {
    pub fn validate(&self) -> Result<(), GpError> {
        self.lower.validate()?;
        self.upper.validate()?;
        self.initial.validate()?;
        let pairs = [
            ("sigma_c2", self.lower.sigma_c2, self.initial.sigma_c2, self.upper.sigma_c2),
            (
                "length_scale",
                self.lower.length_scale,
                self.initial.length_scale,
                self.upper.length_scale,
            ),
            ("sigma_n2", self.lower.sigma_n2, self.initial.sigma_n2, self.upper.sigma_n2),
        ];
        for (name, lo, init, hi) in pairs {
            if !(lo < hi) {
                return Err(GpError::InvalidBounds(format!("{name}: {lo} >= {hi}")));
            }
            if !(lo <= init && init <= hi) {
                return Err(GpError::InvalidBounds(format!(
                    "{name}: initial {init} outside [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn clamp_log(&self, z: [f64; 3]) -> [f64; 3] {
        let lo = self.lower.to_log();
        let hi = self.upper.to_log();
        [
            z[0].clamp(lo[0], hi[0]),
            z[1].clamp(lo[1], hi[1]),
            z[2].clamp(lo[2], hi[2]),
        ]
    }
}
