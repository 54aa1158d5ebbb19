//! RBF + white-noise composite kernel.

use nalgebra::DMatrix;

use super::GpHyperparams;

/// k(ti, tj) = sigma_c2 * exp(-(ti-tj)^2 / (2 l^2)) + sigma_n2 * [same index].
///
/// The noise term is keyed on sample-index identity, not time equality:
/// two distinct samples taken the same day share only the RBF part.
pub fn kernel_value(ti: f64, tj: f64, same_index: bool, theta: &GpHyperparams) -> f64 {
    let d = ti - tj;
    let rbf = theta.sigma_c2 * (-d * d / (2.0 * theta.length_scale * theta.length_scale)).exp();
    if same_index {
        rbf + theta.sigma_n2
    } else {
        rbf
    }
}

/// Dense covariance matrix over one set of sample times; diagonal gets
/// the noise term.
pub fn kernel_matrix(times: &[f64], theta: &GpHyperparams) -> DMatrix<f64> {
    let n = times.len();
    DMatrix::from_fn(n, n, |i, j| kernel_value(times[i], times[j], i == j, theta))
}

/// Cross-covariance between query times and training times (no shared
/// indices, so no noise term).
pub fn cross_kernel(query: &[f64], train: &[f64], theta: &GpHyperparams) -> DMatrix<f64> {
    DMatrix::from_fn(query.len(), train.len(), |i, j| {
        kernel_value(query[i], train[j], false, theta)
    })
}
