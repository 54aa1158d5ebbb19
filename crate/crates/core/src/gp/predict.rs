//! Posterior queries and joint trajectory sampling from a fitted GP.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::fit::{cholesky_with_jitter, GpFit};
use super::kernel::cross_kernel;
use super::GpError;

/// Posterior predictive mean and variance at one query day. The query
/// point never shares a noise index with training samples, and its own
/// prior variance includes the noise term.
pub fn posterior(fit: &GpFit, t_star: f64) -> (f64, f64) {
    let k_star = cross_kernel(&[t_star], &fit.times, &fit.theta);
    let k_star_t = k_star.transpose(); // n x 1
    let mean = (k_star * &fit.alpha)[(0, 0)];

    // v = L^-1 k*, var = k(t*,t*) - v^T v
    let mut v = k_star_t;
    fit.chol.solve_lower_triangular_mut(&mut v);
    let prior = fit.theta.sigma_c2 + fit.theta.sigma_n2;
    let mut var = prior - v.dot(&v);
    if var < 0.0 {
        if var < -1e-10 {
            log::warn!("posterior variance {var} clamped to 0 at t*={t_star}");
        }
        var = 0.0;
    }
    (mean, var)
}

/// Joint posterior over a grid of query days: mean vector plus full
/// covariance (each grid point carries its own noise index).
pub fn posterior_joint(fit: &GpFit, grid: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let m = grid.len();
    let k_star = cross_kernel(grid, &fit.times, &fit.theta); // m x n
    let mean = &k_star * &fit.alpha;

    // V = L^-1 K*^T (n x m)
    let mut v = k_star.transpose();
    fit.chol.solve_lower_triangular_mut(&mut v);

    let prior = DMatrix::from_fn(m, m, |i, j| {
        super::kernel::kernel_value(grid[i], grid[j], i == j, &fit.theta)
    });
    let cov = prior - v.transpose() * v;
    (mean, cov)
}

/// One joint draw from the posterior Gaussian over the grid,
/// deterministic given the seed.
pub fn sample_trajectory(fit: &GpFit, grid: &[f64], seed: u64) -> Result<Vec<f64>, GpError> {
    if grid.is_empty() {
        return Err(GpError::EmptyInput);
    }
    let (mean, cov) = posterior_joint(fit, grid);
    let (l, _) = cholesky_with_jitter(&cov)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = DVector::from_fn(grid.len(), |_, _| StandardNormal.sample(&mut rng));
    let sample = mean + l * z;
    Ok(sample.iter().copied().collect())
}

/// Dense trajectory over integer days 0..=84: observed samples are
/// preserved bitwise, missing days come from one joint posterior draw.
pub fn complete_trajectory(
    samples: &[(u32, f64)],
    fit: &GpFit,
    seed: u64,
) -> Result<Vec<f64>, GpError> {
    let grid: Vec<f64> = (0..crate::WINDOW_DAYS).map(|d| d as f64).collect();
    let mut out = sample_trajectory(fit, &grid, seed)?;
    for &(day, value) in samples {
        out[day as usize] = value;
    }
    Ok(out)
}
