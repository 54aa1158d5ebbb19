//! Marginal-likelihood evaluation, its analytic gradient, heuristic
//! initialization, and bounded hyperparameter optimization.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::kernel::kernel_matrix;
use super::{GpBounds, GpError, GpHyperparams};

const LN_2PI: f64 = 1.8378770664093453;

/// Relative jitter schedule: start at 1e-10 * mean(diag), escalate x10
/// up to 1e-4 * mean(diag).
const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-4;

/// A fitted GP: hyperparameters plus the cached Cholesky factor and
/// weight vector enabling O(n) posterior-mean and O(n^2) variance
/// queries.
#[derive(Debug, Clone, PartialEq)]
pub struct GpFit {
    pub theta: GpHyperparams,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Lower-triangular factor of K + jitter*I.
    pub chol: DMatrix<f64>,
    /// Solution of (K + jitter*I) alpha = y.
    pub alpha: DVector<f64>,
    /// Achieved log marginal likelihood.
    pub lml: f64,
    /// Absolute jitter added to the diagonal.
    pub jitter: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub restarts: usize,
    pub max_iters: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            restarts: 5,
            max_iters: 120,
        }
    }
}

/// Lower Cholesky factor of `k + jitter*I`, escalating jitter until the
/// factorization succeeds. Returns (factor, absolute jitter used).
pub fn cholesky_with_jitter(k: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64), GpError> {
    let n = k.nrows();
    let mean_diag = k.diagonal().sum() / n as f64;
    if let Some(chol) = k.clone().cholesky() {
        return Ok((chol.unpack(), 0.0));
    }
    let mut rel = JITTER_START;
    while rel <= JITTER_MAX {
        let jitter = rel * mean_diag;
        let mut kj = k.clone();
        for i in 0..n {
            kj[(i, i)] += jitter;
        }
        if let Some(chol) = kj.cholesky() {
            return Ok((chol.unpack(), jitter));
        }
        rel *= 10.0;
    }
    Err(GpError::Factorization {
        max_jitter: JITTER_MAX * mean_diag,
    })
}

fn check_inputs(times: &[f64], values: &[f64]) -> Result<(), GpError> {
    if times.is_empty() {
        return Err(GpError::EmptyInput);
    }
    if times.len() != values.len() {
        return Err(GpError::LengthMismatch {
            times: times.len(),
            values: values.len(),
        });
    }
    Ok(())
}

fn factorize(
    times: &[f64],
    values: &[f64],
    theta: &GpHyperparams,
) -> Result<(DMatrix<f64>, DVector<f64>, f64, f64), GpError> {
    let n = times.len();
    let k = kernel_matrix(times, theta);
    let (l, jitter) = cholesky_with_jitter(&k)?;
    let y = DVector::from_column_slice(values);
    // alpha = K^-1 y via two triangular solves.
    let mut alpha = y.clone();
    l.solve_lower_triangular_mut(&mut alpha);
    l.transpose().solve_upper_triangular_mut(&mut alpha);
    let log_det = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let lml = -0.5 * y.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * LN_2PI;
    Ok((l, alpha, lml, jitter))
}

/// log p(y | t, theta) = -1/2 y^T K^-1 y - 1/2 log|K| - n/2 log 2pi,
/// evaluated through the Cholesky factor.
pub fn log_marginal_likelihood(
    times: &[f64],
    values: &[f64],
    theta: &GpHyperparams,
) -> Result<f64, GpError> {
    check_inputs(times, values)?;
    theta.validate()?;
    factorize(times, values, theta).map(|(_, _, lml, _)| lml)
}

/// LML together with its gradient in log-parameter space
/// (d lml / d ln theta_i), via the trace identity
/// d lml / d theta = 1/2 (alpha alpha^T - K^-1) : dK/d theta.
pub fn lml_and_grad(
    times: &[f64],
    values: &[f64],
    theta: &GpHyperparams,
) -> Result<(f64, [f64; 3]), GpError> {
    check_inputs(times, values)?;
    theta.validate()?;
    let n = times.len();
    let (l, alpha, lml, _) = factorize(times, values, theta)?;

    // K^-1 through the factor.
    let mut k_inv = DMatrix::identity(n, n);
    l.solve_lower_triangular_mut(&mut k_inv);
    let k_inv = l.transpose()
        .solve_upper_triangular(&k_inv)
        .expect("triangular solve");

    let l2 = theta.length_scale * theta.length_scale;
    let mut g_c2 = 0.0;
    let mut g_len = 0.0;
    let mut g_n2 = 0.0;
    for i in 0..n {
        for j in 0..n {
            // W = alpha alpha^T - K^-1
            let w = alpha[i] * alpha[j] - k_inv[(i, j)];
            let d = times[i] - times[j];
            let r = (-d * d / (2.0 * l2)).exp();
            // dK/d sigma_c2 = R
            g_c2 += w * r;
            // dK/d l = sigma_c2 * R * d^2 / l^3
            g_len += w * theta.sigma_c2 * r * d * d
                / (theta.length_scale * theta.length_scale * theta.length_scale);
            if i == j {
                g_n2 += w;
            }
        }
    }
    let grad = [
        0.5 * g_c2 * theta.sigma_c2,
        0.5 * g_len * theta.length_scale,
        0.5 * g_n2 * theta.sigma_n2,
    ];
    Ok((lml, grad))
}

const SIGMA_C2_FLOOR: f64 = 1e-6;
const SIGMA_N2_FLOOR: f64 = 1e-8;
const LENGTH_MIN: f64 = 0.5;
const LENGTH_MAX: f64 = 84.0;

fn population_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// OLS residual variance of a value-vs-time line fit.
fn linear_residual_variance(times: &[f64], values: &[f64]) -> f64 {
    let n = times.len() as f64;
    let tm = times.iter().sum::<f64>() / n;
    let ym = values.iter().sum::<f64>() / n;
    let sxx: f64 = times.iter().map(|t| (t - tm).powi(2)).sum();
    let sxy: f64 = times
        .iter()
        .zip(values)
        .map(|(t, y)| (t - tm) * (y - ym))
        .sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let resid_sq: f64 = times
        .iter()
        .zip(values)
        .map(|(t, y)| {
            let pred = ym + slope * (t - tm);
            (y - pred).powi(2)
        })
        .sum();
    resid_sq / n
}

/// Heuristic initial point and bounds: data variance for sigma_c2,
/// median time gap (x3) for the length-scale, line-fit residual
/// variance for sigma_n2. Bounds are initial x [0.01, 100], length
/// clamped to [0.5, 84] days. Below 3 samples, fixed fallbacks are used
/// and flagged.
pub fn heuristic_init(times: &[f64], values: &[f64]) -> Result<GpBounds, GpError> {
    check_inputs(times, values)?;
    let n = times.len();

    if n < 3 {
        let initial = GpHyperparams {
            sigma_c2: 1.0,
            length_scale: 7.0,
            sigma_n2: 0.1,
        };
        let bounds = GpBounds {
            lower: GpHyperparams {
                sigma_c2: initial.sigma_c2 * 0.01,
                length_scale: LENGTH_MIN,
                sigma_n2: initial.sigma_n2 * 0.01,
            },
            upper: GpHyperparams {
                sigma_c2: initial.sigma_c2 * 100.0,
                length_scale: LENGTH_MAX,
                sigma_n2: initial.sigma_n2 * 100.0,
            },
            initial,
            fallback: true,
        };
        bounds.validate()?;
        return Ok(bounds);
    }

    let sigma_c2 = population_variance(values).max(SIGMA_C2_FLOOR);

    let mut gaps: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    gaps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median_gap = if gaps.len() % 2 == 1 {
        gaps[gaps.len() / 2]
    } else {
        0.5 * (gaps[gaps.len() / 2 - 1] + gaps[gaps.len() / 2])
    };
    let length_scale = (median_gap * 3.0).clamp(LENGTH_MIN, LENGTH_MAX);

    let sigma_n2 = linear_residual_variance(times, values).max(SIGMA_N2_FLOOR);

    let initial = GpHyperparams {
        sigma_c2,
        length_scale,
        sigma_n2,
    };
    let bounds = GpBounds {
        lower: GpHyperparams {
            sigma_c2: sigma_c2 * 0.01,
            length_scale: (length_scale * 0.01).max(LENGTH_MIN),
            sigma_n2: sigma_n2 * 0.01,
        },
        upper: GpHyperparams {
            sigma_c2: sigma_c2 * 100.0,
            length_scale: (length_scale * 100.0).min(LENGTH_MAX),
            sigma_n2: sigma_n2 * 100.0,
        },
        initial,
        fallback: false,
    };
    // Degenerate clamp interplay: keep the box nonempty around the initial.
    let mut b = bounds;
    if b.lower.length_scale >= b.upper.length_scale {
        b.lower.length_scale = LENGTH_MIN;
        b.upper.length_scale = LENGTH_MAX;
    }
    b.initial.length_scale = b
        .initial
        .length_scale
        .clamp(b.lower.length_scale, b.upper.length_scale);
    b.validate()?;
    Ok(b)
}

/// One projected gradient-ascent run from `z0` (log-space), staying in
/// the bounds box. Returns the best point and value seen.
fn ascend(
    times: &[f64],
    values: &[f64],
    bounds: &GpBounds,
    z0: [f64; 3],
    max_iters: usize,
) -> ([f64; 3], f64) {
    let eval = |z: [f64; 3]| -> Option<(f64, [f64; 3])> {
        lml_and_grad(times, values, &GpHyperparams::from_log(z)).ok()
    };
    let mut z = bounds.clamp_log(z0);
    let Some((mut f, mut g)) = eval(z) else {
        return (z, f64::NEG_INFINITY);
    };
    let mut step = 0.5;
    for _ in 0..max_iters {
        // Zero out gradient components pushing against an active bound.
        let lo = bounds.lower.to_log();
        let hi = bounds.upper.to_log();
        let mut pg = g;
        for i in 0..3 {
            if (z[i] <= lo[i] + 1e-12 && g[i] < 0.0) || (z[i] >= hi[i] - 1e-12 && g[i] > 0.0) {
                pg[i] = 0.0;
            }
        }
        let gnorm = pg.iter().fold(0f64, |m, v| m.max(v.abs()));
        if gnorm < 1e-8 {
            break;
        }
        // Backtracking line search with simple sufficient-increase rule.
        let mut accepted = false;
        let mut t = step;
        for _ in 0..40 {
            let cand = bounds.clamp_log([z[0] + t * pg[0], z[1] + t * pg[1], z[2] + t * pg[2]]);
            let dz: f64 = (0..3).map(|i| (cand[i] - z[i]) * pg[i]).sum();
            if dz <= 0.0 {
                break;
            }
            if let Some((fc, gc)) = eval(cand) {
                if fc > f + 1e-4 * dz {
                    z = cand;
                    f = fc;
                    g = gc;
                    step = (t * 2.0).min(10.0);
                    accepted = true;
                    break;
                }
            }
            t *= 0.25;
        }
        if !accepted {
            break;
        }
    }
    (z, f)
}

/// Bounded maximum-marginal-likelihood fit. The first start is the
/// heuristic/provided initial; additional restarts sample log-uniformly
/// within the bounds. Deterministic given the seed; the result's lml is
/// never below the value at the initial point.
pub fn fit_gp(
    times: &[f64],
    values: &[f64],
    bounds: &GpBounds,
    options: &FitOptions,
    seed: u64,
) -> Result<GpFit, GpError> {
    check_inputs(times, values)?;
    bounds.validate()?;

    let mut best_z = bounds.clamp_log(bounds.initial.to_log());
    let mut best_f = match log_marginal_likelihood(times, values, &bounds.initial) {
        Ok(f) => f,
        Err(_) => f64::NEG_INFINITY,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = bounds.lower.to_log();
    let hi = bounds.upper.to_log();
    let restarts = options.restarts.max(1);
    for r in 0..restarts {
        let z0 = if r == 0 {
            bounds.initial.to_log()
        } else {
            [
                rng.gen_range(lo[0]..hi[0]),
                rng.gen_range(lo[1]..hi[1]),
                rng.gen_range(lo[2]..hi[2]),
            ]
        };
        let (z, f) = ascend(times, values, bounds, z0, options.max_iters);
        if f > best_f {
            best_f = f;
            best_z = z;
        }
    }

    if best_f == f64::NEG_INFINITY {
        return Err(GpError::FitFailed {
            key: "gp".into(),
            detail: "all restarts failed factorization".into(),
        });
    }

    let theta = GpHyperparams::from_log(best_z);
    let (chol, alpha, lml, jitter) = factorize(times, values, &theta)?;
    Ok(GpFit {
        theta,
        times: times.to_vec(),
        values: values.to_vec(),
        chol,
        alpha,
        lml,
        jitter,
    })
}
