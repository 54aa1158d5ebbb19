//! L2-regularized logistic regression fit by gradient descent with
//! backtracking line search; also serves as the RFE base estimator.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureTable;

#[derive(Debug, Error)]
pub enum LogisticError {
    #[error("labels contain a single class")]
    SingleClass,
    #[error("row/label count mismatch: {rows} rows vs {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub column_names: Vec<String>,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub l2: f64,
    /// Per-column standardization fitted on the training rows; applied
    /// before the linear map at prediction time.
    pub feature_means: Vec<f64>,
    pub feature_stds: Vec<f64>,
    /// Gradient inf-norm reached tolerance before max_iter.
    pub converged: bool,
    pub grad_inf_norm: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Objective: mean BCE + (l2/2) ||w||^2, bias unpenalized.
fn loss_and_grad(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    w: &DVector<f64>,
    b: f64,
    l2: f64,
) -> (f64, DVector<f64>, f64) {
    let n = x.nrows() as f64;
    let z = x * w + DVector::from_element(x.nrows(), b);
    let mut loss = 0.0;
    let mut resid = DVector::zeros(x.nrows());
    for i in 0..x.nrows() {
        let p = sigmoid(z[i]).clamp(1e-12, 1.0 - 1e-12);
        loss -= y[i] * p.ln() + (1.0 - y[i]) * (1.0 - p).ln();
        resid[i] = p - y[i];
    }
    loss = loss / n + 0.5 * l2 * w.dot(w);
    let grad_w = x.transpose() * &resid / n + w * l2;
    let grad_b = resid.sum() / n;
    (loss, grad_w, grad_b)
}

/// Minimizes mean BCE + (l2/2)||w||^2 by gradient descent with
/// backtracking line search. Converged when the gradient inf-norm drops
/// below `tol`; otherwise stops at `max_iter` with a warning (separable
/// data with l2=0 diverges logically).
pub fn fit_logistic(
    features: &FeatureTable,
    labels: &[bool],
    l2: f64,
    max_iter: usize,
    tol: f64,
) -> Result<LogisticModel, LogisticError> {
    if features.n_rows() != labels.len() {
        return Err(LogisticError::LengthMismatch {
            rows: features.n_rows(),
            labels: labels.len(),
        });
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(LogisticError::SingleClass);
    }

    // Standardize columns on the fitting rows: the raw table mixes scales
    // spanning several orders of magnitude, which stalls gradient descent.
    let n_cols = features.n_cols();
    let n_rows = features.n_rows() as f64;
    let mut feature_means = vec![0.0; n_cols];
    let mut feature_stds = vec![1.0; n_cols];
    for j in 0..n_cols {
        let mean = features.rows.iter().map(|r| r[j]).sum::<f64>() / n_rows;
        let var = features
            .rows
            .iter()
            .map(|r| (r[j] - mean).powi(2))
            .sum::<f64>()
            / n_rows;
        feature_means[j] = mean;
        // Constant columns pass through as exact zeros.
        feature_stds[j] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
    }
    let x = DMatrix::from_fn(features.n_rows(), n_cols, |i, j| {
        (features.rows[i][j] - feature_means[j]) / feature_stds[j]
    });
    let y = DVector::from_iterator(
        labels.len(),
        labels.iter().map(|&l| if l { 1.0 } else { 0.0 }),
    );
    let mut w = DVector::zeros(features.n_cols());
    let mut b = 0.0;
    let (mut loss, mut gw, mut gb) = loss_and_grad(&x, &y, &w, b, l2);
    let mut step = 1.0;
    let mut converged = false;
    let mut gnorm = gw.amax().max(gb.abs());

    for _ in 0..max_iter {
        gnorm = if gw.is_empty() { gb.abs() } else { gw.amax().max(gb.abs()) };
        if gnorm < tol {
            converged = true;
            break;
        }
        let g2 = gw.dot(&gw) + gb * gb;
        let mut t = step;
        let mut accepted = false;
        for _ in 0..50 {
            let wc = &w - &gw * t;
            let bc = b - gb * t;
            let (lc, gwc, gbc) = loss_and_grad(&x, &y, &wc, bc, l2);
            if lc < loss - 1e-4 * t * g2 {
                w = wc;
                b = bc;
                loss = lc;
                gw = gwc;
                gb = gbc;
                step = (t * 2.0).min(1e4);
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if !converged {
        log::warn!("logistic fit stopped at max_iter with grad inf-norm {gnorm:e}");
    }

    Ok(LogisticModel {
        column_names: features.column_names.clone(),
        weights: w.iter().copied().collect(),
        bias: b,
        l2,
        feature_means,
        feature_stds,
        converged,
        grad_inf_norm: gnorm,
    })
}

/// sigmoid((X - mean)/std * w + b), pure.
pub fn predict_logistic(model: &LogisticModel, features: &FeatureTable) -> Vec<f64> {
    features
        .rows
        .iter()
        .map(|row| {
            let z: f64 = row
                .iter()
                .zip(model.weights.iter().enumerate())
                .map(|(x, (j, w))| (x - model.feature_means[j]) / model.feature_stds[j] * w)
                .sum::<f64>()
                + model.bias;
            sigmoid(z)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn table(cols: Vec<Vec<f64>>, n: usize) -> FeatureTable {
        let rows: Vec<Vec<f64>> = (0..n).map(|i| cols.iter().map(|c| c[i]).collect()).collect();
        FeatureTable::new(
            (0..n).map(|i| format!("r{i}")).collect(),
            (0..cols.len()).map(|j| format!("c{j}")).collect(),
            rows,
        )
        .unwrap()
    }

    #[test]
    fn label_feature_converges_with_positive_weight() {
        let labels: Vec<bool> = (0..40).map(|i| i % 2 == 0).collect();
        let col: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
        let t = table(vec![col], 40);
        let m = fit_logistic(&t, &labels, 1.0, 2000, 1e-6).unwrap();
        assert!(m.converged, "grad inf-norm {}", m.grad_inf_norm);
        assert!(m.weights[0] > 0.0);
        assert!(m.grad_inf_norm < 1e-6);
    }

    #[test]
    fn single_class_errors() {
        let t = table(vec![vec![1.0, 2.0]], 2);
        assert!(matches!(
            fit_logistic(&t, &[true, true], 1.0, 100, 1e-6),
            Err(LogisticError::SingleClass)
        ));
    }

    #[test]
    fn zero_feature_table_learns_base_rate_intercept() {
        let labels: Vec<bool> = (0..10).map(|i| i < 3).collect();
        let t = table(vec![], 10);
        let m = fit_logistic(&t, &labels, 0.0, 2000, 1e-9).unwrap();
        // Closed-form intercept: log-odds of the base rate 0.3.
        let expected = (0.3f64 / 0.7).ln();
        assert_relative_eq!(m.bias, expected, epsilon = 1e-6);
    }

    #[test]
    fn zero_model_predicts_half() {
        let t = table(vec![vec![1.0, -2.0, 3.0]], 3);
        let m = LogisticModel {
            column_names: vec!["c0".into()],
            weights: vec![0.0],
            bias: 0.0,
            l2: 0.0,
            feature_means: vec![0.0],
            feature_stds: vec![1.0],
            converged: true,
            grad_inf_norm: 0.0,
        };
        for p in predict_logistic(&m, &t) {
            assert_eq!(p, 0.5);
        }
    }

    #[test]
    fn prediction_monotone_in_positive_weight_feature() {
        let m = LogisticModel {
            column_names: vec!["c0".into()],
            weights: vec![2.0],
            bias: -0.5,
            l2: 0.0,
            feature_means: vec![0.0],
            feature_stds: vec![1.0],
            converged: true,
            grad_inf_norm: 0.0,
        };
        let t = table(vec![vec![0.1, 0.2, 0.9]], 3);
        let p = predict_logistic(&m, &t);
        assert!(p[0] < p[1] && p[1] < p[2]);
    }

    #[test]
    fn hand_computed_sigmoid_two_by_two() {
        let m = LogisticModel {
            column_names: vec!["a".into(), "b".into()],
            weights: vec![1.0, -1.0],
            bias: 0.5,
            l2: 0.0,
            feature_means: vec![0.0, 0.0],
            feature_stds: vec![1.0, 1.0],
            converged: true,
            grad_inf_norm: 0.0,
        };
        let t = table(vec![vec![1.0, 0.0], vec![0.0, 2.0]], 2);
        let p = predict_logistic(&m, &t);
        assert_relative_eq!(p[0], 1.0 / (1.0 + (-1.5f64).exp()), epsilon = 1e-12);
        assert_relative_eq!(p[1], 1.0 / (1.0 + (1.5f64).exp()), epsilon = 1e-12);
    }

    #[test]
    fn rescaling_feature_and_weight_leaves_predictions_unchanged() {
        let t = table(vec![vec![0.4, -1.2, 2.2, 0.0]], 4);
        let m1 = LogisticModel {
            column_names: vec!["c0".into()],
            weights: vec![0.8],
            bias: 0.1,
            l2: 0.0,
            feature_means: vec![0.0],
            feature_stds: vec![1.0],
            converged: true,
            grad_inf_norm: 0.0,
        };
        let c = 37.5;
        let t2 = table(vec![vec![0.4 * c, -1.2 * c, 2.2 * c, 0.0]], 4);
        let m2 = LogisticModel {
            weights: vec![0.8 / c],
            ..m1.clone()
        };
        let p1 = predict_logistic(&m1, &t);
        let p2 = predict_logistic(&m2, &t2);
        for (a, b) in p1.iter().zip(&p2) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }
}
