//! Recursive feature elimination with the logistic baseline as the
//! ranking estimator.

use super::{FeatureError, FeatureTable};
use crate::logistic::fit_logistic;

/// Repeatedly fits the logistic baseline on the surviving columns
/// (standardized in-table so coefficients are comparable) and drops the
/// column with the smallest |coefficient|, until `keep` remain. Ties
/// drop the lower column index first. Returns surviving column indices
/// in ascending order.
pub fn rfe(
    features: &FeatureTable,
    labels: &[bool],
    keep: usize,
    l2: f64,
) -> Result<Vec<usize>, FeatureError> {
    if keep > features.n_cols() {
        return Err(FeatureError::KeepTooLarge {
            keep,
            columns: features.n_cols(),
        });
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(FeatureError::SingleClass);
    }
    if n_pos < 2 || n_neg < 2 {
        return Err(FeatureError::TooFewRows {
            pos: n_pos,
            neg: n_neg,
        });
    }

    // Standardize once so |coefficient| is a scale-free importance.
    let n = features.n_rows() as f64;
    let mut scaled = features.clone();
    for j in 0..scaled.n_cols() {
        let col = scaled.column(j);
        let mean = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        for row in &mut scaled.rows {
            row[j] = (row[j] - mean) / std;
        }
    }

    let mut remaining: Vec<usize> = (0..features.n_cols()).collect();
    while remaining.len() > keep {
        let sub = scaled.select(&remaining);
        let model = match fit_logistic(&sub, labels, l2, 300, 1e-6) {
            Ok(m) => m,
            Err(e) => {
                log::warn!("RFE base fit failed ({e}); returning remaining columns");
                break;
            }
        };
        // Smallest |coefficient|, ties by lower original column index.
        let mut drop_pos = 0;
        let mut drop_abs = f64::INFINITY;
        for (pos, w) in model.weights.iter().enumerate() {
            let a = w.abs();
            if a < drop_abs {
                drop_abs = a;
                drop_pos = pos;
            }
        }
        remaining.remove(drop_pos);
    }
    Ok(remaining)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn table(cols: Vec<Vec<f64>>) -> FeatureTable {
        let n = cols[0].len();
        let rows: Vec<Vec<f64>> = (0..n).map(|i| cols.iter().map(|c| c[i]).collect()).collect();
        FeatureTable::new(
            (0..n).map(|i| format!("r{i}")).collect(),
            (0..cols.len()).map(|j| format!("c{j}")).collect(),
            rows,
        )
        .unwrap()
    }

    #[test]
    fn keep_all_is_identity() {
        let labels = [true, false, true, false];
        let t = table(vec![vec![1.0, 0.0, 1.0, 0.0], vec![0.3, 0.1, 0.9, 0.2]]);
        let sel = rfe(&t, &labels, 2, 1.0).unwrap();
        assert_eq!(sel, vec![0, 1]);
    }

    #[test]
    fn planted_signal_recovered() {
        let mut hits = 0;
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 60;
            let labels: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
            let signal: Vec<f64> = labels
                .iter()
                .map(|&l| if l { 1.0 } else { 0.0 } + rng.gen_range(-0.1..0.1))
                .collect();
            let noise: Vec<Vec<f64>> = (0..4)
                .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let mut cols = vec![signal];
            cols.extend(noise);
            let t = table(cols);
            let sel = rfe(&t, &labels, 1, 1.0).unwrap();
            if sel == vec![0] {
                hits += 1;
            }
        }
        assert!(hits >= 95, "planted column recovered only {hits}/100 times");
    }

    #[test]
    fn duplicate_informative_columns_tie_break() {
        let labels: Vec<bool> = (0..20).map(|i| i % 2 == 0).collect();
        let col: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();
        let t = table(vec![col.clone(), col]);
        let sel = rfe(&t, &labels, 1, 1.0).unwrap();
        assert_eq!(sel.len(), 1);
        // Equal coefficients: the lower index is dropped first.
        assert_eq!(sel, vec![1]);
    }

    #[test]
    fn output_is_strict_subset_of_requested_size() {
        let labels: Vec<bool> = (0..30).map(|i| i % 3 == 0).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cols: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let t = table(cols);
        let sel = rfe(&t, &labels, 3, 1.0).unwrap();
        assert_eq!(sel.len(), 3);
        assert!(sel.windows(2).all(|w| w[0] < w[1]));
        assert!(sel.iter().all(|&j| j < 6));
    }
}
