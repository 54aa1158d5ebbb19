//! Two-group ANOVA F statistic per feature column.

use super::{FeatureError, FeatureTable};

/// F = between-group mean square / within-group mean square, for the
/// two label groups. Perfect separation (zero within-variance with
/// nonzero between) yields +inf, which ranks above all finite values;
/// an entirely constant column yields 0.
pub fn anova_f(features: &FeatureTable, labels: &[bool]) -> Result<Vec<f64>, FeatureError> {
    assert_eq!(features.n_rows(), labels.len(), "row/label count mismatch");
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(FeatureError::SingleClass);
    }

    let n = labels.len() as f64;
    let mut out = Vec::with_capacity(features.n_cols());
    for j in 0..features.n_cols() {
        let col = features.column(j);
        let (mut sum_p, mut sum_n) = (0.0, 0.0);
        for (v, &l) in col.iter().zip(labels) {
            if l {
                sum_p += v;
            } else {
                sum_n += v;
            }
        }
        let mean_p = sum_p / n_pos as f64;
        let mean_n = sum_n / n_neg as f64;
        let grand = (sum_p + sum_n) / n;

        let ss_between =
            n_pos as f64 * (mean_p - grand).powi(2) + n_neg as f64 * (mean_n - grand).powi(2);
        let mut ss_within = 0.0;
        for (v, &l) in col.iter().zip(labels) {
            let m = if l { mean_p } else { mean_n };
            ss_within += (v - m).powi(2);
        }
        // k = 2 groups: df_between = 1, df_within = n - 2.
        let msb = ss_between;
        let msw = ss_within / (n - 2.0);
        let f = if msw > 0.0 {
            msb / msw
        } else if msb > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        out.push(f);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

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
    fn perfect_separation_is_infinite() {
        let labels = [false, false, true, true];
        let t = table(vec![vec![0.0, 0.0, 1.0, 1.0]]);
        let f = anova_f(&t, &labels).unwrap();
        assert!(f[0].is_infinite() && f[0] > 0.0);
    }

    #[test]
    fn constant_column_is_zero() {
        let labels = [false, true, false, true];
        let t = table(vec![vec![2.0; 4]]);
        assert_eq!(anova_f(&t, &labels).unwrap()[0], 0.0);
    }

    #[test]
    fn four_row_hand_computation() {
        // Groups {1,3} (neg) and {2,4} (pos): means 2 and 3, grand 2.5.
        // SSB = 2*(2-2.5)^2 + 2*(3-2.5)^2 = 1; SSW = (1-2)^2+(3-2)^2+(2-3)^2+(4-3)^2 = 4.
        // MSW = 4 / (4-2) = 2; F = 1/2.
        let labels = [false, true, false, true];
        let t = table(vec![vec![1.0, 2.0, 3.0, 4.0]]);
        let f = anova_f(&t, &labels).unwrap();
        assert_relative_eq!(f[0], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn single_class_errors() {
        let t = table(vec![vec![1.0, 2.0]]);
        assert!(matches!(
            anova_f(&t, &[true, true]),
            Err(FeatureError::SingleClass)
        ));
    }

    #[test]
    fn affine_rescaling_invariance() {
        let labels = [false, true, false, true, true, false, true, false];
        let col = vec![0.3, 1.7, -0.2, 2.5, 1.1, 0.0, 3.0, 0.4];
        let scaled: Vec<f64> = col.iter().map(|v| 250.0 * v - 17.0).collect();
        let f1 = anova_f(&table(vec![col]), &labels).unwrap()[0];
        let f2 = anova_f(&table(vec![scaled]), &labels).unwrap()[0];
        assert_relative_eq!(f1, f2, epsilon = 1e-9, max_relative = 1e-9);
    }
}
