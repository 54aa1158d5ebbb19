//! Tie-aware AUROC via the Mann-Whitney pairwise count, computed in
//! O(n log n) with integer arithmetic so it equals the brute-force
//! pairwise sum exactly.

use super::EvalError;

fn check(scores: &[f64], labels: &[bool]) -> Result<(usize, usize), EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(EvalError::NonFiniteScore(i));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass);
    }
    Ok((n_pos, n_neg))
}

/// Probability a random positive outranks a random negative, ties
/// counted one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    let (n_pos, n_neg) = check(scores, labels)?;

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));

    // Walk tie groups in ascending score order, counting (pos > neg)
    // wins against all negatives strictly below, and half-wins within
    // the group. twice_wins keeps everything integral.
    let mut twice_wins: u128 = 0;
    let mut negs_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let mut group_pos: u128 = 0;
        let mut group_neg: u128 = 0;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                group_pos += 1;
            } else {
                group_neg += 1;
            }
            j += 1;
        }
        twice_wins += 2 * group_pos * negs_below + group_pos * group_neg;
        negs_below += group_neg;
        i = j;
    }
    Ok(twice_wins as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

/// Tie-aware ROC curve as (fpr, tpr) points, one per distinct score
/// threshold, from (0,0) to (1,1); monotone nondecreasing in both
/// coordinates. Trapezoidal area under this curve equals `auroc`.
pub fn roc_points(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>, EvalError> {
    let (n_pos, n_neg) = check(scores, labels)?;

    let mut order: Vec<usize> = (0..scores.len()).collect();
    // Descending: lowering the threshold admits more predictions.
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));

    let mut points = vec![(0.0, 0.0)];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
        i = j;
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// O(n_pos * n_neg) pairwise oracle, independent of the rank path.
    pub fn auroc_pairwise(scores: &[f64], labels: &[bool]) -> f64 {
        let mut twice = 0u128;
        let mut pairs = 0u128;
        for (i, &li) in labels.iter().enumerate() {
            if !li {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj {
                    continue;
                }
                pairs += 1;
                if scores[i] > scores[j] {
                    twice += 2;
                } else if scores[i] == scores[j] {
                    twice += 1;
                }
            }
        }
        twice as f64 / (2.0 * pairs as f64)
    }

    #[test]
    fn perfect_separation_is_one() {
        let scores = [0.9, 0.8, 0.2, 0.1];
        let labels = [true, true, false, false];
        assert_eq!(auroc(&scores, &labels).unwrap(), 1.0);
    }

    #[test]
    fn all_ties_is_half() {
        let scores = [0.5; 6];
        let labels = [true, false, true, false, false, true];
        assert_eq!(auroc(&scores, &labels).unwrap(), 0.5);
    }

    #[test]
    fn single_class_errors() {
        assert!(matches!(
            auroc(&[0.1, 0.2], &[true, true]),
            Err(EvalError::SingleClass)
        ));
    }

    #[test]
    fn matches_pairwise_oracle_with_heavy_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let n = rng.gen_range(2..50);
            let scores: Vec<f64> = (0..n).map(|_| (rng.gen_range(0..5) as f64) / 4.0).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
            labels[0] = true;
            labels[n - 1] = false;
            let fast = auroc(&scores, &labels).unwrap();
            let slow = auroc_pairwise(&scores, &labels);
            assert_eq!(fast.to_bits(), slow.to_bits(), "scores {scores:?}");
        }
    }

    #[test]
    fn complement_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let n = rng.gen_range(4..40);
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
            labels[0] = true;
            labels[1] = false;
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            let a = auroc(&scores, &labels).unwrap();
            let b = auroc(&neg, &labels).unwrap();
            assert_relative_eq!(a + b, 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn invariant_under_monotone_transform() {
        let scores = [0.1f64, 0.4, 0.4, 0.7, 0.9, 0.2];
        let labels = [false, true, false, true, true, false];
        let transformed: Vec<f64> = scores.iter().map(|&s| (10.0 * s).exp()).collect();
        assert_eq!(
            auroc(&scores, &labels).unwrap().to_bits(),
            auroc(&transformed, &labels).unwrap().to_bits()
        );
    }

    #[test]
    fn roc_curve_shape_and_trapezoid_area() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let n = rng.gen_range(4..60);
            let scores: Vec<f64> = (0..n).map(|_| (rng.gen_range(0..8) as f64) / 7.0).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.35)).collect();
            labels[0] = true;
            labels[1] = false;
            let pts = roc_points(&scores, &labels).unwrap();
            assert_eq!(pts[0], (0.0, 0.0));
            assert_eq!(*pts.last().unwrap(), (1.0, 1.0));
            for w in pts.windows(2) {
                assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
            }
            let area: f64 = pts
                .windows(2)
                .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
                .sum();
            let a = auroc(&scores, &labels).unwrap();
            assert_relative_eq!(area, a, epsilon = 1e-12);
        }
    }
}
