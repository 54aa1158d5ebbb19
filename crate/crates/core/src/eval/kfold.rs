//! Deterministic stratified k-fold splitting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::EvalError;

/// Stratified k-fold: indices of each class are shuffled (seeded) and
/// dealt round-robin, so per-fold class counts differ by at most one.
/// Returns (train, val) index pairs; the val sets partition 0..n.
pub fn stratified_kfold(
    labels: &[bool],
    k: usize,
    seed: u64,
) -> Result<Vec<(Vec<usize>, Vec<usize>)>, EvalError> {
    if k < 2 {
        return Err(EvalError::BadK(k));
    }
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    let smallest = pos.len().min(neg.len());
    if smallest < k {
        return Err(EvalError::ClassTooSmall {
            k,
            class_size: smallest,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);

    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, idx) in pos.iter().chain(neg.iter()).enumerate() {
        folds[i % k].push(*idx);
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }

    Ok(folds
        .iter()
        .map(|val| {
            let train: Vec<usize> = (0..labels.len()).filter(|i| !val.contains(i)).collect();
            (train, val.clone())
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_divisibility_gives_one_positive_per_fold() {
        let labels: Vec<bool> = (0..10).map(|i| i < 5).collect();
        let folds = stratified_kfold(&labels, 5, 0).unwrap();
        for (_, val) in &folds {
            assert_eq!(val.iter().filter(|&&i| labels[i]).count(), 1);
            assert_eq!(val.len(), 2);
        }
    }

    #[test]
    fn folds_partition_all_indices() {
        let labels: Vec<bool> = (0..23).map(|i| i % 3 == 0).collect();
        let folds = stratified_kfold(&labels, 4, 9).unwrap();
        let mut seen = vec![false; labels.len()];
        for (train, val) in &folds {
            for &i in val {
                assert!(!seen[i], "index {i} in two folds");
                seen[i] = true;
                assert!(!train.contains(&i));
            }
            assert_eq!(train.len() + val.len(), labels.len());
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn positive_counts_balanced_within_one() {
        let labels: Vec<bool> = (0..41).map(|i| i % 4 == 0).collect();
        let folds = stratified_kfold(&labels, 5, 3).unwrap();
        let counts: Vec<usize> = folds
            .iter()
            .map(|(_, v)| v.iter().filter(|&&i| labels[i]).count())
            .collect();
        let min = counts.iter().min().unwrap();
        let max = counts.iter().max().unwrap();
        assert!(max - min <= 1, "counts {counts:?}");
    }

    #[test]
    fn deterministic_per_seed() {
        let labels: Vec<bool> = (0..30).map(|i| i % 2 == 0).collect();
        assert_eq!(
            stratified_kfold(&labels, 3, 7).unwrap(),
            stratified_kfold(&labels, 3, 7).unwrap()
        );
        assert_ne!(
            stratified_kfold(&labels, 3, 7).unwrap(),
            stratified_kfold(&labels, 3, 8).unwrap()
        );
    }

    #[test]
    fn class_smaller_than_k_errors() {
        let labels = [true, true, false, false, false];
        assert!(matches!(stratified_kfold(&labels, 2, 0), Ok(_)));
        assert!(matches!(
            stratified_kfold(&labels, 3, 0),
            Err(EvalError::ClassTooSmall { .. })
        ));
    }
}
