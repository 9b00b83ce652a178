use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::EvalError;
use crate::bus::EcuId;
use crate::seed::{self, Stream};

/// Indices of each class, in ascending order.
fn by_class(labels: &[EcuId]) -> BTreeMap<EcuId, Vec<usize>> {
    let mut groups: BTreeMap<EcuId, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    groups
}

/// Training-set size for `n` samples: the test share is rounded up.
pub fn train_size(n: usize, train_fraction: f64) -> usize {
    let test = ((1.0 - train_fraction) * n as f64 - 1e-9).ceil().max(0.0) as usize;
    n - test.min(n)
}

/// Splits `total` across groups in proportion to their sizes: floors first, then
/// the leftover goes to the largest remainders (earlier groups win ties).
fn apportion(sizes: &[usize], total: usize) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    let mut quota: Vec<usize> = sizes.iter().map(|&s| s * total / n).collect();
    let mut left = total - quota.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    // Remainder of s*total/n, compared exactly as integers.
    order.sort_by_key(|&i| std::cmp::Reverse((sizes[i] * total) % n));
    for &i in &order {
        if left == 0 {
            break;
        }
        if quota[i] < sizes[i] {
            quota[i] += 1;
            left -= 1;
        }
    }
    quota
}

/// Disjoint, exhaustive (train, test) index sets, each sorted ascending.
pub fn train_test_split(
    labels: &[EcuId],
    train_fraction: f64,
    stratified: bool,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), EvalError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(EvalError::Fraction(train_fraction));
    }
    let mut rng = seed::rng(seed, Stream::Split);
    let n_train = train_size(labels.len(), train_fraction);
    let mut train = Vec::with_capacity(n_train);
    let mut test = Vec::with_capacity(labels.len() - n_train);
    if stratified {
        let groups = by_class(labels);
        let sizes: Vec<usize> = groups.values().map(Vec::len).collect();
        let quotas = apportion(&sizes, n_train);
        for ((&class, idx), &q) in groups.iter().zip(&quotas) {
            if q == 0 {
                return Err(EvalError::TooFewSamples {
                    class,
                    count: idx.len(),
                    required: format!("a training sample at fraction {train_fraction}"),
                });
            }
            let mut idx = idx.clone();
            idx.shuffle(&mut rng);
            train.extend_from_slice(&idx[..q]);
            test.extend_from_slice(&idx[q..]);
        }
    } else {
        let mut idx: Vec<usize> = (0..labels.len()).collect();
        idx.shuffle(&mut rng);
        train.extend_from_slice(&idx[..n_train]);
        test.extend_from_slice(&idx[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// `k` disjoint test folds covering every index. Within each class the samples
/// are shuffled and dealt round-robin, continuing where the previous class
/// stopped, so per-class and total fold sizes both differ by at most one.
pub fn stratified_kfold(labels: &[EcuId], k: usize, seed: u64) -> Result<Vec<Vec<usize>>, EvalError> {
    if k < 2 {
        return Err(EvalError::Folds(k));
    }
    let mut rng = seed::rng(seed, Stream::Fold);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for (class, mut idx) in by_class(labels) {
        if idx.len() < k {
            return Err(EvalError::TooFewSamples {
                class,
                count: idx.len(),
                required: format!("{k} samples for {k} folds"),
            });
        }
        idx.shuffle(&mut rng);
        for i in idx {
            folds[next].push(i);
            next = (next + 1) % k;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Training indices for fold `held_out`: everything not in it.
pub fn fold_complement(folds: &[Vec<usize>], held_out: usize) -> Vec<usize> {
    let mut train: Vec<usize> = folds
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != held_out)
        .flat_map(|(_, f)| f.iter().copied())
        .collect();
    train.sort_unstable();
    train
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(classes: u16, per_class: usize) -> Vec<EcuId> {
        (0..classes)
            .flat_map(|c| std::iter::repeat_n(EcuId(c), per_class))
            .collect()
    }

    #[test]
    fn six_percent_of_the_full_set() {
        assert_eq!(train_size(59_982, 0.06), 3_598);
        // Ten uneven classes summing to 59,982.
        let sizes = [6011, 5990, 5984, 6002, 5999, 5995, 6003, 5998, 6000, 6000];
        let l: Vec<EcuId> = sizes
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| std::iter::repeat_n(EcuId(c as u16), n))
            .collect();
        assert_eq!(l.len(), 59_982);
        let (train, test) = train_test_split(&l, 0.06, true, 1).unwrap();
        assert_eq!((train.len(), test.len()), (3_598, 56_384));
    }

    #[test]
    fn half_split_is_five_five() {
        let l = labels(3, 10);
        let (train, test) = train_test_split(&l, 0.5, true, 3).unwrap();
        for c in 0..3 {
            assert_eq!(train.iter().filter(|&&i| l[i] == EcuId(c)).count(), 5);
            assert_eq!(test.iter().filter(|&&i| l[i] == EcuId(c)).count(), 5);
        }
        let mut all = [train.clone(), test.clone()].concat();
        all.sort_unstable();
        assert_eq!(all, (0..30).collect::<Vec<_>>());
        assert_eq!(train_test_split(&l, 0.5, true, 3).unwrap(), (train.clone(), test));
        assert_ne!(train_test_split(&l, 0.5, true, 4).unwrap().0, train);
    }

    #[test]
    fn split_errors() {
        let l = labels(2, 3);
        assert!(matches!(train_test_split(&l, 1.0, true, 0), Err(EvalError::Fraction(_))));
        assert!(matches!(
            train_test_split(&l, 0.1, true, 0),
            Err(EvalError::TooFewSamples { .. })
        ));
        assert_eq!(train_test_split(&l, 0.5, false, 0).unwrap().0.len(), 3);
    }

    #[test]
    fn kfold_balance() {
        let l = labels(10, 100);
        let folds = stratified_kfold(&l, 10, 5).unwrap();
        for f in &folds {
            for c in 0..10 {
                assert_eq!(f.iter().filter(|&&i| l[i] == EcuId(c)).count(), 10);
            }
        }
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
        assert_eq!(fold_complement(&folds, 0).len(), 900);
    }

    #[test]
    fn kfold_uneven_and_errors() {
        let mut l = labels(3, 13);
        l.extend(labels(1, 4));
        let folds = stratified_kfold(&l, 4, 0).unwrap();
        for c in 0..3 {
            let per: Vec<usize> = folds
                .iter()
                .map(|f| f.iter().filter(|&&i| l[i] == EcuId(c)).count())
                .collect();
            assert!(per.iter().max().unwrap() - per.iter().min().unwrap() <= 1);
        }
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        assert!(matches!(stratified_kfold(&l, 1, 0), Err(EvalError::Folds(1))));
        assert!(matches!(
            stratified_kfold(&labels(2, 3), 4, 0),
            Err(EvalError::TooFewSamples { .. })
        ));
    }

    #[test]
    fn apportion_sums_exactly() {
        assert_eq!(apportion(&[5, 5, 5], 7), vec![3, 2, 2]);
        assert_eq!(apportion(&[1, 99], 50), vec![1, 49]);
    }
}
