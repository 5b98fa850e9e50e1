use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Corpus;
use crate::error::{Error, Result};
use crate::rng;

/// Train/test index sets into a corpus, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn class_indices(corpus: &Corpus) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (i, s) in corpus.iter().enumerate() {
        match s.label {
            Some(1) => pos.push(i),
            Some(_) => neg.push(i),
            None => return Err(Error::CannotStratify(format!("segment {:?} is unlabeled", s.id))),
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::CannotStratify("corpus contains a single class".into()));
    }
    Ok((pos, neg))
}

fn complement(n: usize, test: &[usize]) -> Vec<usize> {
    let mut in_test = vec![false; n];
    for &i in test {
        in_test[i] = true;
    }
    (0..n).filter(|&i| !in_test[i]).collect()
}

/// Stratified k-fold partition. Each class is shuffled under `seed` and dealt
/// round-robin, so every fold holds within one sample of its share of each
/// class and fold sizes differ by at most one.
pub fn stratified_splits(corpus: &Corpus, folds: usize, seed: u64) -> Result<Vec<FoldIndices>> {
    if folds < 2 {
        return Err(Error::invalid("folds must be at least 2"));
    }
    if folds > corpus.len() {
        return Err(Error::invalid(format!("{folds} folds requested for {} segments", corpus.len())));
    }
    let (mut pos, mut neg) = class_indices(corpus)?;
    let mut r = rng::rng(seed);
    pos.shuffle(&mut r);
    neg.shuffle(&mut r);

    let mut tests = vec![Vec::new(); folds];
    for (k, &i) in pos.iter().enumerate() {
        tests[k % folds].push(i);
    }
    let offset = pos.len() % folds;
    for (k, &i) in neg.iter().enumerate() {
        tests[(k + offset) % folds].push(i);
    }
    Ok(tests
        .into_iter()
        .map(|mut test| {
            test.sort_unstable();
            FoldIndices {
                train: complement(corpus.len(), &test),
                test,
            }
        })
        .collect())
}

/// Single stratified random split with about `test_fraction` of each class
/// held out (at least one sample per class).
pub fn stratified_holdout(corpus: &Corpus, test_fraction: f64, seed: u64) -> Result<FoldIndices> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid("test_fraction must lie in (0, 1)"));
    }
    let (mut pos, mut neg) = class_indices(corpus)?;
    if pos.len() < 2 || neg.len() < 2 {
        return Err(Error::CannotStratify("each class needs at least two samples".into()));
    }
    let mut r = rng::rng(seed);
    pos.shuffle(&mut r);
    neg.shuffle(&mut r);
    let take = |n: usize| ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    let mut test: Vec<usize> = pos[..take(pos.len())].iter().chain(&neg[..take(neg.len())]).copied().collect();
    test.sort_unstable();
    Ok(FoldIndices {
        train: complement(corpus.len(), &test),
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Domain, Segment};
    use std::collections::BTreeSet;

    fn corpus(n: usize, n_pos: usize) -> Corpus {
        Corpus::from_segments(
            (0..n)
                .map(|i| Segment::new(format!("s{i}"), "text", Some((i < n_pos) as u8), Domain::Synthetic))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn positives_spread_evenly() {
        let c = corpus(100, 20);
        let folds = stratified_splits(&c, 5, 1).unwrap();
        for f in &folds {
            let pos = f.test.iter().filter(|&&i| i < 20).count();
            assert_eq!(pos, 4);
            assert_eq!(f.test.len(), 20);
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let c = corpus(37, 11);
        assert_eq!(stratified_splits(&c, 5, 9).unwrap(), stratified_splits(&c, 5, 9).unwrap());
        assert_ne!(stratified_splits(&c, 5, 9).unwrap(), stratified_splits(&c, 5, 10).unwrap());
    }

    #[test]
    fn folds_partition_the_corpus() {
        let c = corpus(53, 17);
        let folds = stratified_splits(&c, 5, 4).unwrap();
        let mut union = BTreeSet::new();
        for (a, fa) in folds.iter().enumerate() {
            for fb in &folds[a + 1..] {
                assert!(fa.test.iter().all(|i| !fb.test.contains(i)));
            }
            union.extend(fa.test.iter().copied());
            let train: BTreeSet<_> = fa.train.iter().copied().collect();
            assert!(fa.test.iter().all(|i| !train.contains(i)));
            assert_eq!(train.len() + fa.test.len(), 53);
        }
        assert_eq!(union, (0..53).collect());
        // ideal positives per fold is 17/5 = 3.4
        for f in &folds {
            let pos = f.test.iter().filter(|&&i| i < 17).count() as f64;
            assert!((pos - 3.4).abs() <= 1.0);
        }
    }

    #[test]
    fn single_class_cannot_stratify() {
        let c = corpus(10, 0);
        assert!(matches!(stratified_splits(&c, 5, 0), Err(Error::CannotStratify(_))));
    }

    #[test]
    fn holdout_keeps_both_classes() {
        let c = corpus(50, 10);
        let h = stratified_holdout(&c, 0.2, 3).unwrap();
        assert_eq!(h.test.len(), 10);
        assert_eq!(h.test.iter().filter(|&&i| i < 10).count(), 2);
    }
}
