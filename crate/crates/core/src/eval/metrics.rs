//! Ranking, accuracy and multiplicative-error metrics.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Relative-error threshold of [`acc_at_20`].
pub const ACC_TOLERANCE: f64 = 0.2;

/// Floor applied to zero predictions inside [`alpr`].
pub const ALPR_EPS: f64 = 1e-6;

fn to_f64<S: Scalar>(v: &[S]) -> Vec<f64> {
    // + 0.0 folds -0.0 into 0.0 so total ordering agrees with ==
    v.iter().map(|x| x.as_f64() + 0.0).collect()
}

fn check_lengths(preds: usize, labels: usize) -> Result<()> {
    if preds != labels {
        return Err(Error::Usage(format!("{preds} predictions for {labels} labels")));
    }
    Ok(())
}

/// Concordance counts behind [`regression_auc`]: over pairs with different
/// labels, `concordant` are ordered like their labels, `tied` share a prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairCounts {
    pub concordant: u64,
    pub tied: u64,
    pub pairs: u64,
}

impl PairCounts {
    /// `(concordant + tied / 2) / pairs`, or `None` when every label is equal.
    pub fn auc(&self) -> Option<f64> {
        (self.pairs > 0).then(|| (2 * self.concordant + self.tied) as f64 / (2 * self.pairs) as f64)
    }
}

struct Fenwick(Vec<u64>);

impl Fenwick {
    fn add(&mut self, mut i: usize) {
        i += 1;
        while i < self.0.len() {
            self.0[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Count of inserted ranks `< i`.
    fn prefix(&self, mut i: usize) -> u64 {
        let mut s = 0;
        while i > 0 {
            s += self.0[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

fn dense_ranks(v: &[f64]) -> (Vec<usize>, usize) {
    let mut sorted: Vec<f64> = v.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let ranks = v
        .iter()
        .map(|x| sorted.binary_search_by(|s| s.total_cmp(x)).expect("present"))
        .collect();
    (ranks, sorted.len())
}

/// Pair counts in O(n log n): labels are swept in ascending groups and every
/// element is compared against all strictly smaller labels through a Fenwick
/// tree over prediction ranks.
pub fn pair_counts<S: Scalar>(preds: &[S], labels: &[S]) -> Result<PairCounts> {
    check_lengths(preds.len(), labels.len())?;
    let (p, y) = (to_f64(preds), to_f64(labels));
    if p.iter().chain(&y).any(|v| v.is_nan()) {
        return Err(Error::Usage("NaN in AUC input".into()));
    }
    let (rank, distinct) = dense_ranks(&p);
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]));
    let mut tree = Fenwick(vec![0; distinct + 1]);
    let (mut concordant, mut tied, mut seen, mut pairs) = (0u64, 0u64, 0u64, 0u64);
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end < order.len() && y[order[end]] == y[order[start]] {
            end += 1;
        }
        for &i in &order[start..end] {
            let below = tree.prefix(rank[i]);
            let at = tree.prefix(rank[i] + 1) - below;
            concordant += below;
            tied += at;
        }
        pairs += seen * (end - start) as u64;
        for &i in &order[start..end] {
            tree.add(rank[i]);
        }
        seen += (end - start) as u64;
        start = end;
    }
    Ok(PairCounts { concordant, tied, pairs })
}

/// Fraction of correctly ordered pairs; label ties excluded, prediction ties
/// count half. `None` when all labels are equal.
pub fn regression_auc<S: Scalar>(preds: &[S], labels: &[S]) -> Result<Option<f64>> {
    if preds.len() < 2 {
        return Err(Error::Usage("AUC needs at least two samples".into()));
    }
    Ok(pair_counts(preds, labels)?.auc())
}

/// Share of predictions within 20% relative error of a positive label.
pub fn acc_at_20<S: Scalar>(preds: &[S], labels: &[S]) -> Result<f64> {
    check_lengths(preds.len(), labels.len())?;
    if preds.is_empty() {
        return Err(Error::Usage("ACC of an empty set".into()));
    }
    let mut hits = 0usize;
    for (p, y) in preds.iter().zip(labels) {
        let (p, y) = (p.as_f64(), y.as_f64());
        if !(y > 0.0) {
            return Err(Error::Usage(format!("nonpositive label {y}")));
        }
        if (p - y).abs() / y.abs() <= ACC_TOLERANCE {
            hits += 1;
        }
    }
    Ok(hits as f64 / preds.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alpr {
    pub value: f64,
    /// Predictions raised from 0 to [`ALPR_EPS`].
    pub clamped: usize,
}

/// Mean absolute base-2 log ratio of prediction to label.
pub fn alpr<S: Scalar>(preds: &[S], labels: &[S]) -> Result<Alpr> {
    check_lengths(preds.len(), labels.len())?;
    if preds.is_empty() {
        return Err(Error::Usage("ALPR of an empty set".into()));
    }
    let mut total = 0.0;
    let mut clamped = 0;
    for (p, y) in preds.iter().zip(labels) {
        let (mut p, y) = (p.as_f64(), y.as_f64());
        if !(p >= 0.0) || !(y > 0.0) {
            return Err(Error::Usage(format!("ALPR needs pred >= 0 and label > 0, got {p}, {y}")));
        }
        if p == 0.0 {
            p = ALPR_EPS;
            clamped += 1;
        }
        total += (p / y).log2().abs();
    }
    Ok(Alpr {
        value: total / preds.len() as f64,
        clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_auc(p: &[f64], y: &[f64]) -> Option<f64> {
        let (mut num, mut den) = (0u64, 0u64);
        for i in 0..p.len() {
            for j in 0..p.len() {
                if y[i] < y[j] {
                    den += 2;
                    if p[i] < p[j] {
                        num += 2;
                    } else if p[i] == p[j] {
                        num += 1;
                    }
                }
            }
        }
        (den > 0).then(|| num as f64 / den as f64)
    }

    #[test]
    fn auc_examples() {
        assert_eq!(regression_auc(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), Some(1.0));
        assert_eq!(regression_auc(&[3.0, 2.0, 1.0], &[1.0, 2.0, 3.0]).unwrap(), Some(0.0));
        let a = regression_auc(&[0.1, 0.4, 0.35, 0.8], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(a, Some(5.0 / 6.0));
        assert_eq!(regression_auc(&[1.0, 2.0], &[4.0, 4.0]).unwrap(), None);
        assert_eq!(regression_auc(&[1.0, 1.0], &[1.0, 2.0]).unwrap(), Some(0.5));
        assert!(regression_auc(&[1.0], &[1.0]).is_err());
        assert!(regression_auc(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn auc_matches_pairwise_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let n = rng.random_range(2..=200);
            let levels = rng.random_range(1..20);
            let p: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 * 0.5).collect();
            assert_eq!(regression_auc(&p, &y).unwrap(), brute_auc(&p, &y));
        }
    }

    #[test]
    fn acc_examples() {
        assert!((acc_at_20(&[110.0, 95.0, 130.0], &[100.0; 3]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(acc_at_20(&[5.0, 7.0], &[5.0, 7.0]).unwrap(), 1.0);
        assert_eq!(acc_at_20(&[1.25], &[1.0]).unwrap(), 0.0);
        assert_eq!(acc_at_20(&[6.0, 4.0], &[5.0, 5.0]).unwrap(), 1.0);
        assert_eq!(acc_at_20(&[120.0], &[100.0]).unwrap(), 1.0);
        assert!(acc_at_20(&[1.0], &[0.0]).is_err());
    }

    #[test]
    fn alpr_examples() {
        assert_eq!(alpr(&[200.0, 50.0], &[100.0, 100.0]).unwrap().value, 1.0);
        assert_eq!(alpr(&[3.0], &[3.0]).unwrap().value, 0.0);
        let z = alpr(&[0.0, 1.0], &[1.0, 1.0]).unwrap();
        assert_eq!(z.clamped, 1);
        assert!((z.value - ALPR_EPS.log2().abs() / 2.0).abs() < 1e-12);
        assert!(alpr(&[-1.0], &[1.0]).is_err());
    }

    #[test]
    fn acc_and_alpr_match_direct_formulas() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p: Vec<f64> = (0..1000).map(|_| rng.random::<f64>() * 50.0).collect();
        let y: Vec<f64> = (0..1000).map(|_| rng.random::<f64>() * 50.0 + 0.1).collect();
        let acc = p.iter().zip(&y).filter(|(a, b)| ((*a - *b) / *b).abs() <= 0.2).count() as f64 / 1000.0;
        let al = p.iter().zip(&y).map(|(a, b)| (a / b).log2().abs()).sum::<f64>() / 1000.0;
        assert!((acc_at_20(&p, &y).unwrap() - acc).abs() <= 1e-12);
        assert!((alpr(&p, &y).unwrap().value - al).abs() <= 1e-12);
    }

    proptest! {
        #[test]
        fn negated_predictions_complement(p in prop::collection::hash_set(-1000i32..1000, 2..60), seed in 0u64..1000) {
            let p: Vec<f64> = p.into_iter().map(f64::from).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y: Vec<f64> = (0..p.len()).map(|_| rng.random_range(0..5) as f64).collect();
            let neg: Vec<f64> = p.iter().map(|v| -v).collect();
            if let (Some(a), Some(b)) = (regression_auc(&p, &y).unwrap(), regression_auc(&neg, &y).unwrap()) {
                prop_assert!((a + b - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn monotone_transform_invariance(p in prop::collection::vec(-5.0f64..5.0, 2..80), seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y: Vec<f64> = (0..p.len()).map(|_| rng.random_range(0..6) as f64).collect();
            let t: Vec<f64> = p.iter().map(|v| v.exp() * 3.0 + 1.0).collect();
            prop_assert_eq!(regression_auc(&p, &y).unwrap(), regression_auc(&t, &y).unwrap());
        }
    }
}
