//! 0-1 risk evaluation from integer error counts.

use crate::error::{Error, Result};
use crate::types::{Classifier, Dataset, IndexSet};

/// Number of rows of `subset` that `f` misclassifies.
pub fn error_count(f: &dyn Classifier, data: &Dataset, subset: &IndexSet) -> usize {
    subset
        .indices()
        .iter()
        .filter(|&&i| f.predict(data.row(i)) != data.label(i))
        .count()
}

/// Misclassification fraction of `f` over the rows of `subset`.
pub fn empirical_risk(f: &dyn Classifier, data: &Dataset, subset: &IndexSet) -> Result<f64> {
    if subset.is_empty() {
        return Err(Error::EmptyEvaluationSet);
    }
    if subset.universe() != data.len() {
        return Err(Error::InvalidIndexSet(format!(
            "index set over {} rows used with a dataset of {}",
            subset.universe(),
            data.len()
        )));
    }
    Ok(error_count(f, data, subset) as f64 / subset.len() as f64)
}

/// Misclassification fraction of `f` over every row of `test`.
pub fn test_risk(f: &dyn Classifier, test: &Dataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyEvaluationSet);
    }
    let errors = (0..test.len()).filter(|&i| f.predict(test.row(i)) != test.label(i)).count();
    Ok(errors as f64 / test.len() as f64)
}

/// `test_risk(f) - test_risk(bayes)`. Not clamped: sampling noise can make
/// it slightly negative.
pub fn excess_risk_estimate(
    f: &dyn Classifier,
    bayes: &dyn Classifier,
    test: &Dataset,
) -> Result<f64> {
    Ok(test_risk(f, test)? - test_risk(bayes, test)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{ConstantClassifier, Label};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn data(labels: &[u32]) -> Dataset {
        let rows = (0..labels.len()).map(|i| vec![i as f64]).collect();
        Dataset::new(rows, labels.iter().map(|&l| Label(l)).collect(), 2).unwrap()
    }

    struct Lookup(Vec<Label>);
    impl Classifier for Lookup {
        fn predict(&self, x: &[f64]) -> Label {
            self.0[x[0] as usize]
        }
    }

    #[test]
    fn perfect_classifier_has_zero_risk() {
        let d = data(&[0, 1, 1, 0]);
        let f = Lookup(d.labels().to_vec());
        assert_eq!(empirical_risk(&f, &d, &IndexSet::all(4).unwrap()).unwrap(), 0.0);
        assert_eq!(test_risk(&f, &d).unwrap(), 0.0);
        assert_eq!(excess_risk_estimate(&f, &f, &d).unwrap(), 0.0);
    }

    #[test]
    fn constant_zero_on_011_is_two_thirds() {
        let d = data(&[0, 1, 1, 1]);
        let b = IndexSet::new(vec![0, 1, 2], 4).unwrap();
        let r = empirical_risk(&ConstantClassifier(Label(0)), &d, &b).unwrap();
        assert_eq!(r, 2.0 / 3.0);
    }

    #[test]
    fn single_wrong_row_is_one() {
        let d = data(&[1]);
        assert_eq!(test_risk(&ConstantClassifier(Label(0)), &d).unwrap(), 1.0);
    }

    #[test]
    fn index_set_from_another_sample_is_rejected() {
        let d = data(&[0, 1]);
        let b = IndexSet::all(3).unwrap();
        assert!(empirical_risk(&ConstantClassifier(Label(0)), &d, &b).is_err());
    }

    #[test]
    fn random_classifier_matches_recount() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let labels: Vec<u32> = (0..10).map(|_| rng.gen_range(0..2)).collect();
        let d = data(&labels);
        let f = Lookup((0..10).map(|_| Label(rng.gen_range(0..2))).collect());
        let mut wrong = 0;
        for i in 0..10 {
            if f.0[i].0 != labels[i] {
                wrong += 1;
            }
        }
        let r = empirical_risk(&f, &d, &IndexSet::all(10).unwrap()).unwrap();
        assert_eq!(r, wrong as f64 / 10.0);
    }

    #[test]
    fn excess_is_positive_when_worse_everywhere_it_differs() {
        let d = data(&[0, 1, 1, 0, 1]);
        let bayes = Lookup(d.labels().to_vec());
        let mut flipped = d.labels().to_vec();
        flipped[1] = Label(0);
        let f = Lookup(flipped);
        assert!(excess_risk_estimate(&f, &bayes, &d).unwrap() > 0.0);
    }

    proptest! {
        #[test]
        fn risk_is_additive_over_disjoint_parts(
            labels in prop::collection::vec(0u32..2, 2..40),
            preds_seed in any::<u64>(),
            cut_seed in any::<u64>(),
        ) {
            let n = labels.len();
            let d = data(&labels);
            let mut rng = ChaCha8Rng::seed_from_u64(preds_seed);
            let f = Lookup((0..n).map(|_| Label(rng.gen_range(0..2))).collect());
            let mut rng = ChaCha8Rng::seed_from_u64(cut_seed);
            let (mut a, mut b) = (Vec::new(), Vec::new());
            for i in 0..n {
                if rng.gen_bool(0.5) { a.push(i) } else { b.push(i) }
            }
            prop_assume!(!a.is_empty() && !b.is_empty());
            let (na, nb) = (a.len() as f64, b.len() as f64);
            let ra = empirical_risk(&f, &d, &IndexSet::new(a, n).unwrap()).unwrap();
            let rb = empirical_risk(&f, &d, &IndexSet::new(b, n).unwrap()).unwrap();
            let all = IndexSet::all(n).unwrap();
            let whole = error_count(&f, &d, &all);
            // exact on counts
            prop_assert_eq!((ra * na).round() as usize + (rb * nb).round() as usize, whole);
            let r = empirical_risk(&f, &d, &all).unwrap();
            prop_assert!((r - (na * ra + nb * rb) / (na + nb)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&r));
            prop_assert_eq!(r == 0.0, (0..n).all(|i| f.0[i] == d.label(i)));
        }

        #[test]
        fn predictions_are_repeatable(x in prop::collection::vec(-5.0f64..5.0, 1..4)) {
            let f = |v: &[f64]| Label((v.iter().sum::<f64>() > 0.0) as u32);
            let first = f.predict(&x);
            for _ in 0..5 {
                prop_assert_eq!(f.predict(&x), first);
            }
        }
    }
}
