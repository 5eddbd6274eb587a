use std::sync::Arc;

use crate::error::{Error, Result};
use crate::types::{Classifier, Dataset, Label, LearningRule, SharedClassifier};

/// k-nearest-neighbors rule with Euclidean distance, `k` odd.
#[derive(Debug, Clone)]
pub struct KnnRule {
    k: usize,
    id: String,
}

impl KnnRule {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 || k.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!("k = {k} must be odd and positive")));
        }
        Ok(Self { k, id: format!("knn-k{k:04}") })
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

impl LearningRule for KnnRule {
    fn id(&self) -> &str {
        &self.id
    }

    fn train(&self, data: &Dataset) -> Result<SharedClassifier> {
        Ok(Arc::new(knn_train(self.k, data)?))
    }
}

pub fn knn_train(k: usize, data: &Dataset) -> Result<KnnClassifier> {
    if k == 0 || k.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!("k = {k} must be odd and positive")));
    }
    if k > data.len() {
        return Err(Error::InvalidParameter(format!("k = {k} exceeds n = {}", data.len())));
    }
    Ok(KnnClassifier { k, data: data.clone() })
}

/// `{1, 3, ..., k_max}` (odd values only).
pub fn knn_family(k_max: usize) -> Vec<crate::types::SharedRule> {
    (1..=k_max)
        .step_by(2)
        .map(|k| Arc::new(KnnRule::new(k).expect("odd k")) as crate::types::SharedRule)
        .collect()
}

#[derive(Debug, Clone)]
pub struct KnnClassifier {
    k: usize,
    data: Dataset,
}

impl KnnClassifier {
    /// Row indices of the `k` nearest training points, nearest first.
    /// Equal distances are ordered by row index.
    pub fn neighbors(&self, x: &[f64]) -> Vec<usize> {
        let mut d: Vec<(f64, usize)> = self
            .data
            .rows()
            .enumerate()
            .map(|(i, r)| (sq_dist(r, x), i))
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < d.len() {
            d.select_nth_unstable_by(self.k - 1, cmp);
            d.truncate(self.k);
        }
        d.sort_unstable_by(cmp);
        d.into_iter().map(|(_, i)| i).collect()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

impl Classifier for KnnClassifier {
    fn predict(&self, x: &[f64]) -> Label {
        let mut counts = vec![0usize; self.data.class_count()];
        for i in self.neighbors(x) {
            counts[self.data.label(i).index()] += 1;
        }
        let mut best = 0;
        for (y, &c) in counts.iter().enumerate() {
            if c > counts[best] {
                best = y;
            }
        }
        Label::from(best)
    }
}
