//! Samples, index sets, classifiers and learning rules.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Class label in `0..M`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Label(pub u32);

impl Label {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for Label {
    fn from(v: usize) -> Self {
        Label(v as u32)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Labelled sample with a declared class count.
///
/// Features are stored row-major in one buffer. The class count is part of
/// the dataset rather than inferred, so a subsample that happens to miss a
/// class still votes over the same label set.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<Label>,
    dim: usize,
    class_count: usize,
}

impl Dataset {
    pub fn new(rows: Vec<Vec<f64>>, labels: Vec<Label>, class_count: usize) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidDataset(
                "feature vectors have different dimensions".into(),
            ));
        }
        let features = rows.into_iter().flatten().collect();
        Self::from_flat(features, dim, labels, class_count)
    }

    pub fn from_flat(
        features: Vec<f64>,
        dim: usize,
        labels: Vec<Label>,
        class_count: usize,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidDataset("dataset has no rows".into()));
        }
        if dim == 0 {
            return Err(Error::InvalidDataset("feature dimension is zero".into()));
        }
        if features.len() != dim * labels.len() {
            return Err(Error::InvalidDataset(format!(
                "{} feature values for {} rows of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        if class_count < 2 {
            return Err(Error::InvalidDataset("class count must be at least 2".into()));
        }
        if let Some(bad) = labels.iter().find(|l| l.index() >= class_count) {
            return Err(Error::InvalidDataset(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        Ok(Self { features, labels, dim, class_count })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    /// Always false: a dataset holds at least one row.
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn class_count(&self) -> usize {
        self.class_count
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn label(&self, i: usize) -> Label {
        self.labels[i]
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.features.chunks_exact(self.dim)
    }

    /// Rows of `subset`, in index order. `D_n^B` in the usual notation.
    pub fn subset(&self, subset: &IndexSet) -> Dataset {
        assert_eq!(subset.universe(), self.len(), "index set built for another sample size");
        self.select(subset.indices())
    }

    /// Rows at `indices` in the given order (duplicates allowed).
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset { features, labels, dim: self.dim, class_count: self.class_count }
    }

    /// SHA-256 over dimensions, class count, feature bits and labels.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        h.update((self.class_count as u64).to_le_bytes());
        for v in &self.features {
            h.update(v.to_bits().to_le_bytes());
        }
        for l in &self.labels {
            h.update(l.0.to_le_bytes());
        }
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Non-empty sorted set of row indices in `0..n`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IndexSet {
    indices: Vec<usize>,
    universe: usize,
}

impl IndexSet {
    /// Sorts and validates `indices` against the universe `0..n`.
    pub fn new(mut indices: Vec<usize>, n: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidIndexSet("index set is empty".into()));
        }
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidIndexSet("duplicate index".into()));
        }
        if indices[indices.len() - 1] >= n {
            return Err(Error::InvalidIndexSet(format!("index out of range for n = {n}")));
        }
        Ok(Self { indices, universe: n })
    }

    pub fn all(n: usize) -> Result<Self> {
        Self::new((0..n).collect(), n)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Size `n` of the sample the set indexes into.
    pub fn universe(&self) -> usize {
        self.universe
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    /// Complement in `0..n`; `None` when the set covers every row.
    pub fn complement(&self) -> Option<IndexSet> {
        let mut out = Vec::with_capacity(self.universe - self.indices.len());
        let mut it = self.indices.iter().peekable();
        for i in 0..self.universe {
            if it.peek() == Some(&&i) {
                it.next();
            } else {
                out.push(i);
            }
        }
        (!out.is_empty()).then_some(IndexSet { indices: out, universe: self.universe })
    }

    /// Maps positions within this set back to indices of the full sample.
    pub fn compose(&self, inner: &IndexSet) -> IndexSet {
        assert_eq!(inner.universe, self.len());
        IndexSet {
            indices: inner.indices.iter().map(|&k| self.indices[k]).collect(),
            universe: self.universe,
        }
    }
}

/// Trained predictor `x -> label`. Immutable once built.
pub trait Classifier: Send + Sync {
    fn predict(&self, x: &[f64]) -> Label;
}

pub type SharedClassifier = Arc<dyn Classifier>;

impl<F> Classifier for F
where
    F: Fn(&[f64]) -> Label + Send + Sync,
{
    fn predict(&self, x: &[f64]) -> Label {
        self(x)
    }
}

/// Classifier predicting the same label everywhere.
#[derive(Debug, Clone, Copy)]
pub struct ConstantClassifier(pub Label);

impl Classifier for ConstantClassifier {
    fn predict(&self, _x: &[f64]) -> Label {
        self.0
    }
}

/// A map from samples to classifiers.
///
/// The id orders rules for every argmin tie-break downstream, so ids should
/// sort in the order a user wants ties resolved. `train` must be a pure
/// function of the dataset.
pub trait LearningRule: Send + Sync {
    fn id(&self) -> &str;
    fn train(&self, data: &Dataset) -> Result<SharedClassifier>;
}

pub type SharedRule = Arc<dyn LearningRule>;

/// Rule that ignores its input and returns a fixed label.
#[derive(Debug, Clone)]
pub struct ConstantRule {
    id: String,
    label: Label,
}

impl ConstantRule {
    pub fn new(label: Label) -> Self {
        Self { id: format!("const-{:03}", label.0), label }
    }
}

impl LearningRule for ConstantRule {
    fn id(&self) -> &str {
        &self.id
    }

    fn train(&self, _data: &Dataset) -> Result<SharedClassifier> {
        Ok(Arc::new(ConstantClassifier(self.label)))
    }
}

/// Rule that always returns the same pre-built classifier.
#[derive(Clone)]
pub struct FixedRule {
    id: String,
    classifier: SharedClassifier,
}

impl FixedRule {
    pub fn new(id: impl Into<String>, classifier: SharedClassifier) -> Self {
        Self { id: id.into(), classifier }
    }
}

impl LearningRule for FixedRule {
    fn id(&self) -> &str {
        &self.id
    }

    fn train(&self, _data: &Dataset) -> Result<SharedClassifier> {
        Ok(Arc::clone(&self.classifier))
    }
}
