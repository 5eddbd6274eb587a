//! Aggregated hold-out classification: model selection by hold-out, cross-validation
//! and majority-vote aggregation of hold-out winners, with the learners, problems and
//! experiment harness used to compare them.

pub mod bench;
pub mod data;
pub mod error;
pub mod learners;
pub mod risk;
pub mod seed;
pub mod selection;
pub mod splits;
pub mod synthetic;
pub mod theory;
pub mod types;

pub use error::{Error, Result};
pub use types::{Classifier, Dataset, IndexSet, Label, LearningRule, SharedClassifier, SharedRule};
