//! Training-set collections for hold-out, cross-validation and Agghoo.
//!
//! A [`SplitPlan`] is generated from the sample size and a seed only, never
//! from data values, so the training sets are independent of the sample.
//! Set `j` of a Monte-Carlo plan is drawn from its own ChaCha stream `j`:
//! the first set of a `V = 10` plan is the same set as the only set of a
//! `V = 1` plan with the same `(n, tau, seed)`.

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::types::IndexSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "kebab-case")]
pub enum SplitScheme {
    /// `V` independent uniform subsets of size `floor(tau * n)`.
    MonteCarlo { tau: f64, v: usize },
    /// Training sets are complements of the `V` folds of a random partition.
    VFold { v: usize },
}

impl SplitScheme {
    pub fn v(&self) -> usize {
        match *self {
            SplitScheme::MonteCarlo { v, .. } | SplitScheme::VFold { v } => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub n: usize,
    #[serde(flatten)]
    pub scheme: SplitScheme,
    pub seed: u64,
    /// False when training sets differ in size (V-fold with `V` not dividing `n`).
    pub strict: bool,
    pub sets: Vec<IndexSet>,
}

impl SplitPlan {
    pub fn v(&self) -> usize {
        self.sets.len()
    }

    /// Common training-set size `n - p`, or `None` for a non-strict plan.
    pub fn train_size(&self) -> Option<usize> {
        self.strict.then(|| self.sets[0].len())
    }

    /// Validation-set size `p` when it is common to all sets.
    pub fn p(&self) -> Option<usize> {
        self.train_size().map(|t| self.n - t)
    }

    /// First `v` sets as a plan of their own.
    pub fn truncated(&self, v: usize) -> SplitPlan {
        let v = v.clamp(1, self.sets.len());
        let sets: Vec<IndexSet> = self.sets[..v].to_vec();
        let strict = sets.iter().all(|s| s.len() == sets[0].len());
        let scheme = match self.scheme {
            SplitScheme::MonteCarlo { tau, .. } => SplitScheme::MonteCarlo { tau, v },
            SplitScheme::VFold { v: folds } => SplitScheme::VFold { v: folds },
        };
        SplitPlan { n: self.n, scheme, seed: self.seed, strict, sets }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// `floor(tau * n)`, tolerant to the representation error of decimal `tau`
/// (0.29 * 100 evaluates to 28.999999999999996).
pub fn mc_train_size(n: usize, tau: f64) -> usize {
    (tau * n as f64 + 1e-9).floor() as usize
}

pub fn monte_carlo_splits(n: usize, tau: f64, v: usize, seed: u64) -> Result<SplitPlan> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidParameter(format!("tau = {tau} outside (0, 1)")));
    }
    if v == 0 {
        return Err(Error::InvalidParameter("V must be at least 1".into()));
    }
    let size = mc_train_size(n, tau);
    if size == 0 || size >= n {
        return Err(Error::DegenerateSplit { n, train_size: size });
    }
    let sets = (0..v)
        .map(|j| {
            let mut rng = seed::stream_rng(seed, j as u64);
            IndexSet::new(index::sample(&mut rng, n, size).into_vec(), n)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SplitPlan { n, scheme: SplitScheme::MonteCarlo { tau, v }, seed, strict: true, sets })
}

pub fn vfold_splits(n: usize, v: usize, seed: u64) -> Result<SplitPlan> {
    if v < 2 {
        return Err(Error::InvalidParameter("V-fold needs V >= 2".into()));
    }
    if v > n {
        return Err(Error::InvalidParameter(format!("V = {v} exceeds n = {n}")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seed::stream_rng(seed, u64::MAX));
    let (base, extra) = (n / v, n % v);
    let mut sets = Vec::with_capacity(v);
    let mut start = 0;
    for j in 0..v {
        let len = base + usize::from(j < extra);
        let fold = &perm[start..start + len];
        start += len;
        let train: Vec<usize> = perm.iter().copied().filter(|i| !fold.contains(i)).collect();
        sets.push(IndexSet::new(train, n)?);
    }
    Ok(SplitPlan { n, scheme: SplitScheme::VFold { v }, seed, strict: n.is_multiple_of(v), sets })
}

/// Builds the plan described by `scheme`.
pub fn make_plan(n: usize, scheme: SplitScheme, seed: u64) -> Result<SplitPlan> {
    match scheme {
        SplitScheme::MonteCarlo { tau, v } => monte_carlo_splits(n, tau, v, seed),
        SplitScheme::VFold { v } => vfold_splits(n, v, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mc_cardinality_and_determinism() {
        let p = monte_carlo_splits(10, 0.5, 3, 4).unwrap();
        assert_eq!(p.sets.len(), 3);
        assert!(p.sets.iter().all(|s| s.len() == 5));
        assert_eq!(p, monte_carlo_splits(10, 0.5, 3, 4).unwrap());
        assert_eq!(p.train_size(), Some(5));
    }

    #[test]
    fn mc_full_scale_protocol() {
        let p = monte_carlo_splits(500, 0.8, 10, 1).unwrap();
        assert_eq!(p.sets.len(), 10);
        assert!(p.sets.iter().all(|s| s.len() == 400));
        assert_eq!(p.p(), Some(100));
    }

    #[test]
    fn mc_prefix_property() {
        let ten = monte_carlo_splits(50, 0.7, 10, 99).unwrap();
        let one = monte_carlo_splits(50, 0.7, 1, 99).unwrap();
        assert_eq!(ten.sets[0], one.sets[0]);
        assert_eq!(ten.truncated(1), one);
    }

    #[test]
    fn mc_degenerate_is_rejected() {
        assert!(matches!(monte_carlo_splits(10, 0.05, 2, 0), Err(Error::DegenerateSplit { .. })));
        assert!(matches!(monte_carlo_splits(1, 0.9, 2, 0), Err(Error::DegenerateSplit { .. })));
        assert!(monte_carlo_splits(10, 1.0, 2, 0).is_err());
        assert!(monte_carlo_splits(10, 0.5, 0, 0).is_err());
    }

    #[test]
    fn decimal_tau_floors_as_intended() {
        assert_eq!(mc_train_size(100, 0.29), 29);
        assert_eq!(mc_train_size(500, 0.7), 350);
        assert_eq!(mc_train_size(7, 0.5), 3);
    }

    #[test]
    fn vfold_divisible() {
        let p = vfold_splits(10, 5, 3).unwrap();
        assert!(p.strict);
        assert!(p.sets.iter().all(|s| s.len() == 8));
        let mut seen = [0; 10];
        for s in &p.sets {
            for i in s.complement().unwrap().indices() {
                seen[*i] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn vfold_non_divisible_is_flagged() {
        let p = vfold_splits(10, 3, 3).unwrap();
        assert!(!p.strict);
        assert_eq!(p.train_size(), None);
        let mut sizes: Vec<usize> = p.sets.iter().map(IndexSet::len).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![6, 7, 7]);
    }

    #[test]
    fn vfold_ten_on_five_hundred() {
        let p = vfold_splits(500, 10, 0).unwrap();
        assert_eq!(p.train_size(), Some(450));
        assert_eq!(p.p(), Some(50));
    }

    #[test]
    fn vfold_errors() {
        assert!(vfold_splits(3, 4, 0).is_err());
        assert!(vfold_splits(3, 1, 0).is_err());
    }

    #[test]
    fn json_round_trip() {
        let p = vfold_splits(12, 4, 8).unwrap();
        let s = p.to_json().unwrap();
        assert!(s.contains("\"scheme\":\"v-fold\""));
        assert_eq!(SplitPlan::from_json(&s).unwrap(), p);
        let q = monte_carlo_splits(12, 0.5, 2, 8).unwrap();
        assert_eq!(SplitPlan::from_json(&q.to_json().unwrap()).unwrap(), q);
    }

    #[test]
    fn mc_inclusion_frequency_is_tau() {
        // each index lands in T_1 with probability tau; 4-sigma band over 10^4 plans
        let (n, tau, draws) = (20, 0.3, 10_000);
        let mut hits = vec![0usize; n];
        for s in 0..draws {
            for &i in monte_carlo_splits(n, tau, 1, s).unwrap().sets[0].indices() {
                hits[i] += 1;
            }
        }
        let p = mc_train_size(n, tau) as f64 / n as f64;
        let sd = (p * (1.0 - p) / draws as f64).sqrt();
        for h in hits {
            let freq = h as f64 / draws as f64;
            assert!((freq - p).abs() < 4.0 * sd, "freq {freq} vs {p}");
        }
    }
}
