//! Exact checks of the majority-vote risk bounds on finite problems, and a
//! Monte-Carlo checker for the Agghoo oracle inequality.
//!
//! For voters `f_1..f_V` and their majority vote `mv` on a problem with `M`
//! classes:
//!
//! ```text
//! excess(mv) <= (M / V) * sum_i excess(f_i)
//! risk(mv)   <= (2 / V) * sum_i risk(f_i)
//! ```
//!
//! Finite problems carry rational weights and conditional probabilities, so
//! both sides are evaluated without rounding.

use std::sync::Arc;

use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::seed;
use crate::selection::majority_vote;
use crate::types::{Classifier, Label, SharedClassifier};

pub type Q = Ratio<i128>;

/// Distribution on a finite feature space `{0, .., m-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteProblem {
    /// Probability of each point; sums to 1.
    pub weights: Vec<Q>,
    /// `eta[x][y] = P(Y = y | X = x)`; each row sums to 1.
    pub eta: Vec<Vec<Q>>,
}

impl FiniteProblem {
    pub fn new(weights: Vec<Q>, eta: Vec<Vec<Q>>) -> Result<Self> {
        let one = Q::from_integer(1);
        if weights.is_empty() || weights.len() != eta.len() {
            return Err(Error::InvalidParameter("weights and eta rows must match and be non-empty".into()));
        }
        if weights.iter().any(|w| *w < Q::zero()) || weights.iter().sum::<Q>() != one {
            return Err(Error::InvalidParameter("weights must be non-negative and sum to 1".into()));
        }
        let m = eta[0].len();
        if m < 2 {
            return Err(Error::InvalidParameter("need at least two classes".into()));
        }
        for row in &eta {
            if row.len() != m || row.iter().any(|p| *p < Q::zero()) || row.iter().sum::<Q>() != one {
                return Err(Error::InvalidParameter("each eta row must be a distribution over M classes".into()));
            }
        }
        Ok(Self { weights, eta })
    }

    /// Builds a problem from integer masses, normalizing each part.
    pub fn from_counts(weights: &[u32], eta: &[Vec<u32>]) -> Result<Self> {
        let norm = |v: &[u32]| -> Result<Vec<Q>> {
            let s: i128 = v.iter().map(|&c| c as i128).sum();
            if s == 0 {
                return Err(Error::InvalidParameter("all-zero mass".into()));
            }
            Ok(v.iter().map(|&c| Q::new(c as i128, s)).collect())
        };
        Self::new(norm(weights)?, eta.iter().map(|r| norm(r)).collect::<Result<_>>()?)
    }

    pub fn support_size(&self) -> usize {
        self.weights.len()
    }

    pub fn class_count(&self) -> usize {
        self.eta[0].len()
    }

    /// Pointwise argmax of `eta`, ties to the smallest label.
    pub fn bayes(&self) -> Vec<Label> {
        self.eta
            .iter()
            .map(|row| {
                let mut best = 0;
                for (y, p) in row.iter().enumerate() {
                    if *p > row[best] {
                        best = y;
                    }
                }
                Label::from(best)
            })
            .collect()
    }
}

/// A classifier on the finite support, as a label per point.
pub type FiniteClassifier = Vec<Label>;

/// Exposes a finite classifier through the `Classifier` trait; the feature
/// vector is `[point index]`.
#[derive(Debug, Clone)]
pub struct TableClassifier(pub FiniteClassifier);

impl Classifier for TableClassifier {
    fn predict(&self, x: &[f64]) -> Label {
        self.0[x[0] as usize]
    }
}

/// `R(f) = E[1 - eta_{f(X)}(X)]`.
pub fn exact_risk(f: &[Label], problem: &FiniteProblem) -> Q {
    assert_eq!(f.len(), problem.support_size());
    problem
        .weights
        .iter()
        .zip(&problem.eta)
        .zip(f)
        .map(|((w, row), y)| *w * (Q::from_integer(1) - row[y.index()]))
        .sum()
}

/// `R(f) - R(f*)`.
pub fn exact_excess(f: &[Label], problem: &FiniteProblem) -> Q {
    exact_risk(f, problem) - exact_risk(&problem.bayes(), problem)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MajorityBoundCheck {
    pub lhs_excess: f64,
    pub rhs_excess: f64,
    pub lhs_risk: f64,
    pub rhs_risk: f64,
    pub both_hold: bool,
}

/// Evaluates both majority-vote bounds exactly. A `false` verdict means the
/// vote or the risk evaluation is wrong.
pub fn check_majority_bounds(problem: &FiniteProblem, voters: &[FiniteClassifier]) -> Result<MajorityBoundCheck> {
    if voters.is_empty() {
        return Err(Error::EmptyPlan);
    }
    let m = problem.class_count();
    let members: Vec<SharedClassifier> =
        voters.iter().map(|v| Arc::new(TableClassifier(v.clone())) as SharedClassifier).collect();
    let mv: FiniteClassifier = (0..problem.support_size())
        .map(|x| majority_vote(&members, m, &[x as f64]))
        .collect::<Result<_>>()?;
    let v = Q::from_integer(voters.len() as i128);
    let lhs_excess = exact_excess(&mv, problem);
    let rhs_excess = Q::from_integer(m as i128) / v * voters.iter().map(|f| exact_excess(f, problem)).sum::<Q>();
    let lhs_risk = exact_risk(&mv, problem);
    let rhs_risk = Q::from_integer(2) / v * voters.iter().map(|f| exact_risk(f, problem)).sum::<Q>();
    Ok(MajorityBoundCheck {
        lhs_excess: to_f64(&lhs_excess),
        rhs_excess: to_f64(&rhs_excess),
        lhs_risk: to_f64(&lhs_risk),
        rhs_risk: to_f64(&rhs_risk),
        both_hold: lhs_excess <= rhs_excess && lhs_risk <= rhs_risk,
    })
}

fn to_f64(q: &Q) -> f64 {
    q.to_f64().unwrap_or(f64::NAN)
}

/// Random problem with `m <= max_m` points and `2 <= M <= max_classes`
/// classes, and `1 <= V <= max_v` random voters. Masses are small integers,
/// so conditional-probability ties are frequent.
pub fn random_instance(
    rng: &mut impl Rng,
    max_m: usize,
    max_classes: usize,
    max_v: usize,
) -> (FiniteProblem, Vec<FiniteClassifier>) {
    let m = rng.gen_range(1..=max_m);
    let classes = rng.gen_range(2..=max_classes);
    let v = rng.gen_range(1..=max_v);
    let weights: Vec<u32> = (0..m).map(|_| rng.gen_range(1..=12)).collect();
    let eta: Vec<Vec<u32>> = (0..m)
        .map(|_| loop {
            let row: Vec<u32> = (0..classes).map(|_| rng.gen_range(0..=6)).collect();
            if row.iter().any(|&c| c > 0) {
                break row;
            }
        })
        .collect();
    let problem = FiniteProblem::from_counts(&weights, &eta).expect("positive masses");
    let voters = (0..v)
        .map(|_| (0..m).map(|_| Label::from(rng.gen_range(0..classes))).collect())
        .collect();
    (problem, voters)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub instances: usize,
    pub violations: usize,
    pub seed: u64,
    pub all_hold: bool,
}

/// Checks the majority-vote bounds on `instances` random instances
/// (`m <= 6`, `M <= 4`, `V <= 7`). Instance `i` is drawn from stream `i`.
pub fn majority_bound_sweep(instances: usize, seed: u64) -> SweepReport {
    let violations = (0..instances)
        .into_par_iter()
        .filter(|&i| {
            let mut rng = seed::stream_rng(seed, i as u64);
            let (p, voters) = random_instance(&mut rng, 6, 4, 7);
            !check_majority_bounds(&p, &voters).expect("voters are non-empty").both_hold
        })
        .count();
    SweepReport { instances, violations, seed, all_hold: violations == 0 }
}

/// Every classifier on the support, `M^m` of them.
pub fn all_classifiers(m: usize, classes: usize) -> Vec<FiniteClassifier> {
    let total = classes.pow(m as u32);
    (0..total)
        .map(|mut code| {
            (0..m)
                .map(|_| {
                    let y = code % classes;
                    code /= classes;
                    Label::from(y)
                })
                .collect()
        })
        .collect()
}

/// Whether `R(f*)` is minimal over all `M^m` classifiers. Requires
/// `m * log2(M) <= 16`.
pub fn bayes_is_minimal(problem: &FiniteProblem) -> Result<bool> {
    let (m, classes) = (problem.support_size(), problem.class_count());
    if m as f64 * (classes as f64).log2() > 16.0 {
        return Err(Error::InvalidParameter("support too large to enumerate".into()));
    }
    let best = exact_risk(&problem.bayes(), problem);
    Ok(all_classifiers(m, classes).iter().all(|f| exact_risk(f, problem) >= best))
}

#[derive(Debug, Clone, Serialize)]
pub struct MinimalitySweep {
    pub instances: usize,
    pub failures: usize,
    pub all_hold: bool,
}

pub fn bayes_minimality_sweep(instances: usize, seed: u64) -> MinimalitySweep {
    let base = seed::derive(seed, &[seed::tag("minimality")]);
    let failures = (0..instances)
        .into_par_iter()
        .filter(|&i| {
            let mut rng = seed::stream_rng(base, i as u64);
            let (p, _) = random_instance(&mut rng, 6, 4, 1);
            !bayes_is_minimal(&p).expect("m <= 6, M <= 4 is enumerable")
        })
        .count();
    MinimalitySweep { instances, failures, all_hold: failures == 0 }
}

/// Margin and family parameters of the oracle inequality. `beta` and `c`
/// describe the distribution and are supplied, never estimated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleBoundParams {
    pub family_size: usize,
    /// Validation-set size.
    pub p: usize,
    pub beta: f64,
    pub c: f64,
}

impl OracleBoundParams {
    pub fn validate(&self) -> Result<()> {
        if self.family_size == 0 {
            return Err(Error::EmptyFamily);
        }
        if self.p == 0 {
            return Err(Error::InvalidParameter("p must be positive".into()));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidParameter("beta must be finite and >= 0".into()));
        }
        if !(self.c >= 1.0 && self.c.is_finite()) {
            return Err(Error::InvalidParameter("c must be finite and >= 1".into()));
        }
        Ok(())
    }

    /// `29 c^(1/(beta+2)) ln(e |G|) / p^((beta+1)/(beta+2))`.
    pub fn remainder(&self) -> f64 {
        let b = self.beta;
        29.0 * self.c.powf(1.0 / (b + 2.0)) * (1.0 + (self.family_size as f64).ln())
            / (self.p as f64).powf((b + 1.0) / (b + 2.0))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleBoundReport {
    pub params: OracleBoundParams,
    pub replicates: usize,
    /// Mean Agghoo excess risk.
    pub lhs: f64,
    pub lhs_se: f64,
    /// Mean of `inf_G excess(G trained on T_1)`.
    pub oracle: f64,
    pub oracle_se: f64,
    pub remainder: f64,
    /// `3 * oracle + remainder`.
    pub rhs: f64,
    pub combined_se: f64,
    /// `lhs <= rhs + 4 * combined_se`.
    pub holds: bool,
}

pub(crate) fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Monte-Carlo check of
/// `E excess(agghoo) <= 3 E[inf_G excess(G(D^{T_1}))] + remainder`.
/// Advisory at small replicate counts.
pub fn check_oracle_bound(
    agghoo_excess: &[f64],
    oracle_excess: &[f64],
    params: OracleBoundParams,
) -> Result<OracleBoundReport> {
    params.validate()?;
    if agghoo_excess.is_empty() || agghoo_excess.len() != oracle_excess.len() {
        return Err(Error::InvalidParameter(
            "need one Agghoo and one oracle excess risk per replicate".into(),
        ));
    }
    let (lhs, lhs_se) = mean_se(agghoo_excess);
    let (oracle, oracle_se) = mean_se(oracle_excess);
    let remainder = params.remainder();
    let rhs = 3.0 * oracle + remainder;
    let combined_se = (lhs_se.powi(2) + 9.0 * oracle_se.powi(2)).sqrt();
    Ok(OracleBoundReport {
        params,
        replicates: agghoo_excess.len(),
        lhs,
        lhs_se,
        oracle,
        oracle_se,
        remainder,
        rhs,
        combined_se,
        holds: lhs <= rhs + 4.0 * combined_se,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn q(a: i128, b: i128) -> Q {
        Q::new(a, b)
    }

    fn toy() -> FiniteProblem {
        FiniteProblem::new(
            vec![q(1, 2), q(1, 4), q(1, 4)],
            vec![
                vec![q(7, 10), q(3, 10)],
                vec![q(1, 5), q(4, 5)],
                vec![q(1, 2), q(1, 2)],
            ],
        )
        .unwrap()
    }

    #[test]
    fn validation() {
        assert!(FiniteProblem::new(vec![q(1, 2)], vec![vec![q(1, 2), q(1, 2)]]).is_err());
        assert!(FiniteProblem::new(vec![q(1, 1)], vec![vec![q(1, 1)]]).is_err());
        assert!(FiniteProblem::new(vec![q(1, 1)], vec![vec![q(1, 2), q(1, 3)]]).is_err());
    }

    #[test]
    fn bayes_has_zero_excess_and_ties_go_low() {
        let p = toy();
        assert_eq!(p.bayes(), vec![Label(0), Label(1), Label(0)]);
        assert_eq!(exact_excess(&p.bayes(), &p), Q::zero());
        // R(f*) = 1/2 * 3/10 + 1/4 * 1/5 + 1/4 * 1/2
        assert_eq!(exact_risk(&p.bayes(), &p), q(3, 20) + q(1, 20) + q(1, 8));
    }

    #[test]
    fn flipping_one_point_costs_weight_times_gap() {
        let p = toy();
        let mut f = p.bayes();
        f[0] = Label(1);
        assert_eq!(exact_excess(&f, &p), q(1, 2) * (q(7, 10) - q(3, 10)));
    }

    #[test]
    fn risk_matches_plain_float_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let weights: Vec<u32> = (0..4).map(|_| rng.gen_range(1..10)).collect();
        let eta: Vec<Vec<u32>> = (0..4).map(|_| (0..3).map(|_| rng.gen_range(1..10)).collect()).collect();
        let p = FiniteProblem::from_counts(&weights, &eta).unwrap();
        let f: Vec<Label> = (0..4).map(|_| Label(rng.gen_range(0..3))).collect();
        let wsum: u32 = weights.iter().sum();
        let mut expected = 0.0;
        for x in 0..4 {
            let rs: u32 = eta[x].iter().sum();
            expected += weights[x] as f64 / wsum as f64 * (1.0 - eta[x][f[x].index()] as f64 / rs as f64);
        }
        assert!((to_f64(&exact_risk(&f, &p)) - expected).abs() < 1e-12);
    }

    #[test]
    fn bounds_for_bayes_voters_and_single_voter() {
        let p = toy();
        let r = check_majority_bounds(&p, &vec![p.bayes(); 3]).unwrap();
        assert_eq!(r.lhs_excess, 0.0);
        assert_eq!(r.rhs_excess, 0.0);
        assert!(r.both_hold);
        let f = vec![Label(1), Label(1), Label(1)];
        let r = check_majority_bounds(&p, std::slice::from_ref(&f)).unwrap();
        assert_eq!(r.lhs_excess, to_f64(&exact_excess(&f, &p)));
        assert_eq!(r.rhs_excess, 2.0 * r.lhs_excess);
        assert!(r.both_hold);
        assert!(check_majority_bounds(&p, &[]).is_err());
    }

    #[test]
    fn small_sweep_holds() {
        let r = majority_bound_sweep(2000, 3);
        assert!(r.all_hold, "{r:?}");
        assert_eq!(r.instances, 2000);
    }

    #[test]
    fn bayes_is_minimal_on_random_problems() {
        assert!(bayes_minimality_sweep(300, 1).all_hold);
        assert_eq!(all_classifiers(3, 2).len(), 8);
    }

    #[test]
    fn oracle_bound_arithmetic() {
        let params = OracleBoundParams { family_size: 1, p: 100, beta: 1.0, c: 1.0 };
        let expected = 29.0 / 100f64.powf(2.0 / 3.0);
        assert!((params.remainder() - expected).abs() < 1e-12);
        let r = check_oracle_bound(&[0.01, 0.02], &[0.0, 0.0], params).unwrap();
        assert!(r.holds);
        assert!(r.rhs > 0.0);
        let bad = OracleBoundParams { c: 0.5, ..params };
        assert!(check_oracle_bound(&[0.1], &[0.1], bad).is_err());
        assert!(check_oracle_bound(&[0.1], &[], params).is_err());
    }

    #[test]
    fn larger_p_gives_smaller_remainder() {
        let a = OracleBoundParams { family_size: 15, p: 50, beta: 1.0, c: 10.0 };
        let b = OracleBoundParams { p: 499, ..a };
        assert!(b.remainder() < a.remainder());
    }
}
