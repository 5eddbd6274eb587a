//! Hold-out selection, cross-validation selection, aggregated hold-out
//! (Agghoo) and subagged hold-out, as combinators over any rule family.
//!
//! Rules are scored by their hold-out risk: trained on `D_n^T`, evaluated on
//! `D_n^{T^c}`. Argmin ties go to the rule with the smallest id; vote ties go
//! to the smallest label.

use std::cmp::Ordering;
use std::io::Write;
use std::sync::Arc;

use rand::seq::index;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::risk;
use crate::seed;
use crate::splits::{mc_train_size, SplitPlan};
use crate::types::{Classifier, Dataset, IndexSet, Label, LearningRule, SharedClassifier, SharedRule};

/// `HO_T(G)`: risk on `T^c` of `G` trained on `T`.
pub fn holdout_risk(rule: &dyn LearningRule, data: &Dataset, train: &IndexSet) -> Result<f64> {
    let validation = train.complement().ok_or(Error::EmptyValidationSet)?;
    let f = rule.train(&data.subset(train))?;
    risk::empirical_risk(f.as_ref(), data, &validation)
}

/// Index of the minimal score; ties go to the smallest rule id, then to the
/// earliest position.
pub fn argmin_by_id(scores: &[f64], family: &[SharedRule]) -> usize {
    debug_assert_eq!(scores.len(), family.len());
    (0..scores.len())
        .min_by(|&a, &b| {
            scores[a]
                .total_cmp(&scores[b])
                .then_with(|| family[a].id().cmp(family[b].id()))
                .then(a.cmp(&b))
        })
        .expect("non-empty family")
}

#[derive(Clone)]
pub struct HoldoutChoice {
    pub rule_index: usize,
    pub rule_id: String,
    /// Winner trained on `D_n^T` only.
    pub classifier: SharedClassifier,
    /// `HO_T` of the winner.
    pub score: f64,
    /// `HO_T` of every rule, in family order.
    pub scores: Vec<f64>,
}

impl std::fmt::Debug for HoldoutChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HoldoutChoice")
            .field("rule_index", &self.rule_index)
            .field("rule_id", &self.rule_id)
            .field("score", &self.score)
            .finish_non_exhaustive()
    }
}

pub fn holdout_select(family: &[SharedRule], data: &Dataset, train: &IndexSet) -> Result<HoldoutChoice> {
    if family.is_empty() {
        return Err(Error::EmptyFamily);
    }
    let validation = train.complement().ok_or(Error::EmptyValidationSet)?;
    let sub = data.subset(train);
    let mut scores = Vec::with_capacity(family.len());
    let mut best: Option<(usize, SharedClassifier)> = None;
    for (g, rule) in family.iter().enumerate() {
        let f = rule.train(&sub)?;
        let score = risk::empirical_risk(f.as_ref(), data, &validation)?;
        scores.push(score);
        let better = match &best {
            None => true,
            Some((b, _)) => match score.total_cmp(&scores[*b]) {
                Ordering::Less => true,
                Ordering::Equal => rule.id() < family[*b].id(),
                Ordering::Greater => false,
            },
        };
        if better {
            best = Some((g, f));
        }
    }
    let (rule_index, classifier) = best.expect("non-empty family");
    Ok(HoldoutChoice {
        rule_index,
        rule_id: family[rule_index].id().to_owned(),
        classifier,
        score: scores[rule_index],
        scores,
    })
}

/// Hold-out selections for every training set of a plan.
///
/// Agghoo and CV are both read off this table, so at equal `(family, plan)`
/// the two procedures share the same `V * |family|` trainings.
#[derive(Debug, Clone)]
pub struct ScoreTable {
    pub rule_ids: Vec<String>,
    pub splits: Vec<HoldoutChoice>,
}

#[derive(Serialize)]
struct TraceScore<'a> {
    id: &'a str,
    risk: f64,
}

#[derive(Serialize)]
struct TraceLine<'a> {
    split: usize,
    scores: Vec<TraceScore<'a>>,
    winner: &'a str,
}

impl ScoreTable {
    pub fn v(&self) -> usize {
        self.splits.len()
    }

    /// Table of the first `v` splits; equal to scoring the truncated plan.
    pub fn prefix(&self, v: usize) -> ScoreTable {
        ScoreTable { rule_ids: self.rule_ids.clone(), splits: self.splits[..v.min(self.splits.len())].to_vec() }
    }

    /// `CV_T(G)`: mean hold-out risk of each rule over the splits.
    pub fn cv_scores(&self) -> Vec<f64> {
        let v = self.splits.len() as f64;
        (0..self.rule_ids.len())
            .map(|g| self.splits.iter().map(|s| s.scores[g]).sum::<f64>() / v)
            .collect()
    }

    /// Majority vote over the per-split hold-out winners.
    pub fn agghoo(&self, class_count: usize) -> MajorityVoteClassifier {
        let members = self.splits.iter().map(|s| Arc::clone(&s.classifier)).collect();
        MajorityVoteClassifier::new(members, class_count).expect("plan is non-empty")
    }

    /// CV winner, retrained on the full sample.
    pub fn cv(&self, family: &[SharedRule], data: &Dataset) -> Result<CvChoice> {
        let scores = self.cv_scores();
        let rule_index = argmin_by_id(&scores, family);
        Ok(CvChoice {
            rule_index,
            rule_id: family[rule_index].id().to_owned(),
            classifier: family[rule_index].train(data)?,
            score: scores[rule_index],
            scores,
        })
    }

    /// One JSON object per split: every rule's hold-out risk and the winner.
    pub fn write_trace(&self, mut out: impl Write) -> Result<()> {
        for (j, s) in self.splits.iter().enumerate() {
            let line = TraceLine {
                split: j,
                scores: self
                    .rule_ids
                    .iter()
                    .zip(&s.scores)
                    .map(|(id, &risk)| TraceScore { id, risk })
                    .collect(),
                winner: &s.rule_id,
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Runs `holdout_select` on every training set. Splits run concurrently and
/// are reduced in plan order.
pub fn score_plan(family: &[SharedRule], data: &Dataset, plan: &SplitPlan) -> Result<ScoreTable> {
    if family.is_empty() {
        return Err(Error::EmptyFamily);
    }
    if plan.sets.is_empty() {
        return Err(Error::EmptyPlan);
    }
    if plan.n != data.len() {
        return Err(Error::InvalidParameter(format!(
            "plan built for n = {} used on {} rows",
            plan.n,
            data.len()
        )));
    }
    let splits = plan
        .sets
        .par_iter()
        .map(|t| holdout_select(family, data, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoreTable { rule_ids: family.iter().map(|r| r.id().to_owned()).collect(), splits })
}

#[derive(Clone)]
pub struct CvChoice {
    pub rule_index: usize,
    pub rule_id: String,
    /// Winner retrained on all `n` rows.
    pub classifier: SharedClassifier,
    pub score: f64,
    pub scores: Vec<f64>,
}

pub fn cv_select(family: &[SharedRule], data: &Dataset, plan: &SplitPlan) -> Result<CvChoice> {
    score_plan(family, data, plan)?.cv(family, data)
}

pub fn agghoo(family: &[SharedRule], data: &Dataset, plan: &SplitPlan) -> Result<MajorityVoteClassifier> {
    Ok(score_plan(family, data, plan)?.agghoo(data.class_count()))
}

/// Label with the most votes; ties go to the smallest label.
pub fn majority_vote(members: &[SharedClassifier], class_count: usize, x: &[f64]) -> Result<Label> {
    if members.is_empty() {
        return Err(Error::EmptyPlan);
    }
    Ok(winner(&vote_counts(members, class_count, x)))
}

fn vote_counts(members: &[SharedClassifier], class_count: usize, x: &[f64]) -> Vec<usize> {
    let mut counts = vec![0usize; class_count];
    for m in members {
        counts[m.predict(x).index()] += 1;
    }
    counts
}

fn winner(counts: &[usize]) -> Label {
    let mut best = 0;
    for (y, &c) in counts.iter().enumerate().skip(1) {
        if c > counts[best] {
            best = y;
        }
    }
    Label::from(best)
}

#[derive(Clone)]
pub struct MajorityVoteClassifier {
    members: Vec<SharedClassifier>,
    class_count: usize,
}

impl MajorityVoteClassifier {
    pub fn new(members: Vec<SharedClassifier>, class_count: usize) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::EmptyPlan);
        }
        Ok(Self { members, class_count })
    }

    pub fn members(&self) -> &[SharedClassifier] {
        &self.members
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Vote count per label at `x`; sums to the number of members.
    pub fn votes(&self, x: &[f64]) -> Vec<usize> {
        vote_counts(&self.members, self.class_count, x)
    }
}

impl Classifier for MajorityVoteClassifier {
    fn predict(&self, x: &[f64]) -> Label {
        winner(&self.votes(x))
    }
}

/// Subagging applied to hold-out selection.
///
/// Within each subsample `D_n^{T_j}`, an inner training set `T'_j` of size
/// `floor(inner_tau * |T_j|)` is drawn from stream `j` of `seed`; the hold-out
/// winner on that inner split, trained on `T'_j` only, is member `j` of the
/// vote.
pub fn subagged_holdout(
    family: &[SharedRule],
    data: &Dataset,
    plan: &SplitPlan,
    inner_tau: f64,
    seed: u64,
) -> Result<MajorityVoteClassifier> {
    let choices = subagged_choices(family, data, plan, inner_tau, seed)?;
    MajorityVoteClassifier::new(choices.into_iter().map(|c| c.classifier).collect(), data.class_count())
}

/// The per-subsample hold-out winners behind [`subagged_holdout`]. Scores and
/// `rule_index` refer to the inner split of each subsample.
pub fn subagged_choices(
    family: &[SharedRule],
    data: &Dataset,
    plan: &SplitPlan,
    inner_tau: f64,
    seed: u64,
) -> Result<Vec<HoldoutChoice>> {
    if family.is_empty() {
        return Err(Error::EmptyFamily);
    }
    if plan.sets.is_empty() {
        return Err(Error::EmptyPlan);
    }
    plan.sets
        .par_iter()
        .enumerate()
        .map(|(j, t)| {
            let sub = data.subset(t);
            let inner = inner_training_set(sub.len(), inner_tau, seed, j as u64)?;
            holdout_select(family, &sub, &inner)
        })
        .collect()
}

/// Inner training set of the `j`-th subsample, as positions within it.
pub fn inner_training_set(m: usize, inner_tau: f64, seed: u64, j: u64) -> Result<IndexSet> {
    if !(inner_tau > 0.0 && inner_tau < 1.0) {
        return Err(Error::InvalidParameter(format!("inner tau = {inner_tau} outside (0, 1)")));
    }
    let size = mc_train_size(m, inner_tau);
    if size == 0 || size >= m {
        return Err(Error::DegenerateSplit { n: m, train_size: size });
    }
    let mut rng = seed::stream_rng(seed::derive(seed, &[seed::tag("subag")]), j);
    IndexSet::new(index::sample(&mut rng, m, size).into_vec(), m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::knn::KnnRule;
    use crate::splits::monte_carlo_splits;
    use crate::types::{ConstantClassifier, ConstantRule, FixedRule};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Mutex;

    fn line_data(labels: &[u32]) -> Dataset {
        let rows = (0..labels.len()).map(|i| vec![i as f64]).collect();
        Dataset::new(rows, labels.iter().map(|&l| Label(l)).collect(), 2).unwrap()
    }

    /// Rule returning the classifier that reads the label off a lookup
    /// table of the full sample.
    fn perfect_rule(d: &Dataset) -> SharedRule {
        let labels = d.labels().to_vec();
        let f = move |x: &[f64]| labels[x[0] as usize];
        Arc::new(FixedRule::new("perfect", Arc::new(f)))
    }

    fn constant(l: u32) -> SharedClassifier {
        Arc::new(ConstantClassifier(Label(l)))
    }

    #[test]
    fn holdout_risk_cases() {
        let d = line_data(&[0, 1, 0, 1, 0, 1]);
        let t = IndexSet::new(vec![0, 1], 6).unwrap();
        assert_eq!(holdout_risk(perfect_rule(&d).as_ref(), &d, &t).unwrap(), 0.0);
        assert_eq!(holdout_risk(&ConstantRule::new(Label(0)), &d, &t).unwrap(), 0.5);
        let all = IndexSet::all(6).unwrap();
        assert!(matches!(
            holdout_risk(&ConstantRule::new(Label(0)), &d, &all),
            Err(Error::EmptyValidationSet)
        ));
    }

    #[test]
    fn one_nn_on_duplicated_rows_has_zero_holdout_risk() {
        let base = [[0.1, 0.2], [0.9, 0.4], [0.5, 0.7], [0.3, 0.95]];
        let labels = [0, 1, 1, 0];
        let rows: Vec<Vec<f64>> = base.iter().chain(base.iter()).map(|r| r.to_vec()).collect();
        let labs = labels.iter().chain(labels.iter()).map(|&l| Label(l)).collect();
        let d = Dataset::new(rows, labs, 2).unwrap();
        let t = IndexSet::new(vec![0, 1, 2, 3], 8).unwrap();
        let rule = KnnRule::new(1).unwrap();
        let f = rule.train(&d.subset(&t)).unwrap();
        for i in 4..8 {
            assert_eq!(f.predict(d.row(i)), d.label(i));
        }
        assert_eq!(holdout_risk(&rule, &d, &t).unwrap(), 0.0);
    }

    #[test]
    fn select_prefers_perfect_rule_and_breaks_ties_by_id() {
        let d = line_data(&[0, 1, 1, 0, 1, 0]);
        let t = IndexSet::new(vec![0, 2, 4], 6).unwrap();
        let fam: Vec<SharedRule> = vec![Arc::new(ConstantRule::new(Label(0))), perfect_rule(&d)];
        let c = holdout_select(&fam, &d, &t).unwrap();
        assert_eq!(c.rule_id, "perfect");
        assert_eq!(c.score, 0.0);

        let single = holdout_select(&fam[..1], &d, &t).unwrap();
        assert_eq!(single.rule_index, 0);

        // validation labels (1, 0, 0): both constants tie on risk 1/3 vs 2/3;
        // make a genuine tie with two rules returning the same classifier
        let a: SharedRule = Arc::new(FixedRule::new("b-rule", constant(0)));
        let b: SharedRule = Arc::new(FixedRule::new("a-rule", constant(0)));
        let c = holdout_select(&[a.clone(), b.clone()], &d, &t).unwrap();
        assert_eq!(c.rule_id, "a-rule");
        let c = holdout_select(&[b, a], &d, &t).unwrap();
        assert_eq!(c.rule_id, "a-rule");
        assert!(holdout_select(&[], &d, &t).is_err());
    }

    #[test]
    fn majority_vote_cases() {
        let x = [0.0];
        let vote = |ls: &[u32], m| {
            let members: Vec<SharedClassifier> = ls.iter().map(|&l| constant(l)).collect();
            majority_vote(&members, m, &x).unwrap()
        };
        assert_eq!(vote(&[1, 1, 0], 2), Label(1));
        assert_eq!(vote(&[0, 1], 2), Label(0));
        assert_eq!(vote(&[2, 2, 1, 0, 2], 3), Label(2));
        assert_eq!(vote(&[0, 0, 1], 2), Label(0));
        assert_eq!(vote(&[2, 1], 3), Label(1));
        assert!(majority_vote(&[], 2, &x).is_err());
    }

    #[test]
    fn votes_sum_to_member_count() {
        let members: Vec<SharedClassifier> = [0, 2, 2, 1, 0, 2, 1].iter().map(|&l| constant(l)).collect();
        let mv = MajorityVoteClassifier::new(members, 3).unwrap();
        let v = mv.votes(&[0.3]);
        assert_eq!(v, vec![2, 2, 3]);
        assert_eq!(v.iter().sum::<usize>(), 7);
    }

    fn noisy_line(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen::<f64>(), rng.gen::<f64>()]).collect();
        let labels = rows
            .iter()
            .map(|r| {
                let p = if r[0] + 0.3 * r[1] > 0.6 { 0.8 } else { 0.25 };
                Label(rng.gen_bool(p) as u32)
            })
            .collect();
        Dataset::new(rows, labels, 2).unwrap()
    }

    fn knn_family() -> Vec<SharedRule> {
        (0..8).map(|i| Arc::new(KnnRule::new(2 * i + 1).unwrap()) as SharedRule).collect()
    }

    #[test]
    fn v1_equivalences() {
        let d = noisy_line(60, 3);
        let fam = knn_family();
        let plan = monte_carlo_splits(60, 0.6, 1, 5).unwrap();
        let ho = holdout_select(&fam, &d, &plan.sets[0]).unwrap();
        let ag = agghoo(&fam, &d, &plan).unwrap();
        let cv = cv_select(&fam, &d, &plan).unwrap();
        assert_eq!(cv.rule_index, ho.rule_index);
        for i in 0..30 {
            for j in 0..30 {
                let x = [i as f64 / 29.0, j as f64 / 29.0];
                assert_eq!(ag.predict(&x), ho.classifier.predict(&x));
            }
        }
        // cv retrains on the full sample
        let full = fam[cv.rule_index].train(&d).unwrap();
        for r in d.rows() {
            assert_eq!(cv.classifier.predict(r), full.predict(r));
        }
    }

    #[test]
    fn cv_scores_match_recomputation() {
        let d = noisy_line(80, 4);
        let fam = knn_family();
        let plan = monte_carlo_splits(80, 0.7, 5, 6).unwrap();
        let cv = cv_select(&fam, &d, &plan).unwrap();
        for (g, rule) in fam.iter().enumerate() {
            let mut sum = 0.0;
            for t in &plan.sets {
                sum += holdout_risk(rule.as_ref(), &d, t).unwrap();
            }
            assert_eq!(cv.scores[g], sum / plan.sets.len() as f64);
        }
        let best = (0..fam.len())
            .min_by(|&a, &b| cv.scores[a].total_cmp(&cv.scores[b]).then(fam[a].id().cmp(fam[b].id())))
            .unwrap();
        assert_eq!(cv.rule_index, best);
    }

    #[test]
    fn identical_winners_make_agghoo_that_classifier() {
        let d = noisy_line(40, 8);
        let fam: Vec<SharedRule> = vec![Arc::new(KnnRule::new(3).unwrap())];
        let plan = monte_carlo_splits(40, 0.5, 4, 1).unwrap();
        let shared = constant(1);
        let fixed: Vec<SharedRule> = vec![Arc::new(FixedRule::new("only", Arc::clone(&shared)))];
        let ag = agghoo(&fixed, &d, &plan).unwrap();
        for r in d.rows() {
            assert_eq!(ag.predict(r), shared.predict(r));
        }
        assert_eq!(agghoo(&fam, &d, &plan).unwrap().members().len(), 4);
        assert!(agghoo(&[], &d, &plan).is_err());
    }

    #[test]
    fn trace_has_one_line_per_split() {
        let d = noisy_line(30, 2);
        let fam = knn_family();
        let plan = monte_carlo_splits(30, 0.5, 3, 2).unwrap();
        let table = score_plan(&fam, &d, &plan).unwrap();
        let mut buf = Vec::new();
        table.write_trace(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        let v: serde_json::Value = serde_json::from_str(lines[1]).unwrap();
        assert_eq!(v["split"], 1);
        assert_eq!(v["scores"].as_array().unwrap().len(), fam.len());
        assert_eq!(v["winner"], table.splits[1].rule_id.as_str());
    }

    struct SizeRecorder {
        sizes: Arc<Mutex<Vec<usize>>>,
    }

    impl LearningRule for SizeRecorder {
        fn id(&self) -> &str {
            "recorder"
        }
        fn train(&self, data: &Dataset) -> Result<SharedClassifier> {
            self.sizes.lock().unwrap().push(data.len());
            Ok(Arc::new(ConstantClassifier(Label(0))))
        }
    }

    #[test]
    fn subagged_members_see_inner_training_size() {
        let d = noisy_line(100, 9);
        let sizes = Arc::new(Mutex::new(Vec::new()));
        let fam: Vec<SharedRule> = vec![Arc::new(SizeRecorder { sizes: Arc::clone(&sizes) })];
        let plan = monte_carlo_splits(100, 0.7, 3, 1).unwrap();
        let mv = subagged_holdout(&fam, &d, &plan, 0.6, 4).unwrap();
        assert_eq!(mv.members().len(), 3);
        let expected = mc_train_size(mc_train_size(100, 0.7), 0.6);
        assert_eq!(expected, 42);
        assert!(sizes.lock().unwrap().iter().all(|&s| s == expected));
        assert!(subagged_holdout(&fam, &d, &plan, 0.001, 4).is_err());
    }

    #[test]
    fn subagged_v1_is_holdout_within_the_subsample() {
        let d = noisy_line(90, 10);
        let fam = knn_family();
        let plan = monte_carlo_splits(90, 0.8, 1, 3).unwrap();
        let mv = subagged_holdout(&fam, &d, &plan, 0.5, 7).unwrap();
        let sub = d.subset(&plan.sets[0]);
        let inner = inner_training_set(sub.len(), 0.5, 7, 0).unwrap();
        let ho = holdout_select(&fam, &sub, &inner).unwrap();
        for r in d.rows() {
            assert_eq!(mv.predict(r), ho.classifier.predict(r));
        }
    }
}
