//! CART classification trees and cost-complexity pruning.
//!
//! Trees are grown greedily on Gini impurity until every leaf is pure or
//! holds rows that no axis split can separate. The pruned tree for a penalty
//! `alpha` minimizes `training_error / n + alpha * leaves` over all rooted
//! subtrees; the weakest-link path gives that minimizer for every `alpha` at
//! once. All
//! impurity and cost comparisons run on integer counts.

use std::cmp::Ordering;
use std::sync::{Arc, Mutex};

use num_bigint::BigInt;
use num_rational::BigRational;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::types::{Classifier, Dataset, Label, LearningRule, SharedClassifier, SharedRule};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Split {
    pub feature: usize,
    /// Rows with `x[feature] <= threshold` go left.
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    /// Training rows per class reaching this node.
    pub counts: Vec<usize>,
    /// Majority class, ties to the smallest label.
    pub label: Label,
    /// Training errors if this node were a leaf.
    pub errors: usize,
    pub split: Option<Split>,
}

/// Binary tree over an arena; node 0 is the root.
///
/// Pruning clears `split` on collapsed nodes and leaves their descendants in
/// the arena, so node ids are stable along a prune path.
#[derive(Debug, Clone, PartialEq)]
pub struct CartTree {
    nodes: Vec<Node>,
    n_train: usize,
}

fn majority(counts: &[usize]) -> Label {
    let mut best = 0;
    for (y, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = y;
        }
    }
    Label::from(best)
}

fn make_node(counts: Vec<usize>) -> Node {
    let label = majority(&counts);
    let total: usize = counts.iter().sum();
    Node { errors: total - counts[label.index()], label, counts, split: None }
}

/// `sum_k c_k^2 / n` as an exact fraction.
#[derive(Clone, Copy)]
struct Purity {
    num: u128,
    den: u128,
}

impl Purity {
    fn of(counts: &[usize]) -> Self {
        let n: usize = counts.iter().sum();
        Purity { num: counts.iter().map(|&c| (c * c) as u128).sum(), den: n as u128 }
    }

    fn pair(left: &[usize], right: &[usize]) -> Self {
        let (l, r) = (Self::of(left), Self::of(right));
        Purity { num: l.num * r.den + r.num * l.den, den: l.den * r.den }
    }

    fn cmp(&self, other: &Purity) -> Ordering {
        (self.num * other.den).cmp(&(other.num * self.den))
    }
}

/// Grows the full tree: a node splits while it is impure and some feature
/// takes two distinct values on its rows. The split maximizing the Gini
/// decrease is taken even when that decrease is zero (XOR-like nodes).
pub fn cart_grow(data: &Dataset) -> CartTree {
    let m = data.class_count();
    let count = |rows: &[usize]| {
        let mut c = vec![0usize; m];
        for &i in rows {
            c[data.label(i).index()] += 1;
        }
        c
    };
    let all: Vec<usize> = (0..data.len()).collect();
    let mut nodes = vec![make_node(count(&all))];
    let mut stack = vec![(0usize, all)];
    while let Some((id, rows)) = stack.pop() {
        if nodes[id].errors == 0 || rows.len() < 2 {
            continue;
        }
        let Some((feature, threshold)) = best_split(data, &rows, &nodes[id].counts) else {
            continue;
        };
        let (l, r): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&i| data.row(i)[feature] <= threshold);
        let left = nodes.len();
        nodes.push(make_node(count(&l)));
        nodes.push(make_node(count(&r)));
        nodes[id].split = Some(Split { feature, threshold, left, right: left + 1 });
        stack.push((left + 1, r));
        stack.push((left, l));
    }
    CartTree { nodes, n_train: data.len() }
}

fn best_split(data: &Dataset, rows: &[usize], parent: &[usize]) -> Option<(usize, f64)> {
    let m = parent.len();
    let mut best: Option<(Purity, usize, f64)> = None;
    let mut order = rows.to_vec();
    for f in 0..data.dim() {
        order.sort_unstable_by(|&a, &b| data.row(a)[f].total_cmp(&data.row(b)[f]).then(a.cmp(&b)));
        let mut left = vec![0usize; m];
        let mut right = parent.to_vec();
        for w in 0..order.len() - 1 {
            let y = data.label(order[w]).index();
            left[y] += 1;
            right[y] -= 1;
            let (a, b) = (data.row(order[w])[f], data.row(order[w + 1])[f]);
            if a == b {
                continue;
            }
            let score = Purity::pair(&left, &right);
            if best.as_ref().is_none_or(|(s, _, _)| score.cmp(s) == Ordering::Greater) {
                let mut t = a + (b - a) / 2.0;
                if t >= b {
                    t = a;
                }
                best = Some((score, f, t));
            }
        }
    }
    best.map(|(_, f, t)| (f, t))
}

impl CartTree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Sample size the tree was grown on.
    pub fn n_train(&self) -> usize {
        self.n_train
    }

    fn reachable(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![0];
        while let Some(id) = stack.pop() {
            out.push(id);
            if let Some(s) = self.nodes[id].split {
                stack.push(s.right);
                stack.push(s.left);
            }
        }
        out
    }

    /// Ids of reachable internal nodes, sorted. Two subtrees of the same grown
    /// tree are equal iff these sets are equal.
    pub fn internal_nodes(&self) -> Vec<usize> {
        let mut v: Vec<usize> =
            self.reachable().into_iter().filter(|&i| self.nodes[i].split.is_some()).collect();
        v.sort_unstable();
        v
    }

    pub fn leaf_count(&self) -> usize {
        self.reachable().into_iter().filter(|&i| self.nodes[i].split.is_none()).count()
    }

    /// Training errors of the partitioning classifier.
    pub fn training_errors(&self) -> usize {
        self.reachable()
            .into_iter()
            .filter(|&i| self.nodes[i].split.is_none())
            .map(|i| self.nodes[i].errors)
            .sum()
    }

    pub fn leaf_of(&self, x: &[f64]) -> usize {
        let mut id = 0;
        while let Some(s) = self.nodes[id].split {
            id = if x[s.feature] <= s.threshold { s.left } else { s.right };
        }
        id
    }

    /// Copy with the given internal nodes turned into leaves.
    pub fn collapse(&self, ids: &[usize]) -> CartTree {
        let mut t = self.clone();
        for &i in ids {
            t.nodes[i].split = None;
        }
        t
    }

    /// Copy keeping exactly the given internal nodes (the rest become leaves).
    pub fn restrict(&self, keep: &[usize]) -> CartTree {
        let mut t = self.clone();
        for (i, node) in t.nodes.iter_mut().enumerate() {
            if !keep.contains(&i) {
                node.split = None;
            }
        }
        t
    }

    /// `(training errors, leaves)` of the subtree rooted at every reachable
    /// node, indexed by node id (unreachable entries are zero).
    fn subtree_stats(&self) -> Vec<(usize, usize)> {
        let mut stats = vec![(0, 0); self.nodes.len()];
        let mut order = self.reachable();
        order.reverse();
        for id in order {
            stats[id] = match self.nodes[id].split {
                None => (self.nodes[id].errors, 1),
                Some(s) => {
                    let (a, b) = (stats[s.left], stats[s.right]);
                    (a.0 + b.0, a.1 + b.1)
                }
            };
        }
        stats
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.view(0))?)
    }

    fn view(&self, id: usize) -> NodeView {
        let n = &self.nodes[id];
        NodeView {
            label: n.label,
            counts: n.counts.clone(),
            errors: n.errors,
            split: n.split.map(|s| SplitView {
                feature: s.feature,
                threshold: s.threshold,
                left: Box::new(self.view(s.left)),
                right: Box::new(self.view(s.right)),
            }),
        }
    }
}

#[derive(Serialize)]
struct NodeView {
    label: Label,
    counts: Vec<usize>,
    errors: usize,
    #[serde(skip_serializing_if = "Option::is_none", flatten)]
    split: Option<SplitView>,
}

#[derive(Serialize)]
struct SplitView {
    feature: usize,
    threshold: f64,
    left: Box<NodeView>,
    right: Box<NodeView>,
}

impl Classifier for CartTree {
    fn predict(&self, x: &[f64]) -> Label {
        self.nodes[self.leaf_of(x)].label
    }
}

/// Penalty at which a path subtree becomes optimal:
/// `alpha = errors_gap / (leaves_gap * n)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Breakpoint {
    pub errors_gap: usize,
    pub leaves_gap: usize,
    pub n: usize,
}

impl Breakpoint {
    fn zero(n: usize) -> Self {
        Breakpoint { errors_gap: 0, leaves_gap: 1, n }
    }

    pub fn alpha(&self) -> f64 {
        self.errors_gap as f64 / (self.leaves_gap as f64 * self.n as f64)
    }

    pub fn exact(&self) -> BigRational {
        BigRational::new(
            BigInt::from(self.errors_gap),
            BigInt::from(self.leaves_gap) * BigInt::from(self.n),
        )
    }

    /// `errors_gap / leaves_gap` compared as fractions.
    fn cmp_ratio(&self, other: &Breakpoint) -> Ordering {
        ((self.errors_gap * other.leaves_gap) as u128).cmp(&((other.errors_gap * self.leaves_gap) as u128))
    }
}

/// Nested subtrees with the penalties where each becomes the smallest
/// minimizer of `R + alpha * leaves`. Entry `g` is optimal on
/// `[breakpoint_g, breakpoint_{g+1})`.
#[derive(Debug, Clone)]
pub struct PrunePath {
    pub entries: Vec<(Breakpoint, CartTree)>,
}

impl PrunePath {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        self.entries.iter().map(|(b, _)| b.alpha()).collect()
    }

    /// Position of the subtree optimal at `alpha`, compared exactly.
    pub fn index_for(&self, alpha: f64) -> usize {
        let a = BigRational::from_float(alpha).expect("finite alpha");
        self.entries.iter().rposition(|(b, _)| b.exact() <= a).unwrap_or(0)
    }

    pub fn subtree_for(&self, alpha: f64) -> &CartTree {
        &self.entries[self.index_for(alpha)].1
    }
}

/// Weakest-link pruning of a grown tree. `data` must be the growing sample;
/// the node error counts are reused from growth, so it is only checked for
/// its size.
pub fn cart_prune_path(tree: &CartTree, data: &Dataset) -> PrunePath {
    assert_eq!(tree.n_train, data.len(), "tree was grown on another sample");
    let n = tree.n_train;

    // smallest subtree with the full tree's training error
    let mut current = tree.clone();
    let mut order = current.reachable();
    order.reverse();
    let stats = current.subtree_stats();
    for id in order {
        if current.nodes[id].split.is_some() && current.nodes[id].errors == stats[id].0 {
            current.nodes[id].split = None;
        }
    }
    let mut entries = vec![(Breakpoint::zero(n), current.clone())];

    while current.nodes[0].split.is_some() {
        let stats = current.subtree_stats();
        let link = |id: usize| Breakpoint {
            errors_gap: current.nodes[id].errors - stats[id].0,
            leaves_gap: stats[id].1 - 1,
            n,
        };
        let internal = current.internal_nodes();
        let weakest = internal
            .iter()
            .map(|&i| link(i))
            .min_by(Breakpoint::cmp_ratio)
            .expect("root is internal");
        // collapse every link at this penalty, re-checking ancestors whose
        // link drops to the same value once their descendants are gone
        loop {
            let stats = current.subtree_stats();
            let tied: Vec<usize> = current
                .internal_nodes()
                .into_iter()
                .filter(|&i| {
                    let b = Breakpoint {
                        errors_gap: current.nodes[i].errors - stats[i].0,
                        leaves_gap: stats[i].1 - 1,
                        n,
                    };
                    b.cmp_ratio(&weakest) != Ordering::Greater
                })
                .collect();
            if tied.is_empty() {
                break;
            }
            current = current.collapse(&tied);
        }
        entries.push((weakest, current.clone()));
    }
    PrunePath { entries }
}

/// `cart_grow` then `cart_prune_path`.
pub fn grow_and_prune(data: &Dataset) -> PrunePath {
    cart_prune_path(&cart_grow(data), data)
}

/// Small shared memo of prune paths so a family of rules differing only in
/// `alpha` grows one tree per training sample.
#[derive(Default)]
pub struct PathCache {
    slots: Mutex<Vec<(u64, Arc<Dataset>, Arc<PrunePath>)>>,
}

const CACHE_SLOTS: usize = 64;

impl PathCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_build(&self, data: &Dataset) -> Arc<PrunePath> {
        let key = quick_hash(data);
        {
            let slots = self.slots.lock().expect("cache lock");
            if let Some((_, _, p)) = slots.iter().find(|(k, d, _)| *k == key && d.as_ref() == data) {
                return Arc::clone(p);
            }
        }
        let path = Arc::new(grow_and_prune(data));
        let mut slots = self.slots.lock().expect("cache lock");
        if slots.len() >= CACHE_SLOTS {
            slots.remove(0);
        }
        slots.push((key, Arc::new(data.clone()), Arc::clone(&path)));
        path
    }
}

fn quick_hash(data: &Dataset) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    let mut eat = |v: u64| h = (h ^ v).wrapping_mul(0x0000_0100_0000_01B3);
    eat(data.len() as u64);
    for r in data.rows() {
        for v in r {
            eat(v.to_bits());
        }
    }
    for l in data.labels() {
        eat(l.0 as u64);
    }
    h
}

/// `G^CART_alpha`: grow, then keep the path subtree optimal at `alpha`.
pub struct CartRule {
    alpha: f64,
    id: String,
    cache: Option<Arc<PathCache>>,
}

impl CartRule {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("alpha = {alpha} must be finite and >= 0")));
        }
        Ok(Self { alpha, id: format!("cart-alpha{alpha:020.12}"), cache: None })
    }

    pub fn with_cache(mut self, cache: Arc<PathCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

impl LearningRule for CartRule {
    fn id(&self) -> &str {
        &self.id
    }

    fn train(&self, data: &Dataset) -> Result<SharedClassifier> {
        let path = match &self.cache {
            Some(c) => c.get_or_build(data),
            None => Arc::new(grow_and_prune(data)),
        };
        Ok(Arc::new(path.subtree_for(self.alpha).clone()))
    }
}

pub fn cart_rule(alpha: f64) -> Result<CartRule> {
    CartRule::new(alpha)
}

/// Geometric grid `alpha_min * ratio^g`, `g = 0..points`.
pub fn alpha_grid(alpha_min: f64, ratio: f64, points: usize) -> Result<Vec<f64>> {
    if points == 0 {
        return Err(Error::EmptyFamily);
    }
    if !(alpha_min > 0.0 && ratio > 1.0) {
        return Err(Error::InvalidParameter("grid needs alpha_min > 0 and ratio > 1".into()));
    }
    Ok((0..points).map(|g| alpha_min * ratio.powi(g as i32)).collect())
}

pub const DEFAULT_ALPHA_MIN: f64 = 1e-4;
pub const DEFAULT_ALPHA_RATIO: f64 = 1.5;
pub const DEFAULT_ALPHA_POINTS: usize = 40;

/// One `CartRule` per grid value, sharing a path cache.
pub fn cart_family(alphas: &[f64]) -> Result<Vec<SharedRule>> {
    if alphas.is_empty() {
        return Err(Error::EmptyFamily);
    }
    let cache = Arc::new(PathCache::new());
    alphas
        .iter()
        .map(|&a| Ok(Arc::new(CartRule::new(a)?.with_cache(Arc::clone(&cache))) as SharedRule))
        .collect()
}

pub fn default_cart_family() -> Vec<SharedRule> {
    let grid = alpha_grid(DEFAULT_ALPHA_MIN, DEFAULT_ALPHA_RATIO, DEFAULT_ALPHA_POINTS)
        .expect("default grid is valid");
    cart_family(&grid).expect("default grid is non-empty")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(rows: Vec<Vec<f64>>, labels: &[u32]) -> Dataset {
        Dataset::new(rows, labels.iter().map(|&l| Label(l)).collect(), 2).unwrap()
    }

    #[test]
    fn pure_data_gives_single_leaf() {
        let d = ds(vec![vec![1.0], vec![2.0], vec![3.0]], &[1, 1, 1]);
        let t = cart_grow(&d);
        assert_eq!(t.leaf_count(), 1);
        let p = cart_prune_path(&t, &d);
        assert_eq!(p.len(), 1);
        assert_eq!(p.entries[0].0.alpha(), 0.0);
    }

    #[test]
    fn two_rows_one_split() {
        let d = ds(vec![vec![0.0], vec![1.0]], &[0, 1]);
        let t = cart_grow(&d);
        assert_eq!(t.leaf_count(), 2);
        assert_eq!(t.training_errors(), 0);
        assert_eq!(t.nodes()[0].split.unwrap().threshold, 0.5);
    }

    #[test]
    fn xor_needs_more_than_two_leaves() {
        let rows = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]];
        let d = ds(rows.clone(), &[0, 1, 1, 0]);
        // no single axis split reaches zero error: enumerate them
        for f in 0..2 {
            for thr in [-0.5, 0.5, 1.5] {
                let errs: usize = [true, false]
                    .iter()
                    .map(|&side| {
                        let mut c = [0usize; 2];
                        for (i, r) in rows.iter().enumerate() {
                            if (r[f] <= thr) == side {
                                c[d.label(i).index()] += 1;
                            }
                        }
                        c[0].min(c[1])
                    })
                    .sum();
                assert!(errs > 0);
            }
        }
        let t = cart_grow(&d);
        assert_eq!(t.training_errors(), 0);
        assert!(t.leaf_count() >= 3);
    }

    #[test]
    fn grown_tree_routes_every_row_to_one_leaf() {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![(i * 7 % 11) as f64, (i % 5) as f64]).collect();
        let labels: Vec<u32> = (0..30).map(|i| ((i * 3 + i / 4) % 2) as u32).collect();
        let d = ds(rows, &labels);
        let t = cart_grow(&d);
        let mut per_leaf = vec![0usize; t.nodes().len()];
        for r in d.rows() {
            per_leaf[t.leaf_of(r)] += 1;
        }
        let leaves: Vec<usize> =
            (0..t.nodes().len()).filter(|&i| per_leaf[i] > 0).collect();
        assert_eq!(leaves.len(), t.leaf_count());
        for i in leaves {
            assert_eq!(per_leaf[i], t.nodes()[i].counts.iter().sum::<usize>());
        }
        for n in t.nodes() {
            if let Some(s) = n.split {
                assert_ne!(s.left, s.right);
            }
        }
    }

    #[test]
    fn path_is_nested_and_continuous() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![(i * 13 % 17) as f64, (i * 5 % 7) as f64]).collect();
        let labels: Vec<u32> = (0..40).map(|i| ((i * i + 3) % 3 == 0) as u32).collect();
        let d = ds(rows, &labels);
        let p = grow_and_prune(&d);
        assert!(p.len() >= 2);
        assert_eq!(p.entries.last().unwrap().1.leaf_count(), 1);
        for w in p.entries.windows(2) {
            let (b0, t0) = (&w[0].0, &w[0].1);
            let (b1, t1) = (&w[1].0, &w[1].1);
            assert!(b0.exact() < b1.exact());
            let (i0, i1) = (t0.internal_nodes(), t1.internal_nodes());
            assert!(i1.len() < i0.len() && i1.iter().all(|x| i0.contains(x)));
            assert!(t0.training_errors() <= t1.training_errors());
            // equal penalized cost at the switch point
            let cost = |t: &CartTree| {
                BigRational::new(BigInt::from(t.training_errors()), BigInt::from(d.len()))
                    + b1.exact() * BigInt::from(t.leaf_count())
            };
            assert_eq!(cost(t0), cost(t1));
        }
        assert_eq!(p.subtree_for(1e9).leaf_count(), 1);
    }

    #[test]
    fn rule_ids_sort_by_alpha() {
        let grid = alpha_grid(DEFAULT_ALPHA_MIN, DEFAULT_ALPHA_RATIO, DEFAULT_ALPHA_POINTS).unwrap();
        assert_eq!(grid.len(), 40);
        assert!(grid.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(grid, alpha_grid(1e-4, 1.5, 40).unwrap());
        let fam = cart_family(&grid).unwrap();
        let ids: Vec<&str> = fam.iter().map(|r| r.id()).collect();
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        assert_eq!(ids, sorted);
        assert!(alpha_grid(1e-4, 1.5, 0).is_err());
        assert!(CartRule::new(-1.0).is_err());
        assert!(CartRule::new(f64::NAN).is_err());
    }

    #[test]
    fn cached_and_uncached_rules_agree() {
        let rows: Vec<Vec<f64>> = (0..25).map(|i| vec![(i * 7 % 9) as f64, (i % 4) as f64]).collect();
        let labels: Vec<u32> = (0..25).map(|i| ((i + i / 3) % 2) as u32).collect();
        let d = ds(rows, &labels);
        let fam = cart_family(&[0.0, 0.01, 0.05, 0.2]).unwrap();
        for (rule, a) in fam.iter().zip([0.0, 0.01, 0.05, 0.2]) {
            let f = rule.train(&d).unwrap();
            let g = CartRule::new(a).unwrap().train(&d).unwrap();
            for r in d.rows() {
                assert_eq!(f.predict(r), g.predict(r));
            }
        }
    }

    #[test]
    fn json_lists_splits_and_leaves() {
        let d = ds(vec![vec![0.0], vec![1.0], vec![2.0]], &[0, 1, 1]);
        let t = cart_grow(&d);
        let v: serde_json::Value = serde_json::from_str(&t.to_json().unwrap()).unwrap();
        assert_eq!(v["feature"], 0);
        assert_eq!(v["threshold"], 0.5);
        assert_eq!(v["left"]["label"], 0);
        assert_eq!(v["right"]["counts"], serde_json::json!([0, 2]));
        assert!(v["right"].get("feature").is_none());
    }
}
