//! Replicated experiments: draw a sample and a test set per replicate, run every
//! selector on the same pair, and aggregate test-set (excess) risks.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::{self, LoadedData, MissingPolicy};
use crate::error::{Error, Result};
use crate::learners::cart::{alpha_grid, cart_family, DEFAULT_ALPHA_MIN, DEFAULT_ALPHA_POINTS, DEFAULT_ALPHA_RATIO};
use crate::learners::knn::knn_family;
use crate::learners::localpoly::{lp_collection, DEFAULT_CAP_DEGREE, DEFAULT_CAP_K};
use crate::risk::test_risk;
use crate::seed::{derive, tag};
use crate::selection::{argmin_by_id, score_plan, subagged_choices, MajorityVoteClassifier, ScoreTable};
use crate::splits::{make_plan, mc_train_size, SplitPlan, SplitScheme};
use crate::synthetic::{GaussMixProblem, SigmoidProblem, SyntheticProblem};
use crate::types::{Classifier, Dataset, SharedClassifier, SharedRule};

pub const DEFAULT_REPLICATES: usize = 100;
pub const DEFAULT_TEST_N: usize = 1000;
pub const DEFAULT_N: usize = 500;
pub const DEFAULT_KNN_MAX: usize = 29;
pub const DEFAULT_GAUSSMIX_D: usize = 7;

/// Default Monte-Carlo grid `0.1, 0.2, ..., 0.9`.
pub fn default_tau_grid() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum ProblemSpec {
    Sigmoid,
    GaussMix { d: usize },
    /// Breast-cancer data; `None` selects the bundled copy.
    Uci { path: Option<PathBuf> },
}

impl fmt::Display for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProblemSpec::Sigmoid => write!(f, "sigmoid"),
            ProblemSpec::GaussMix { d } => write!(f, "gaussmix:{d}"),
            ProblemSpec::Uci { path: None } => write!(f, "uci"),
            ProblemSpec::Uci { path: Some(p) } => write!(f, "uci:{}", p.display()),
        }
    }
}

impl FromStr for ProblemSpec {
    type Err = Error;

    /// `sigmoid`, `gaussmix`, `gaussmix:<d>`, `uci` or `uci:<path>`.
    fn from_str(s: &str) -> Result<Self> {
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        match (head, arg) {
            ("sigmoid", None) => Ok(ProblemSpec::Sigmoid),
            ("gaussmix", None) => Ok(ProblemSpec::GaussMix { d: DEFAULT_GAUSSMIX_D }),
            ("gaussmix", Some(d)) => {
                let d = d.parse().map_err(|_| Error::InvalidParameter(format!("bad dimension in {s:?}")))?;
                GaussMixProblem::new(d)?;
                Ok(ProblemSpec::GaussMix { d })
            }
            ("uci", None) => Ok(ProblemSpec::Uci { path: None }),
            ("uci", Some(p)) => Ok(ProblemSpec::Uci { path: Some(PathBuf::from(p)) }),
            _ => Err(Error::InvalidParameter(format!("unknown problem {s:?}"))),
        }
    }
}

impl From<ProblemSpec> for String {
    fn from(p: ProblemSpec) -> String {
        p.to_string()
    }
}

impl TryFrom<String> for ProblemSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum FamilySpec {
    /// Odd `k` up to `k_max`.
    Knn { k_max: usize },
    /// Geometric alpha grid.
    Cart { alpha_min: f64, ratio: f64, points: usize },
    /// Degrees `0..cap_degree`, inverse bandwidths `1..=cap_k`.
    LocalPoly { cap_degree: usize, cap_k: usize },
}

impl FamilySpec {
    pub fn build(&self, n: usize) -> Result<Vec<SharedRule>> {
        match *self {
            FamilySpec::Knn { k_max } => {
                let fam = knn_family(k_max.min(n));
                if fam.is_empty() {
                    return Err(Error::EmptyFamily);
                }
                Ok(fam)
            }
            FamilySpec::Cart { alpha_min, ratio, points } => cart_family(&alpha_grid(alpha_min, ratio, points)?),
            FamilySpec::LocalPoly { cap_degree, cap_k } => lp_collection(n, cap_degree, cap_k),
        }
    }
}

impl fmt::Display for FamilySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FamilySpec::Knn { k_max } => write!(f, "knn:{k_max}"),
            FamilySpec::Cart { alpha_min, ratio, points } => write!(f, "cart:{alpha_min:e}:{ratio}:{points}"),
            FamilySpec::LocalPoly { cap_degree, cap_k } => write!(f, "lp:{cap_degree}:{cap_k}"),
        }
    }
}

impl FromStr for FamilySpec {
    type Err = Error;

    /// `knn[:k_max]`, `cart[:alpha_min:ratio:points]`, `lp[:cap_degree:cap_k]`;
    /// a `-grid` suffix on the name is accepted.
    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split(':');
        let head = parts.next().unwrap_or_default();
        let args: Vec<&str> = parts.collect();
        let bad = || Error::InvalidParameter(format!("bad family {s:?}"));
        let num = |a: &str| a.parse::<f64>().map_err(|_| bad());
        let int = |a: &str| a.parse::<usize>().map_err(|_| bad());
        match (head.trim_end_matches("-grid"), args.as_slice()) {
            ("knn", []) => Ok(FamilySpec::Knn { k_max: DEFAULT_KNN_MAX }),
            ("knn", [k]) => Ok(FamilySpec::Knn { k_max: int(k)? }),
            ("cart", []) => Ok(FamilySpec::Cart {
                alpha_min: DEFAULT_ALPHA_MIN,
                ratio: DEFAULT_ALPHA_RATIO,
                points: DEFAULT_ALPHA_POINTS,
            }),
            ("cart", [a, r, p]) => Ok(FamilySpec::Cart { alpha_min: num(a)?, ratio: num(r)?, points: int(p)? }),
            ("lp", []) => Ok(FamilySpec::LocalPoly { cap_degree: DEFAULT_CAP_DEGREE, cap_k: DEFAULT_CAP_K }),
            ("lp", [l, k]) => Ok(FamilySpec::LocalPoly { cap_degree: int(l)?, cap_k: int(k)? }),
            _ => Err(bad()),
        }
    }
}

impl From<FamilySpec> for String {
    fn from(f: FamilySpec) -> String {
        f.to_string()
    }
}

impl TryFrom<String> for FamilySpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Agghoo,
    Cv,
    Holdout,
    Subag,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Agghoo => "agghoo",
            Scheme::Cv => "cv",
            Scheme::Holdout => "holdout",
            Scheme::Subag => "subag",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "agghoo" => Ok(Scheme::Agghoo),
            "cv" => Ok(Scheme::Cv),
            "holdout" | "ho" => Ok(Scheme::Holdout),
            "subag" => Ok(Scheme::Subag),
            _ => Err(Error::InvalidParameter(format!("unknown scheme {s:?}"))),
        }
    }
}

/// How training sets are drawn for a setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Resampling {
    MonteCarlo { tau: f64 },
    VFold,
}

impl Resampling {
    /// CSV spelling: the decimal tau, or `vfold`.
    pub fn label(&self) -> String {
        match self {
            Resampling::MonteCarlo { tau } => format!("{tau}"),
            Resampling::VFold => "vfold".into(),
        }
    }

    pub fn parse_label(s: &str) -> Result<Self> {
        if s == "vfold" {
            return Ok(Resampling::VFold);
        }
        s.parse::<f64>()
            .map(|tau| Resampling::MonteCarlo { tau })
            .map_err(|_| Error::InvalidParameter(format!("bad tau {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Setting {
    pub scheme: Scheme,
    pub resampling: Resampling,
    pub v: usize,
}

impl Setting {
    pub fn new(scheme: Scheme, resampling: Resampling, v: usize) -> Self {
        Self { scheme, resampling, v }
    }

    fn scheme_for_plan(&self) -> SplitScheme {
        match self.resampling {
            Resampling::MonteCarlo { tau } => SplitScheme::MonteCarlo { tau, v: self.v },
            Resampling::VFold => SplitScheme::VFold { v: self.v },
        }
    }

    pub fn validate(&self, n: usize, inner_tau: Option<f64>) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.v == 0 {
            return bad(format!("{}: V must be at least 1", self.key()));
        }
        if self.scheme == Scheme::Holdout && self.v != 1 {
            return bad(format!("{}: hold-out uses a single split", self.key()));
        }
        match self.resampling {
            Resampling::MonteCarlo { tau } => {
                if !(tau > 0.0 && tau < 1.0) {
                    return bad(format!("{}: tau outside (0, 1)", self.key()));
                }
                let size = mc_train_size(n, tau);
                if size == 0 || size >= n {
                    return Err(Error::DegenerateSplit { n, train_size: size });
                }
            }
            Resampling::VFold => {
                if self.v < 2 || self.v > n {
                    return bad(format!("{}: V-fold needs 2 <= V <= n", self.key()));
                }
            }
        }
        if self.scheme == Scheme::Subag {
            let inner = inner_tau.ok_or_else(|| {
                Error::InvalidParameter("subag needs an explicit inner tau".into())
            })?;
            let outer = make_plan(n, self.scheme_for_plan(), 0)?;
            let smallest = outer.sets.iter().map(|t| t.len()).min().unwrap_or(0);
            let size = mc_train_size(smallest, inner);
            if !(inner > 0.0 && inner < 1.0) || size == 0 || size >= smallest {
                return Err(Error::DegenerateSplit { n: smallest, train_size: size });
            }
        }
        Ok(())
    }

    pub fn key(&self) -> RowKey {
        RowKey { scheme: self.scheme.name().into(), tau: self.resampling.label(), v: self.v.to_string() }
    }
}

/// Every valid combination of `schemes x resamplings x vs`. Hold-out only
/// takes `V = 1` and V-fold needs `V >= 2`; other pairs are dropped, as are
/// duplicates.
pub fn expand_settings(schemes: &[Scheme], resamplings: &[Resampling], vs: &[usize]) -> Vec<Setting> {
    let mut out: Vec<Setting> = Vec::new();
    for &scheme in schemes {
        for &resampling in resamplings {
            for &v in vs {
                let v = if scheme == Scheme::Holdout { 1 } else { v };
                if matches!(resampling, Resampling::VFold) && v < 2 {
                    continue;
                }
                let s = Setting::new(scheme, resampling, v);
                if !out.contains(&s) {
                    out.push(s);
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub family: FamilySpec,
    /// Sample size; for the UCI problem, the training part of each resplit.
    pub n: usize,
    /// Test-set size; ignored for the UCI problem, whose test set is the rest
    /// of the data.
    pub test_n: usize,
    pub replicates: usize,
    pub settings: Vec<Setting>,
    /// Inner training fraction for subagged hold-out. Required when a
    /// `subag` setting is present.
    pub inner_tau: Option<f64>,
    #[serde(default)]
    pub missing_policy: MissingPolicy,
    pub master_seed: u64,
}

impl ExperimentConfig {
    pub fn new(problem: ProblemSpec, family: FamilySpec, settings: Vec<Setting>) -> Self {
        Self {
            problem,
            family,
            n: DEFAULT_N,
            test_n: DEFAULT_TEST_N,
            replicates: DEFAULT_REPLICATES,
            settings,
            inner_tau: None,
            missing_policy: MissingPolicy::default(),
            master_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::InvalidParameter("at least one replicate is needed".into()));
        }
        if self.n < 2 {
            return Err(Error::InvalidParameter("n must be at least 2".into()));
        }
        if self.test_n == 0 && !matches!(self.problem, ProblemSpec::Uci { .. }) {
            return Err(Error::InvalidParameter("test_n must be positive".into()));
        }
        if self.settings.is_empty() {
            return Err(Error::InvalidParameter("no selector settings".into()));
        }
        for s in &self.settings {
            s.validate(self.n, self.inner_tau)?;
        }
        Ok(())
    }

    pub fn replicate_seed(&self, r: usize) -> u64 {
        derive(self.master_seed, &[r as u64])
    }
}

/// Identifies a CSV row group: scheme name, tau label and V label. The oracle
/// uses empty tau and V.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct RowKey {
    pub scheme: String,
    pub tau: String,
    pub v: String,
}

impl RowKey {
    pub fn oracle() -> Self {
        RowKey { scheme: ORACLE.into(), tau: String::new(), v: String::new() }
    }
}

impl fmt::Display for RowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.tau.is_empty() {
            write!(f, "{}", self.scheme)
        } else {
            write!(f, "{}(tau={}, V={})", self.scheme, self.tau, self.v)
        }
    }
}

pub const ORACLE: &str = "oracle";

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum Outcome {
    Ok {
        /// Test excess risk; `None` when the Bayes classifier is unknown.
        excess: Option<f64>,
        risk: f64,
        selected: Vec<String>,
    },
    Failed { reason: String },
}

impl Outcome {
    pub fn excess(&self) -> Option<f64> {
        match self {
            Outcome::Ok { excess, .. } => *excess,
            Outcome::Failed { .. } => None,
        }
    }

    pub fn risk(&self) -> Option<f64> {
        match self {
            Outcome::Ok { risk, .. } => Some(*risk),
            Outcome::Failed { .. } => None,
        }
    }

    /// Excess risk when known, else plain risk.
    pub fn loss(&self) -> Option<f64> {
        self.excess().or(self.risk())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub replicate: usize,
    pub key: RowKey,
    pub outcome: Outcome,
}

/// Inputs shared by every scheme of one replicate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub replicate: usize,
    pub seed: u64,
    pub sample_sha256: String,
    pub test_sha256: String,
    /// Plan hash per distinct training-set plan, keyed by its label.
    pub plans: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub key: RowKey,
    pub count: usize,
    pub failures: usize,
    pub mean_excess: Option<f64>,
    pub se_excess: Option<f64>,
    pub mean_risk: Option<f64>,
    pub se_risk: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub family_size: usize,
    pub rows: Vec<Row>,
    pub aggregates: Vec<Aggregate>,
    pub provenance: Vec<Option<Provenance>>,
    pub data_sha256: Option<String>,
    pub runtime_secs: f64,
    pub threads: usize,
}

impl ExperimentReport {
    pub fn aggregate(&self, key: &RowKey) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| &a.key == key)
    }

    pub fn oracle(&self) -> Option<&Aggregate> {
        self.aggregate(&RowKey::oracle())
    }

    /// Per-replicate excess risks (or risks, for data without a Bayes
    /// classifier) of `key`, in replicate order; `None` for failures.
    pub fn losses(&self, key: &RowKey) -> Vec<Option<f64>> {
        self.rows.iter().filter(|r| &r.key == key).map(|r| r.outcome.loss()).collect()
    }

    /// Losses of two row groups over the replicates where both succeeded.
    pub fn paired(&self, a: &RowKey, b: &RowKey) -> (Vec<f64>, Vec<f64>) {
        self.losses(a)
            .into_iter()
            .zip(self.losses(b))
            .filter_map(|(x, y)| Some((x?, y?)))
            .unzip()
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| matches!(r.outcome, Outcome::Failed { .. })).count()
    }
}

/// Sample mean and standard error `sd / sqrt(R)`; the error is 0 for one value.
pub fn mean_se(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    Some(crate::theory::mean_se(xs))
}

/// Aggregates `rows` per key, in first-appearance order.
pub fn aggregate_rows(rows: &[Row]) -> Vec<Aggregate> {
    let mut keys: Vec<RowKey> = Vec::new();
    for r in rows {
        if !keys.contains(&r.key) {
            keys.push(r.key.clone());
        }
    }
    keys.into_iter()
        .map(|key| {
            let group: Vec<&Row> = rows.iter().filter(|r| r.key == key).collect();
            let excess: Vec<f64> = group.iter().filter_map(|r| r.outcome.excess()).collect();
            let risk: Vec<f64> = group.iter().filter_map(|r| r.outcome.risk()).collect();
            let ex = mean_se(&excess);
            let rk = mean_se(&risk);
            Aggregate {
                count: risk.len(),
                failures: group.len() - risk.len(),
                key,
                mean_excess: ex.map(|p| p.0),
                se_excess: ex.map(|p| p.1),
                mean_risk: rk.map(|p| p.0),
                se_risk: rk.map(|p| p.1),
            }
        })
        .collect()
}

enum Source {
    Synthetic(Box<dyn SyntheticProblem>),
    Uci(Arc<LoadedData>),
}

impl Source {
    fn open(config: &ExperimentConfig) -> Result<Self> {
        Ok(match &config.problem {
            ProblemSpec::Sigmoid => Source::Synthetic(Box::new(SigmoidProblem::default())),
            ProblemSpec::GaussMix { d } => Source::Synthetic(Box::new(GaussMixProblem::new(*d)?)),
            ProblemSpec::Uci { path } => {
                let path = path.clone().unwrap_or_else(data::bundled_breast_cancer_path);
                Source::Uci(Arc::new(data::load_breast_cancer(&path, config.missing_policy)?))
            }
        })
    }

    /// Training sample, test set and Bayes classifier (if known).
    fn draw(&self, config: &ExperimentConfig, seed: u64) -> Result<(Dataset, Dataset, Option<SharedClassifier>)> {
        match self {
            Source::Synthetic(p) => {
                let sample = p.sample(config.n, derive(seed, &[tag("sample")]))?;
                let test = p.sample(config.test_n, derive(seed, &[tag("test")]))?;
                Ok((sample, test, Some(p.bayes())))
            }
            Source::Uci(d) => {
                let (sample, test) = data::train_test_resplit(&d.dataset, config.n, derive(seed, &[tag("resplit")]))?;
                Ok((sample, test, None))
            }
        }
    }

    fn sha256(&self) -> Option<String> {
        match self {
            Source::Synthetic(_) => None,
            Source::Uci(d) => Some(d.sha256.clone()),
        }
    }
}

fn plan_sha256(plan: &SplitPlan) -> String {
    let mut h = Sha256::new();
    for t in &plan.sets {
        h.update((t.len() as u64).to_le_bytes());
        for &i in t.indices() {
            h.update((i as u64).to_le_bytes());
        }
    }
    crate::types::hex(&h.finalize())
}

/// Test excess risk (when `bayes` is known) and test risk of `f`.
fn evaluate(f: &dyn Classifier, test: &Dataset, bayes_risk: Option<f64>) -> Result<(Option<f64>, f64)> {
    let risk = test_risk(f, test)?;
    Ok((bayes_risk.map(|b| risk - b), risk))
}

/// `min_G excess(G trained on data)`, with the minimizing rule's id. Ties go
/// to the rule listed first.
pub fn oracle_excess(
    family: &[SharedRule],
    data: &Dataset,
    bayes: &dyn Classifier,
    test: &Dataset,
) -> Result<(f64, String)> {
    if family.is_empty() {
        return Err(Error::EmptyFamily);
    }
    let bayes_risk = test_risk(bayes, test)?;
    let mut best: Option<(f64, usize)> = None;
    for (i, rule) in family.iter().enumerate() {
        let e = test_risk(rule.train(data)?.as_ref(), test)? - bayes_risk;
        if best.is_none_or(|(b, _)| e < b) {
            best = Some((e, i));
        }
    }
    let (e, i) = best.expect("non-empty family");
    Ok((e, family[i].id().to_owned()))
}

struct Replicate {
    rows: Vec<Row>,
    provenance: Option<Provenance>,
}

fn plan_label(setting: &Setting) -> String {
    match setting.resampling {
        Resampling::MonteCarlo { tau } => format!("mc:{tau}"),
        Resampling::VFold => format!("vfold:{}", setting.v),
    }
}

fn run_replicate(config: &ExperimentConfig, source: &Source, r: usize) -> Replicate {
    let seed = config.replicate_seed(r);
    match replicate_inner(config, source, r, seed) {
        Ok(rep) => rep,
        Err(e) => {
            let reason = e.to_string();
            let mut rows: Vec<Row> = config
                .settings
                .iter()
                .map(|s| Row { replicate: r, key: s.key(), outcome: Outcome::Failed { reason: reason.clone() } })
                .collect();
            rows.push(Row { replicate: r, key: RowKey::oracle(), outcome: Outcome::Failed { reason } });
            Replicate { rows, provenance: None }
        }
    }
}

fn replicate_inner(config: &ExperimentConfig, source: &Source, r: usize, seed: u64) -> Result<Replicate> {
    let (sample, test, bayes) = source.draw(config, seed)?;
    let family = config.family.build(sample.len())?;
    let bayes_risk = bayes.as_ref().map(|b| test_risk(b.as_ref(), &test)).transpose()?;
    let plan_seed = derive(seed, &[tag("plan")]);

    // One plan per tau (at the largest V requested, then truncated) and one
    // per V-fold V.
    let mut plan_specs: BTreeMap<String, SplitScheme> = BTreeMap::new();
    for s in &config.settings {
        let label = plan_label(s);
        let scheme = s.scheme_for_plan();
        let entry = plan_specs.entry(label).or_insert(scheme);
        if let (SplitScheme::MonteCarlo { v, .. }, SplitScheme::MonteCarlo { v: w, .. }) = (entry, scheme) {
            *v = (*v).max(w);
        }
    }
    let mut plans: BTreeMap<String, SplitPlan> = BTreeMap::new();
    for (label, scheme) in &plan_specs {
        plans.insert(label.clone(), make_plan(sample.len(), *scheme, plan_seed)?);
    }

    let full_fits: Vec<SharedClassifier> =
        family.par_iter().map(|g| g.train(&sample)).collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(config.settings.len() + 1);
    let mut tables: BTreeMap<String, ScoreTable> = BTreeMap::new();
    for s in &config.settings {
        let label = plan_label(s);
        let outcome = run_setting(config, s, &family, &full_fits, &sample, &test, bayes_risk, &plans[&label], &mut tables, &label, seed)
            .unwrap_or_else(|e| Outcome::Failed { reason: e.to_string() });
        rows.push(Row { replicate: r, key: s.key(), outcome });
    }

    let oracle = (|| -> Result<Outcome> {
        let mut best: Option<(f64, Option<f64>, f64, usize)> = None;
        for (i, f) in full_fits.iter().enumerate() {
            let (excess, risk) = evaluate(f.as_ref(), &test, bayes_risk)?;
            let loss = excess.unwrap_or(risk);
            if best.is_none_or(|b| loss < b.0) {
                best = Some((loss, excess, risk, i));
            }
        }
        let (_, excess, risk, i) = best.ok_or(Error::EmptyFamily)?;
        Ok(Outcome::Ok { excess, risk, selected: vec![family[i].id().to_owned()] })
    })()
    .unwrap_or_else(|e| Outcome::Failed { reason: e.to_string() });
    rows.push(Row { replicate: r, key: RowKey::oracle(), outcome: oracle });

    let provenance = Provenance {
        replicate: r,
        seed,
        sample_sha256: sample.fingerprint(),
        test_sha256: test.fingerprint(),
        plans: plans.iter().map(|(k, p)| (k.clone(), plan_sha256(p))).collect(),
    };
    Ok(Replicate { rows, provenance: Some(provenance) })
}

#[allow(clippy::too_many_arguments)]
fn run_setting(
    config: &ExperimentConfig,
    s: &Setting,
    family: &[SharedRule],
    full_fits: &[SharedClassifier],
    sample: &Dataset,
    test: &Dataset,
    bayes_risk: Option<f64>,
    full_plan: &SplitPlan,
    tables: &mut BTreeMap<String, ScoreTable>,
    label: &str,
    seed: u64,
) -> Result<Outcome> {
    let plan = full_plan.truncated(s.v);
    let (classifier, selected): (SharedClassifier, Vec<String>) = match s.scheme {
        Scheme::Subag => {
            let inner_tau = config.inner_tau.ok_or_else(|| {
                Error::InvalidParameter("subag needs an explicit inner tau".into())
            })?;
            let choices = subagged_choices(family, sample, &plan, inner_tau, derive(seed, &[tag("subag")]))?;
            let ids = choices.iter().map(|c| c.rule_id.clone()).collect();
            let members = choices.into_iter().map(|c| c.classifier).collect();
            (Arc::new(MajorityVoteClassifier::new(members, sample.class_count())?), ids)
        }
        _ => {
            let full = match tables.get(label) {
                Some(t) => t.clone(),
                None => {
                    let widest = config
                        .settings
                        .iter()
                        .filter(|o| o.scheme != Scheme::Subag && plan_label(o) == label)
                        .map(|o| o.v)
                        .max()
                        .unwrap_or(s.v);
                    let t = score_plan(family, sample, &full_plan.truncated(widest))?;
                    tables.insert(label.to_owned(), t.clone());
                    t
                }
            };
            let table = full.prefix(s.v);
            match s.scheme {
                Scheme::Holdout => {
                    let c = &table.splits[0];
                    (c.classifier.clone(), vec![c.rule_id.clone()])
                }
                Scheme::Agghoo => {
                    let ids = table.splits.iter().map(|c| c.rule_id.clone()).collect();
                    (Arc::new(table.agghoo(sample.class_count())), ids)
                }
                Scheme::Cv => {
                    let i = argmin_by_id(&table.cv_scores(), family);
                    (full_fits[i].clone(), vec![family[i].id().to_owned()])
                }
                Scheme::Subag => unreachable!(),
            }
        }
    };
    let (excess, risk) = evaluate(classifier.as_ref(), test, bayes_risk)?;
    Ok(Outcome::Ok { excess, risk, selected })
}

/// Runs every replicate (concurrently, reduced in replicate order) and
/// aggregates.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let started = Instant::now();
    let source = Source::open(config)?;
    let n_for_family = config.n;
    let family_size = config.family.build(n_for_family)?.len();
    let reps: Vec<Replicate> =
        (0..config.replicates).into_par_iter().map(|r| run_replicate(config, &source, r)).collect();
    let mut rows = Vec::new();
    let mut provenance = Vec::new();
    for rep in reps {
        rows.extend(rep.rows);
        provenance.push(rep.provenance);
    }
    let aggregates = aggregate_rows(&rows);
    Ok(ExperimentReport {
        config: config.clone(),
        family_size,
        rows,
        aggregates,
        provenance,
        data_sha256: source.sha256(),
        runtime_secs: started.elapsed().as_secs_f64(),
        threads: rayon::current_num_threads(),
    })
}

/// Per-replicate inputs of the oracle-inequality check: Agghoo excess risk
/// and `min_G` excess of `G` trained on the first training set only.
#[derive(Debug, Clone, Serialize)]
pub struct OracleBoundSamples {
    pub agghoo: Vec<f64>,
    pub oracle: Vec<f64>,
    pub family_size: usize,
    /// Validation-set size `n - floor(tau n)`.
    pub p: usize,
}

pub fn oracle_bound_samples(config: &ExperimentConfig, tau: f64, v: usize) -> Result<OracleBoundSamples> {
    let setting = Setting::new(Scheme::Agghoo, Resampling::MonteCarlo { tau }, v);
    setting.validate(config.n, None)?;
    let source = Source::open(config)?;
    if matches!(source, Source::Uci(_)) {
        return Err(Error::InvalidParameter("the oracle bound needs a known Bayes classifier".into()));
    }
    let pairs: Vec<(f64, f64)> = (0..config.replicates)
        .into_par_iter()
        .map(|r| {
            let seed = config.replicate_seed(r);
            let (sample, test, bayes) = source.draw(config, seed)?;
            let bayes = bayes.expect("synthetic problem");
            let family = config.family.build(sample.len())?;
            let plan = make_plan(sample.len(), setting.scheme_for_plan(), derive(seed, &[tag("plan")]))?;
            let table = score_plan(&family, &sample, &plan)?;
            let bayes_risk = test_risk(bayes.as_ref(), &test)?;
            let agg = test_risk(&table.agghoo(sample.class_count()), &test)? - bayes_risk;
            let (oracle, _) = oracle_excess(&family, &sample.subset(&plan.sets[0]), bayes.as_ref(), &test)?;
            Ok((agg, oracle))
        })
        .collect::<Result<Vec<_>>>()?;
    let (agghoo, oracle) = pairs.into_iter().unzip();
    Ok(OracleBoundSamples {
        agghoo,
        oracle,
        family_size: config.family.build(config.n)?.len(),
        p: config.n - mc_train_size(config.n, tau),
    })
}

/// One-sided paired t-test of `mean(a - b) > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairedTest {
    pub pairs: usize,
    pub mean_diff: f64,
    pub se_diff: f64,
    pub t: f64,
    pub p_value: f64,
}

pub fn paired_one_sided(a: &[f64], b: &[f64]) -> Result<PairedTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidParameter("paired test needs two equal samples of size >= 2".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (mean_diff, se_diff) = crate::theory::mean_se(&d);
    let (t, p_value) = if se_diff > 0.0 {
        let t = mean_diff / se_diff;
        let dist = StudentsT::new(0.0, 1.0, (d.len() - 1) as f64)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        (t, 1.0 - dist.cdf(t))
    } else if mean_diff > 0.0 {
        (f64::INFINITY, 0.0)
    } else {
        (0.0, 1.0)
    };
    Ok(PairedTest { pairs: d.len(), mean_diff, se_diff, t, p_value })
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v}")).unwrap_or_default()
}

pub const CSV_HEADER: [&str; 7] = ["replicate", "scheme", "tau", "V", "excess_risk", "risk", "selected_rule_ids"];
pub const AGG: &str = "AGG";

/// Per-replicate rows, then two `AGG` rows per group (mean, then se).
/// Failed rows carry `NA` and the reason.
pub fn write_csv(report: &ExperimentReport, out: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for row in &report.rows {
        let (excess, risk, sel) = match &row.outcome {
            Outcome::Ok { excess, risk, selected } => (fmt_opt(*excess), format!("{risk}"), selected.join(";")),
            Outcome::Failed { reason } => ("NA".into(), "NA".into(), format!("FAILED: {reason}")),
        };
        w.write_record([row.replicate.to_string(), row.key.scheme.clone(), row.key.tau.clone(), row.key.v.clone(), excess, risk, sel])
            .map_err(csv_err)?;
    }
    for a in &report.aggregates {
        for (stat, ex, rk) in [("mean", a.mean_excess, a.mean_risk), ("se", a.se_excess, a.se_risk)] {
            w.write_record([AGG.into(), a.key.scheme.clone(), a.key.tau.clone(), a.key.v.clone(), fmt_opt(ex), fmt_opt(rk), stat.to_string()])
                .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file(report: &ExperimentReport, path: &Path) -> Result<()> {
    write_csv(report, std::io::BufWriter::new(std::fs::File::create(path)?))
}

/// Rows and `AGG` statistics read back from [`write_csv`] output. The
/// aggregate pairs are `(mean, se)` of excess risk and of risk per group.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvContents {
    pub rows: Vec<Row>,
    pub agg: Vec<(RowKey, [Option<f64>; 4])>,
}

pub fn read_csv(input: impl std::io::Read) -> Result<CsvContents> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    let mut agg: Vec<(RowKey, [Option<f64>; 4])> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Malformed { line, reason: e.to_string() })?;
        let bad = |reason: &str| Error::Malformed { line, reason: reason.into() };
        if rec.len() != CSV_HEADER.len() {
            return Err(bad("wrong column count"));
        }
        let num = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                return Ok(None);
            }
            s.parse().map(Some).map_err(|_| bad("bad number"))
        };
        let key = RowKey { scheme: rec[1].into(), tau: rec[2].into(), v: rec[3].into() };
        if &rec[0] == AGG {
            let (ex, rk) = (num(&rec[4])?, num(&rec[5])?);
            let slot = match agg.iter_mut().find(|(k, _)| *k == key) {
                Some((_, s)) => s,
                None => {
                    agg.push((key, [None; 4]));
                    &mut agg.last_mut().expect("just pushed").1
                }
            };
            match &rec[6] {
                "mean" => (slot[0], slot[2]) = (ex, rk),
                "se" => (slot[1], slot[3]) = (ex, rk),
                _ => return Err(bad("unknown AGG statistic")),
            }
            continue;
        }
        let replicate = rec[0].parse().map_err(|_| bad("bad replicate"))?;
        let outcome = if &rec[5] == "NA" {
            Outcome::Failed { reason: rec[6].trim_start_matches("FAILED: ").into() }
        } else {
            Outcome::Ok {
                excess: num(&rec[4])?,
                risk: num(&rec[5])?.ok_or_else(|| bad("missing risk"))?,
                selected: if rec[6].is_empty() { Vec::new() } else { rec[6].split(';').map(String::from).collect() },
            }
        };
        rows.push(Row { replicate, key, outcome });
    }
    Ok(CsvContents { rows, agg })
}

/// Run-dependent details kept out of the CSV so that it stays byte-stable.
#[derive(Debug, Clone, Serialize)]
pub struct Metadata<'a> {
    pub version: &'static str,
    pub config: &'a ExperimentConfig,
    pub family_size: usize,
    pub failures: usize,
    pub runtime_secs: f64,
    pub threads: usize,
    pub unix_time: u64,
    pub data_sha256: Option<&'a str>,
    pub provenance: &'a [Option<Provenance>],
}

pub fn write_metadata(report: &ExperimentReport, path: &Path) -> Result<()> {
    let meta = Metadata {
        version: env!("CARGO_PKG_VERSION"),
        config: &report.config,
        family_size: report.family_size,
        failures: report.failures(),
        runtime_secs: report.runtime_secs,
        threads: report.threads,
        unix_time: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        data_sha256: report.data_sha256.as_deref(),
        provenance: &report.provenance,
    };
    std::fs::write(path, serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Line chart of mean loss against tau, one series per (scheme, V), error
/// bars of two standard errors, oracle as a dashed line. V-fold settings sit
/// at `tau = 1 - 1/V`. Plots excess risk when known, else risk.
pub fn render_svg(report: &ExperimentReport) -> String {
    let use_excess = report.aggregates.iter().any(|a| a.mean_excess.is_some());
    let stat = |a: &Aggregate| if use_excess { a.mean_excess.zip(a.se_excess) } else { a.mean_risk.zip(a.se_risk) };

    let mut series: BTreeMap<(String, String), Vec<(f64, f64, f64)>> = BTreeMap::new();
    for a in &report.aggregates {
        if a.key.scheme == ORACLE {
            continue;
        }
        let Some((m, se)) = stat(a) else { continue };
        let v: usize = a.key.v.parse().unwrap_or(1);
        let tau = match Resampling::parse_label(&a.key.tau) {
            Ok(Resampling::MonteCarlo { tau }) => tau,
            _ => 1.0 - 1.0 / v as f64,
        };
        let name = if a.key.tau == "vfold" { format!("{}-vfold", a.key.scheme) } else { a.key.scheme.clone() };
        series.entry((name, a.key.v.clone())).or_default().push((tau, m, se));
    }
    for pts in series.values_mut() {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    let oracle = report.oracle().and_then(stat);

    let (w, h) = (720.0, 440.0);
    let (left, right, top, bottom) = (70.0, 190.0, 30.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for pts in series.values() {
        for &(_, m, se) in pts {
            lo = lo.min(m - 2.0 * se);
            hi = hi.max(m + 2.0 * se);
        }
    }
    if let Some((m, _)) = oracle {
        lo = lo.min(m);
        hi = hi.max(m);
    }
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    lo = lo.min(0.0);
    if hi <= lo {
        hi = lo + 1.0;
    }
    hi += 0.05 * (hi - lo);
    let sx = |t: f64| left + t * pw;
    let sy = |y: f64| top + (hi - y) / (hi - lo) * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=10 {
        let t = i as f64 / 10.0;
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{y0:.2}" x2="{x:.2}" y2="{y1:.2}" stroke="black"/><text x="{x:.2}" y="{yt:.2}" text-anchor="middle">{t:.1}</text>"#,
            x = sx(t),
            y0 = top + ph,
            y1 = top + ph + 5.0,
            yt = top + ph + 18.0
        );
    }
    for i in 0..=5 {
        let y = lo + (hi - lo) * i as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<line x1="{x0:.2}" y1="{py:.2}" x2="{left}" y2="{py:.2}" stroke="black"/><text x="{xt:.2}" y="{pyt:.2}" text-anchor="end">{y:.4}</text>"#,
            x0 = left - 5.0,
            py = sy(y),
            xt = left - 8.0,
            pyt = sy(y) + 4.0
        );
    }
    let ylabel = if use_excess { "mean excess risk" } else { "mean test risk" };
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">tau</text>"#, left + pw / 2.0, h - 12.0);
    let _ = writeln!(
        s,
        r#"<text x="16" y="{y:.2}" text-anchor="middle" transform="rotate(-90 16 {y:.2})">{ylabel}</text>"#,
        y = top + ph / 2.0
    );
    let title = format!("{} / {} / n = {}", report.config.problem, report.config.family, report.config.n);
    let _ = writeln!(s, r#"<text x="{left}" y="18">{}</text>"#, esc(&title));

    let mut legend_y = top + 10.0;
    let legend_x = left + pw + 15.0;
    if let Some((m, _)) = oracle {
        let _ = writeln!(
            s,
            r#"<line x1="{left}" y1="{y:.2}" x2="{x2:.2}" y2="{y:.2}" stroke="gray" stroke-dasharray="6 4"/>"#,
            y = sy(m),
            x2 = left + pw
        );
        let _ = writeln!(
            s,
            r#"<line x1="{legend_x}" y1="{legend_y}" x2="{x2}" y2="{legend_y}" stroke="gray" stroke-dasharray="6 4"/><text x="{xt}" y="{yt}">oracle</text>"#,
            x2 = legend_x + 25.0,
            xt = legend_x + 30.0,
            yt = legend_y + 4.0
        );
        legend_y += 18.0;
    }
    for (i, ((name, v), pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = pts.iter().map(|&(t, m, _)| format!("{:.2},{:.2}", sx(t), sy(m))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, path.join(" "));
        for &(t, m, se) in pts {
            let (x, y0, y1) = (sx(t), sy(m - 2.0 * se), sy(m + 2.0 * se));
            let _ = writeln!(
                s,
                r#"<line x1="{x:.2}" y1="{y0:.2}" x2="{x:.2}" y2="{y1:.2}" stroke="{color}"/><circle cx="{x:.2}" cy="{ym:.2}" r="2.5" fill="{color}"/>"#,
                ym = sy(m)
            );
        }
        let _ = writeln!(
            s,
            r#"<line x1="{legend_x}" y1="{legend_y}" x2="{x2}" y2="{legend_y}" stroke="{color}" stroke-width="1.5"/><text x="{xt}" y="{yt}">{label}</text>"#,
            x2 = legend_x + 25.0,
            xt = legend_x + 30.0,
            yt = legend_y + 4.0,
            label = esc(&format!("{name}, V={v}"))
        );
        legend_y += 18.0;
    }
    s.push_str("</svg>\n");
    s
}

pub fn write_svg(report: &ExperimentReport, path: &Path) -> Result<()> {
    std::fs::write(path, render_svg(report))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(settings: Vec<Setting>) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(ProblemSpec::Sigmoid, FamilySpec::Knn { k_max: 9 }, settings);
        c.n = 120;
        c.test_n = 300;
        c.replicates = 6;
        c.master_seed = 3;
        c
    }

    fn mc(tau: f64) -> Resampling {
        Resampling::MonteCarlo { tau }
    }

    #[test]
    fn spec_strings_round_trip() {
        for s in ["sigmoid", "gaussmix:7", "gaussmix:50", "uci", "uci:/tmp/x.data"] {
            assert_eq!(s.parse::<ProblemSpec>().unwrap().to_string(), s);
        }
        assert_eq!("gaussmix".parse::<ProblemSpec>().unwrap(), ProblemSpec::GaussMix { d: 7 });
        assert!("gaussmix:3".parse::<ProblemSpec>().is_err());
        for s in ["knn:29", "lp:3:20", "cart:1e-4:1.5:40"] {
            let f: FamilySpec = s.parse().unwrap();
            assert_eq!(f.to_string().parse::<FamilySpec>().unwrap(), f);
        }
        assert_eq!("knn-grid".parse::<FamilySpec>().unwrap(), FamilySpec::Knn { k_max: 29 });
        assert!("forest".parse::<FamilySpec>().is_err());
    }

    #[test]
    fn expansion_respects_scheme_constraints() {
        let s = expand_settings(
            &[Scheme::Agghoo, Scheme::Holdout],
            &[mc(0.5), Resampling::VFold],
            &[1, 5],
        );
        assert_eq!(
            s,
            vec![
                Setting::new(Scheme::Agghoo, mc(0.5), 1),
                Setting::new(Scheme::Agghoo, mc(0.5), 5),
                Setting::new(Scheme::Agghoo, Resampling::VFold, 5),
                Setting::new(Scheme::Holdout, mc(0.5), 1),
            ]
        );
    }

    #[test]
    fn invalid_settings_are_rejected() {
        let c = small(vec![Setting::new(Scheme::Holdout, mc(0.5), 3)]);
        assert!(run_experiment(&c).is_err());
        let c = small(vec![Setting::new(Scheme::Agghoo, mc(0.001), 3)]);
        assert!(run_experiment(&c).is_err());
        let c = small(vec![Setting::new(Scheme::Subag, mc(0.5), 3)]);
        assert!(run_experiment(&c).is_err(), "subag without inner tau");
    }

    #[test]
    fn v1_agghoo_equals_holdout_and_rows_are_complete() {
        let c = small(vec![
            Setting::new(Scheme::Agghoo, mc(0.6), 1),
            Setting::new(Scheme::Holdout, mc(0.6), 1),
            Setting::new(Scheme::Cv, mc(0.6), 4),
            Setting::new(Scheme::Agghoo, mc(0.6), 4),
        ]);
        let rep = run_experiment(&c).unwrap();
        assert_eq!(rep.rows.len(), (c.settings.len() + 1) * c.replicates);
        assert_eq!(rep.failures(), 0);
        let a = rep.losses(&c.settings[0].key());
        let h = rep.losses(&c.settings[1].key());
        assert_eq!(a, h);
        // each replicate shares its plan: same label, one hash
        for p in rep.provenance.iter().flatten() {
            assert_eq!(p.plans.len(), 1);
        }
    }

    #[test]
    fn single_rule_family_makes_cv_equal_oracle() {
        let mut c = small(vec![
            Setting::new(Scheme::Cv, mc(0.5), 3),
            Setting::new(Scheme::Cv, Resampling::VFold, 3),
        ]);
        c.family = FamilySpec::Knn { k_max: 1 };
        let rep = run_experiment(&c).unwrap();
        let oracle = rep.losses(&RowKey::oracle());
        assert_eq!(rep.losses(&c.settings[0].key()), oracle);
        assert_eq!(rep.losses(&c.settings[1].key()), oracle);
    }

    #[test]
    fn aggregates_match_direct_computation() {
        let c = small(vec![Setting::new(Scheme::Agghoo, mc(0.7), 3)]);
        let rep = run_experiment(&c).unwrap();
        let xs: Vec<f64> = rep.losses(&c.settings[0].key()).into_iter().map(Option::unwrap).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt();
        let a = rep.aggregate(&c.settings[0].key()).unwrap();
        assert!((a.mean_excess.unwrap() - mean).abs() < 1e-15);
        assert!((a.se_excess.unwrap() - sd / (xs.len() as f64).sqrt()).abs() < 1e-15);
        assert_eq!(a.count, c.replicates);
    }

    #[test]
    fn replicate_results_do_not_depend_on_other_settings() {
        let s = Setting::new(Scheme::Agghoo, mc(0.7), 3);
        let alone = run_experiment(&small(vec![s])).unwrap();
        let mixed = run_experiment(&small(vec![
            Setting::new(Scheme::Agghoo, mc(0.7), 8),
            s,
            Setting::new(Scheme::Holdout, mc(0.5), 1),
        ]))
        .unwrap();
        assert_eq!(alone.losses(&s.key()), mixed.losses(&s.key()));
    }

    #[test]
    fn subag_runs_with_inner_tau() {
        let mut c = small(vec![Setting::new(Scheme::Subag, mc(0.7), 3)]);
        c.inner_tau = Some(0.6);
        let rep = run_experiment(&c).unwrap();
        assert_eq!(rep.failures(), 0);
        match &rep.rows[0].outcome {
            Outcome::Ok { selected, .. } => assert_eq!(selected.len(), 3),
            o => panic!("{o:?}"),
        }
    }

    #[test]
    fn csv_round_trip_reproduces_aggregates() {
        let c = small(vec![Setting::new(Scheme::Agghoo, mc(0.7), 3), Setting::new(Scheme::Cv, Resampling::VFold, 4)]);
        let rep = run_experiment(&c).unwrap();
        let mut buf = Vec::new();
        write_csv(&rep, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("replicate,scheme,tau,V,excess_risk,risk,selected_rule_ids\n"));
        assert_eq!(text.lines().count(), 1 + rep.rows.len() + 2 * rep.aggregates.len());
        let back = read_csv(&buf[..]).unwrap();
        assert_eq!(back.rows, rep.rows);
        let again = aggregate_rows(&back.rows);
        for ((key, stats), a) in back.agg.iter().zip(&again) {
            assert_eq!(key, &a.key);
            assert_eq!(*stats, [a.mean_excess, a.se_excess, a.mean_risk, a.se_risk]);
        }
    }

    #[test]
    fn failures_are_recorded() {
        let rows = vec![
            Row { replicate: 0, key: RowKey::oracle(), outcome: Outcome::Failed { reason: "boom, twice".into() } },
            Row {
                replicate: 1,
                key: RowKey::oracle(),
                outcome: Outcome::Ok { excess: Some(0.25), risk: 0.5, selected: vec!["a".into()] },
            },
        ];
        let agg = aggregate_rows(&rows);
        assert_eq!((agg[0].count, agg[0].failures), (1, 1));
        let rep = ExperimentReport {
            config: small(vec![]),
            family_size: 1,
            rows: rows.clone(),
            aggregates: agg,
            provenance: vec![],
            data_sha256: None,
            runtime_secs: 0.0,
            threads: 1,
        };
        let mut buf = Vec::new();
        write_csv(&rep, &mut buf).unwrap();
        assert_eq!(read_csv(&buf[..]).unwrap().rows, rows);
    }

    #[test]
    fn paired_test_direction() {
        let a = [0.3, 0.4, 0.35, 0.5, 0.45];
        let b = [0.1, 0.2, 0.1, 0.3, 0.2];
        let t = paired_one_sided(&a, &b).unwrap();
        assert!(t.p_value < 0.01 && t.mean_diff > 0.0);
        let back = paired_one_sided(&b, &a).unwrap();
        assert!(back.p_value > 0.99);
        assert!((t.p_value + back.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn oracle_with_bayes_in_family_is_zero() {
        use crate::types::FixedRule;
        let p = SigmoidProblem::default();
        let sample = p.sample(50, 1).unwrap();
        let test = p.sample(400, 2).unwrap();
        let family: Vec<SharedRule> = vec![
            Arc::new(crate::types::ConstantRule::new(crate::types::Label(0))),
            Arc::new(FixedRule::new("bayes", p.bayes())),
        ];
        let (e, id) = oracle_excess(&family, &sample, p.bayes().as_ref(), &test).unwrap();
        assert_eq!((e, id.as_str()), (0.0, "bayes"));
    }

    #[test]
    fn svg_lists_every_series() {
        let c = small(vec![
            Setting::new(Scheme::Agghoo, mc(0.5), 3),
            Setting::new(Scheme::Agghoo, mc(0.8), 3),
            Setting::new(Scheme::Holdout, mc(0.5), 1),
        ]);
        let rep = run_experiment(&c).unwrap();
        let svg = render_svg(&rep);
        assert!(svg.contains("agghoo, V=3") && svg.contains("holdout, V=1") && svg.contains("oracle"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }
}
