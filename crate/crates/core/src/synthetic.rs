//! Synthetic benchmark distributions with closed-form regression functions.
//!
//! * Sigmoid problem: `X ~ U([0,1]^2)`, `P(Y=1|X=x) = sigma((g(x) - b) / lambda)`
//!   with `g(u, v) = exp(-(u^2 + v)^3) + u^2 + v^2`, `b = 1.18`, `lambda = 0.05`.
//! * Gaussian mixture: `Y ~ B(1/2)`, `eps ~ B(0.7)`; given `(Y, eps)` the
//!   coordinates are independent unit-variance normals with mean `j * Y` on
//!   coordinates 1..=3 when `eps = 1` and mean `(j - 3) * Y` on coordinates
//!   4..=6 when `eps = 0`; every other mean is 0.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::types::{Classifier, Dataset, Label, SharedClassifier};

/// A distribution we can sample from and whose Bayes classifier is known.
pub trait SyntheticProblem: Send + Sync {
    fn name(&self) -> String;
    fn dim(&self) -> usize;
    /// `P(Y = 1 | X = x)`.
    fn eta(&self, x: &[f64]) -> f64;
    fn sample(&self, n: usize, seed: u64) -> Result<Dataset>;

    fn bayes(&self) -> SharedClassifier;
}

fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmoidProblem {
    pub b: f64,
    pub lambda: f64,
}

impl Default for SigmoidProblem {
    fn default() -> Self {
        Self { b: 1.18, lambda: 0.05 }
    }
}

impl SigmoidProblem {
    pub fn g(u: f64, v: f64) -> f64 {
        (-(u * u + v).powi(3)).exp() + u * u + v * v
    }

    pub fn bayes_label(&self, x: &[f64]) -> Label {
        Label(u32::from(Self::g(x[0], x[1]) >= self.b))
    }
}

impl SyntheticProblem for SigmoidProblem {
    fn name(&self) -> String {
        "sigmoid".into()
    }

    fn dim(&self) -> usize {
        2
    }

    fn eta(&self, x: &[f64]) -> f64 {
        sigmoid((Self::g(x[0], x[1]) - self.b) / self.lambda)
    }

    fn sample(&self, n: usize, seed: u64) -> Result<Dataset> {
        sample_sigmoid_with(self, n, seed)
    }

    fn bayes(&self) -> SharedClassifier {
        let p = *self;
        Arc::new(move |x: &[f64]| p.bayes_label(x))
    }
}

fn sample_sigmoid_with(p: &SigmoidProblem, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidParameter("sample size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x = [rng.gen::<f64>(), rng.gen::<f64>()];
        let y = rng.gen::<f64>() < p.eta(&x);
        features.extend_from_slice(&x);
        labels.push(Label(u32::from(y)));
    }
    Dataset::from_flat(features, 2, labels, 2)
}

pub fn sample_sigmoid(n: usize, seed: u64) -> Result<Dataset> {
    sample_sigmoid_with(&SigmoidProblem::default(), n, seed)
}

pub fn bayes_sigmoid() -> SharedClassifier {
    SigmoidProblem::default().bayes()
}

/// Composite Simpson weights 1, 4, 2, 4, ..., 4, 1 (times h/3).
fn simpson_weight(i: usize, m: usize) -> f64 {
    if i == 0 || i == m {
        1.0
    } else if i % 2 == 1 {
        4.0
    } else {
        2.0
    }
}

/// Tensor-product composite Simpson rule over `[0,1]^2` with `intervals`
/// subintervals per axis (rounded up to even).
pub fn simpson_2d(intervals: usize, f: impl Fn(f64, f64) -> f64) -> f64 {
    let m = intervals.max(2) + intervals % 2;
    let h = 1.0 / m as f64;
    let mut total = 0.0;
    for i in 0..=m {
        let u = i as f64 * h;
        let mut row = 0.0;
        for j in 0..=m {
            row += simpson_weight(j, m) * f(u, j as f64 * h);
        }
        total += simpson_weight(i, m) * row;
    }
    total * h * h / 9.0
}

/// Bayes risk `E min(eta, 1 - eta)` of the sigmoid problem by 2-D Simpson.
pub fn bayes_risk_sigmoid(grid_size: usize) -> Result<f64> {
    if grid_size < 100 {
        return Err(Error::InvalidParameter("grid size must be at least 100".into()));
    }
    let p = SigmoidProblem::default();
    Ok(simpson_2d(grid_size, |u, v| {
        let e = p.eta(&[u, v]);
        e.min(1.0 - e)
    }))
}

pub const DEFAULT_SIGMOID_GRID: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussMixProblem {
    pub d: usize,
}

const P_EPS: f64 = 0.7;
/// Sum of squared informative means, `1 + 4 + 9`.
const HALF_MEAN_SQ: f64 = 7.0;

impl GaussMixProblem {
    pub fn new(d: usize) -> Result<Self> {
        if d < 6 {
            return Err(Error::InvalidParameter(format!("dimension {d} < 6")));
        }
        Ok(Self { d })
    }

    /// `ln(N_1(x) / N_0(x))`, where `N_y` is the class-conditional density.
    pub fn log_ratio(x: &[f64]) -> f64 {
        let a = P_EPS.ln() + (x[0] + 2.0 * x[1] + 3.0 * x[2]) - HALF_MEAN_SQ;
        let b = (1.0 - P_EPS).ln() + (x[3] + 2.0 * x[4] + 3.0 * x[5]) - HALF_MEAN_SQ;
        let m = a.max(b);
        m + ((a - m).exp() + (b - m).exp()).ln()
    }

    fn means(y: bool, eps: bool, j: usize) -> f64 {
        match (y, eps, j) {
            (true, true, 0..=2) => (j + 1) as f64,
            (true, false, 3..=5) => (j - 2) as f64,
            _ => 0.0,
        }
    }
}

impl SyntheticProblem for GaussMixProblem {
    fn name(&self) -> String {
        format!("gaussmix{}", self.d)
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn eta(&self, x: &[f64]) -> f64 {
        eta_gaussmix(x)
    }

    fn sample(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::InvalidParameter("sample size must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut features = Vec::with_capacity(self.d * n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let y = rng.gen_bool(0.5);
            let eps = rng.gen_bool(P_EPS);
            for j in 0..self.d {
                let z: f64 = rng.sample(StandardNormal);
                features.push(z + Self::means(y, eps, j));
            }
            labels.push(Label(u32::from(y)));
        }
        Dataset::from_flat(features, self.d, labels, 2)
    }

    fn bayes(&self) -> SharedClassifier {
        Arc::new(GaussMixBayes)
    }
}

/// `P(Y = 1 | X = x)`; depends on coordinates 1..=6 only.
pub fn eta_gaussmix(x: &[f64]) -> f64 {
    sigmoid(GaussMixProblem::log_ratio(x))
}

#[derive(Debug, Clone, Copy)]
pub struct GaussMixBayes;

impl Classifier for GaussMixBayes {
    fn predict(&self, x: &[f64]) -> Label {
        Label(u32::from(GaussMixProblem::log_ratio(x) >= 0.0))
    }
}

pub fn sample_gaussmix(n: usize, d: usize, seed: u64) -> Result<Dataset> {
    GaussMixProblem::new(d)?.sample(n, seed)
}

pub fn bayes_gaussmix(d: usize) -> Result<SharedClassifier> {
    Ok(GaussMixProblem::new(d)?.bayes())
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

/// Bayes risk `E min(eta, 1 - eta)` of the mixture by Monte Carlo.
///
/// Only the six informative coordinates are drawn: the others do not enter
/// `eta`, so the estimate is the same for every `d >= 6` at a fixed seed.
pub fn bayes_risk_gaussmix(d: usize, mc_n: usize, seed: u64) -> Result<Estimate> {
    GaussMixProblem::new(d)?;
    if mc_n < 2 {
        return Err(Error::InvalidParameter("need at least two draws".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    let mut x = [0.0; 6];
    for _ in 0..mc_n {
        let y = rng.gen_bool(0.5);
        let eps = rng.gen_bool(P_EPS);
        for (j, v) in x.iter_mut().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            *v = z + GaussMixProblem::means(y, eps, j);
        }
        let e = eta_gaussmix(&x);
        let m = e.min(1.0 - e);
        sum += m;
        sum_sq += m * m;
    }
    let n = mc_n as f64;
    let mean = sum / n;
    let var = (sum_sq - n * mean * mean) / (n - 1.0);
    Ok(Estimate { value: mean, se: (var.max(0.0) / n).sqrt() })
}
