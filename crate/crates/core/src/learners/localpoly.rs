//! Local-polynomial plug-in classifiers for binary labels.
//!
//! At a query point `x`, a polynomial of total degree at most `degree` in
//! `u = (X_i - x) / h` is fitted to the labels by least squares with Gaussian
//! kernel weights `K(u_i)`. The estimate of `P(Y = 1 | X = x)` is the constant
//! coefficient, or 0 when the smallest singular value of the normalized
//! moment matrix `B = (n h^d)^-1 sum_i u_i^(s1+s2) K(u_i)` is below
//! `1 / ln n`. Monomials are in graded lexicographic order.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::types::{Classifier, Dataset, Label, LearningRule, SharedClassifier, SharedRule};

/// Exponent vectors with total degree `<= degree` in `d` variables, graded
/// lexicographic.
pub fn monomials(d: usize, degree: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    for total in 0..=degree {
        let mut current = vec![0u32; d];
        push_degree(&mut out, &mut current, 0, total as u32);
    }
    out
}

fn push_degree(out: &mut Vec<Vec<u32>>, current: &mut Vec<u32>, pos: usize, left: u32) {
    if pos + 1 == current.len() {
        current[pos] = left;
        out.push(current.clone());
        return;
    }
    for e in (0..=left).rev() {
        current[pos] = e;
        push_degree(out, current, pos + 1, left - e);
    }
    current[pos] = 0;
}

/// Standard Gaussian density on `R^d`.
fn gaussian_kernel(u: &[f64]) -> f64 {
    let sq: f64 = u.iter().map(|v| v * v).sum();
    (2.0 * PI).powf(-(u.len() as f64) / 2.0) * (-0.5 * sq).exp()
}

/// Moment matrix, right-hand side and smallest singular value at `x`.
#[derive(Debug, Clone)]
pub struct LocalFit {
    pub moments: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub lambda_min: f64,
}

pub fn local_fit(degree: usize, h: f64, data: &Dataset, x: &[f64]) -> LocalFit {
    let d = data.dim();
    let basis = monomials(d, degree);
    let p = basis.len();
    let scale = 1.0 / (data.len() as f64 * h.powi(d as i32));
    let mut moments = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    let mut u = vec![0.0; d];
    let mut phi = vec![0.0; p];
    for i in 0..data.len() {
        for (k, (&xi, &x0)) in data.row(i).iter().zip(x).enumerate() {
            u[k] = (xi - x0) / h;
        }
        let w = gaussian_kernel(&u);
        if w == 0.0 {
            continue;
        }
        for (s, e) in basis.iter().enumerate() {
            phi[s] = e.iter().zip(&u).map(|(&p, &v)| v.powi(p as i32)).product();
        }
        let y = data.label(i).0 as f64;
        for a in 0..p {
            rhs[a] += phi[a] * w * y;
            for b in a..p {
                moments[(a, b)] += phi[a] * phi[b] * w;
            }
        }
    }
    for a in 0..p {
        rhs[a] *= scale;
        for b in a..p {
            moments[(a, b)] *= scale;
            moments[(b, a)] = moments[(a, b)];
        }
    }
    let lambda_min = moments.singular_values().min();
    LocalFit { moments, rhs, lambda_min }
}

/// Guard threshold `1 / ln n` (infinite for `n = 1`).
pub fn guard_threshold(n: usize) -> f64 {
    1.0 / (n as f64).ln()
}

/// Local-polynomial estimate of `P(Y = 1 | X = x)`.
pub fn localpoly_eta(degree: usize, h: f64, data: &Dataset, x: &[f64]) -> f64 {
    let fit = local_fit(degree, h, data, x);
    if !(fit.lambda_min >= guard_threshold(data.len())) {
        return 0.0;
    }
    let svd = fit.moments.svd(true, true);
    let eps = fit.lambda_min * 1e-3;
    match svd.solve(&fit.rhs, eps) {
        Ok(coef) => coef[0],
        Err(_) => 0.0,
    }
}

/// `G^LP_{degree, h}`: plug-in classifier `1{eta >= 1/2}`.
#[derive(Debug, Clone)]
pub struct LocalPolyRule {
    degree: usize,
    h: f64,
    id: String,
}

impl LocalPolyRule {
    pub fn new(degree: usize, h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidParameter(format!("bandwidth {h} must be positive")));
        }
        Ok(Self { degree, h, id: format!("lp-l{degree:02}-h{h:016.10}") })
    }

    /// Rule with bandwidth `1 / k`; the id orders by `(degree, k)`.
    pub fn with_inverse_bandwidth(degree: usize, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParameter("k must be positive".into()));
        }
        let mut r = Self::new(degree, 1.0 / k as f64)?;
        r.id = format!("lp-l{degree:02}-k{k:04}");
        Ok(r)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn bandwidth(&self) -> f64 {
        self.h
    }
}

impl LearningRule for LocalPolyRule {
    fn id(&self) -> &str {
        &self.id
    }

    fn train(&self, data: &Dataset) -> Result<SharedClassifier> {
        if data.class_count() != 2 {
            return Err(Error::InvalidParameter("local-polynomial rules need binary labels".into()));
        }
        if self.degree > data.len() {
            return Err(Error::InvalidParameter(format!(
                "degree {} exceeds n = {}",
                self.degree,
                data.len()
            )));
        }
        Ok(Arc::new(LocalPolyClassifier { degree: self.degree, h: self.h, data: data.clone() }))
    }
}

pub fn localpoly_rule(degree: usize, h: f64) -> Result<LocalPolyRule> {
    LocalPolyRule::new(degree, h)
}

#[derive(Debug, Clone)]
pub struct LocalPolyClassifier {
    degree: usize,
    h: f64,
    data: Dataset,
}

impl LocalPolyClassifier {
    pub fn eta(&self, x: &[f64]) -> f64 {
        localpoly_eta(self.degree, self.h, &self.data, x)
    }
}

impl Classifier for LocalPolyClassifier {
    fn predict(&self, x: &[f64]) -> Label {
        Label(u32::from(self.eta(x) >= 0.5))
    }
}

pub const DEFAULT_CAP_DEGREE: usize = 3;
pub const DEFAULT_CAP_K: usize = 20;

/// Rules `G^LP_{l, 1/k}` for `1 <= l <= min(n, cap_degree)` and
/// `1 <= k <= min(n, cap_k)`.
pub fn lp_collection(n: usize, cap_degree: usize, cap_k: usize) -> Result<Vec<SharedRule>> {
    let (lmax, kmax) = (cap_degree.min(n), cap_k.min(n));
    if lmax == 0 || kmax == 0 {
        return Err(Error::EmptyFamily);
    }
    let mut out = Vec::with_capacity(lmax * kmax);
    for l in 1..=lmax {
        for k in 1..=kmax {
            out.push(Arc::new(LocalPolyRule::with_inverse_bandwidth(l, k)?) as SharedRule);
        }
    }
    Ok(out)
}
