//! Strategies of the two players.
//!
//! The adversary maps a positive-class point `x` to `y = A x + w` with
//! `w ~ N(mu_w, Sigma_w)` and leaves negative-class points alone. The
//! classifier labels `y` by the sign of `alpha^T y + beta`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Label;
use crate::numerics::{matrix_serde, min_eigenvalue, psd_factor, vector_serde, SymMatrix};
use crate::rng::{self, Stream};

/// Tolerance on `Sigma_w >= 0`.
pub const NOISE_PSD_TOL: f64 = 1e-9;
/// Slack on the `max(|alpha|_inf, |beta|) <= 1` box.
pub const CLASSIFIER_BOX_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawAdversary", into = "RawAdversary")]
pub struct AdversaryPolicy {
    a_matrix: DMatrix<f64>,
    w_mean: DVector<f64>,
    w_cov: SymMatrix,
}

#[derive(Serialize, Deserialize)]
struct RawAdversary {
    dim: usize,
    #[serde(with = "matrix_serde")]
    a_matrix: DMatrix<f64>,
    #[serde(with = "vector_serde")]
    w_mean: DVector<f64>,
    w_cov: SymMatrix,
}

impl TryFrom<RawAdversary> for AdversaryPolicy {
    type Error = Error;

    fn try_from(raw: RawAdversary) -> Result<Self> {
        let p = AdversaryPolicy::new(raw.a_matrix, raw.w_mean, raw.w_cov)?;
        if p.dim() != raw.dim {
            return Err(Error::dim(raw.dim, p.dim(), "adversary `dim` field"));
        }
        Ok(p)
    }
}

impl From<AdversaryPolicy> for RawAdversary {
    fn from(p: AdversaryPolicy) -> Self {
        RawAdversary {
            dim: p.dim(),
            a_matrix: p.a_matrix,
            w_mean: p.w_mean,
            w_cov: p.w_cov,
        }
    }
}

impl AdversaryPolicy {
    pub fn new(a_matrix: DMatrix<f64>, w_mean: DVector<f64>, w_cov: SymMatrix) -> Result<Self> {
        let n = w_mean.len();
        if a_matrix.nrows() != n || a_matrix.ncols() != n {
            return Err(Error::dim(n, a_matrix.nrows().max(a_matrix.ncols()), "adversary A must be n x n"));
        }
        if w_cov.order() != n {
            return Err(Error::dim(n, w_cov.order(), "adversary Sigma_w"));
        }
        let lambda = min_eigenvalue(&w_cov);
        if lambda < -NOISE_PSD_TOL {
            return Err(Error::Domain(format!(
                "noise covariance must be positive semidefinite (min eigenvalue {lambda:.3e})"
            )));
        }
        Ok(AdversaryPolicy { a_matrix, w_mean, w_cov })
    }

    /// `A = I`, `mu_w = 0`, `Sigma_w = 0`: every point passes through.
    pub fn identity(n: usize) -> Self {
        AdversaryPolicy {
            a_matrix: DMatrix::identity(n, n),
            w_mean: DVector::zeros(n),
            w_cov: SymMatrix::zeros(n),
        }
    }

    pub fn dim(&self) -> usize {
        self.w_mean.len()
    }

    pub fn a_matrix(&self) -> &DMatrix<f64> {
        &self.a_matrix
    }

    pub fn w_mean(&self) -> &DVector<f64> {
        &self.w_mean
    }

    pub fn w_cov(&self) -> &SymMatrix {
        &self.w_cov
    }

    /// Convex combination `(1 - w) self + w other`.
    pub fn lerp(&self, other: &AdversaryPolicy, w: f64) -> AdversaryPolicy {
        AdversaryPolicy {
            a_matrix: &self.a_matrix * (1.0 - w) + &other.a_matrix * w,
            w_mean: &self.w_mean * (1.0 - w) + &other.w_mean * w,
            w_cov: self.w_cov.lerp(&other.w_cov, w),
        }
    }

    /// Largest absolute difference over all parameters.
    pub fn max_abs_diff(&self, other: &AdversaryPolicy) -> f64 {
        (&self.a_matrix - &other.a_matrix)
            .amax()
            .max((&self.w_mean - &other.w_mean).amax())
            .max((self.w_cov.as_matrix() - other.w_cov.as_matrix()).amax())
    }

    /// Manipulates one point. Negative-class points are returned unchanged;
    /// for the positive class the noise draw depends only on `seed`.
    pub fn apply(&self, x: &DVector<f64>, label: Label, seed: u64) -> DVector<f64> {
        match label {
            Label::Negative => x.clone(),
            Label::Positive => {
                let factor = psd_factor(&self.w_cov);
                self.apply_with_factor(x, &factor, seed, 0)
            }
        }
    }

    /// `A x + mu_w + F z` with `F F^T = Sigma_w` and `z` drawn from the
    /// noise stream at `index`.
    pub(crate) fn apply_with_factor(&self, x: &DVector<f64>, noise_factor: &DMatrix<f64>, seed: u64, index: u64) -> DVector<f64> {
        let mut y = &self.a_matrix * x + &self.w_mean;
        if self.w_cov.as_matrix().amax() > 0.0 {
            let mut r = rng::keyed(seed, Stream::AdversaryNoise, index);
            y += noise_factor * rng::standard_normal_vector(&mut r, self.dim());
        }
        y
    }
}

pub fn identity_adversary(n: usize) -> Result<AdversaryPolicy> {
    if n == 0 {
        return Err(Error::Domain("dimension must be at least 1".into()));
    }
    Ok(AdversaryPolicy::identity(n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawClassifier", into = "RawClassifier")]
pub struct ClassifierPolicy {
    weights: DVector<f64>,
    bias: f64,
}

#[derive(Serialize, Deserialize)]
struct RawClassifier {
    dim: usize,
    #[serde(with = "vector_serde")]
    weights: DVector<f64>,
    bias: f64,
}

impl TryFrom<RawClassifier> for ClassifierPolicy {
    type Error = Error;

    fn try_from(raw: RawClassifier) -> Result<Self> {
        if raw.weights.len() != raw.dim {
            return Err(Error::dim(raw.dim, raw.weights.len(), "classifier `dim` field"));
        }
        ClassifierPolicy::new(raw.weights, raw.bias)
    }
}

impl From<ClassifierPolicy> for RawClassifier {
    fn from(p: ClassifierPolicy) -> Self {
        RawClassifier {
            dim: p.dim(),
            weights: p.weights,
            bias: p.bias,
        }
    }
}

impl ClassifierPolicy {
    /// Requires `|alpha|_inf <= 1` and `|beta| <= 1` (with `1e-12` slack).
    pub fn new(weights: DVector<f64>, bias: f64) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Domain("classifier needs at least one weight".into()));
        }
        if weights.iter().chain(std::iter::once(&bias)).any(|v| !v.is_finite()) {
            return Err(Error::Domain("classifier parameters must be finite".into()));
        }
        let norm = weights.amax().max(bias.abs());
        if norm > 1.0 + CLASSIFIER_BOX_TOL {
            return Err(Error::Domain(format!(
                "classifier must satisfy max(|alpha|_inf, |beta|) <= 1, got {norm}"
            )));
        }
        Ok(ClassifierPolicy { weights, bias })
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    /// `alpha^T y + beta`
    pub fn score(&self, y: &DVector<f64>) -> f64 {
        self.weights.dot(y) + self.bias
    }

    /// `+1` when the score is `>= 0`. Ties go to the positive class; they
    /// have probability zero under a nondegenerate Gaussian.
    pub fn classify(&self, y: &DVector<f64>) -> Label {
        if self.score(y) >= 0.0 {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    pub fn lerp(&self, other: &ClassifierPolicy, w: f64) -> ClassifierPolicy {
        ClassifierPolicy {
            weights: &self.weights * (1.0 - w) + &other.weights * w,
            bias: self.bias * (1.0 - w) + other.bias * w,
        }
    }

    pub fn max_abs_diff(&self, other: &ClassifierPolicy) -> f64 {
        (&self.weights - &other.weights).amax().max((self.bias - other.bias).abs())
    }

    /// Rescaled so that `max(|alpha|_inf, |beta|) = 1`.
    pub fn normalized(&self) -> Result<ClassifierPolicy> {
        normalize_classifier(&self.weights, self.bias)
    }
}

/// Divides `(alpha, beta)` by `max(|alpha|_inf, |beta|)`.
pub fn normalize_classifier(alpha_raw: &DVector<f64>, beta_raw: f64) -> Result<ClassifierPolicy> {
    let scale = alpha_raw.amax().max(beta_raw.abs());
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::DegeneratePolicy(format!(
            "cannot normalize classifier with max(|alpha|_inf, |beta|) = {scale}"
        )));
    }
    let mut weights = alpha_raw / scale;
    let mut bias = beta_raw / scale;
    // pin the dominant coordinate to exactly +-1
    if beta_raw.abs() == scale {
        bias = bias.signum();
    } else if let Some(k) = alpha_raw.iter().position(|v| v.abs() == scale) {
        weights[k] = weights[k].signum();
    }
    ClassifierPolicy::new(weights, bias)
}
