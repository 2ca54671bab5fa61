//! Gaussian class-conditional data model.

use std::io::Read;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{cholesky_lower, lower_triangular_inverse, matrix_serde, min_eigenvalue, vector_serde, SymMatrix};
use crate::rng::{self, Stream};

/// Class label, `theta` in `{-1, +1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "-1")]
    Negative,
    #[serde(rename = "+1")]
    Positive,
}

impl Label {
    pub fn from_sign(v: i64) -> Option<Self> {
        match v {
            1 => Some(Label::Positive),
            -1 => Some(Label::Negative),
            _ => None,
        }
    }

    pub fn sign(self) -> i8 {
        match self {
            Label::Positive => 1,
            Label::Negative => -1,
        }
    }
}

/// Means and covariances of the two class-conditional Gaussians.
///
/// `positive_prior` is carried for completeness; every probability computed
/// by this crate is class-conditional and ignores it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel", into = "RawModel")]
pub struct GaussianClassModel {
    mu_pos: DVector<f64>,
    sigma_pos: SymMatrix,
    mu_neg: DVector<f64>,
    sigma_neg: SymMatrix,
    positive_prior: f64,
}

#[derive(Serialize, Deserialize)]
struct RawModel {
    dim: usize,
    #[serde(with = "vector_serde")]
    mu_pos: DVector<f64>,
    sigma_pos: SymMatrix,
    #[serde(with = "vector_serde")]
    mu_neg: DVector<f64>,
    sigma_neg: SymMatrix,
    positive_prior: f64,
}

impl TryFrom<RawModel> for GaussianClassModel {
    type Error = Error;

    fn try_from(raw: RawModel) -> Result<Self> {
        let model = GaussianClassModel::new(raw.mu_pos, raw.sigma_pos, raw.mu_neg, raw.sigma_neg, raw.positive_prior)?;
        if model.dim() != raw.dim {
            return Err(Error::dim(raw.dim, model.dim(), "model `dim` field"));
        }
        Ok(model)
    }
}

impl From<GaussianClassModel> for RawModel {
    fn from(m: GaussianClassModel) -> Self {
        RawModel {
            dim: m.dim(),
            mu_pos: m.mu_pos,
            sigma_pos: m.sigma_pos,
            mu_neg: m.mu_neg,
            sigma_neg: m.sigma_neg,
            positive_prior: m.positive_prior,
        }
    }
}

impl GaussianClassModel {
    pub fn new(
        mu_pos: DVector<f64>,
        sigma_pos: SymMatrix,
        mu_neg: DVector<f64>,
        sigma_neg: SymMatrix,
        positive_prior: f64,
    ) -> Result<Self> {
        let n = mu_pos.len();
        if n == 0 {
            return Err(Error::Domain("model dimension must be positive".into()));
        }
        for (found, what) in [
            (sigma_pos.order(), "sigma_pos"),
            (mu_neg.len(), "mu_neg"),
            (sigma_neg.order(), "sigma_neg"),
        ] {
            if found != n {
                return Err(Error::dim(n, found, what));
            }
        }
        if !(positive_prior > 0.0 && positive_prior < 1.0) {
            return Err(Error::Domain(format!("positive_prior must lie in (0, 1), got {positive_prior}")));
        }
        for (sigma, which) in [(&sigma_pos, "sigma_pos"), (&sigma_neg, "sigma_neg")] {
            let lambda = min_eigenvalue(sigma);
            if !(lambda > 0.0) {
                return Err(Error::Domain(format!(
                    "{which} must be positive definite (min eigenvalue {lambda:.3e})"
                )));
            }
        }
        Ok(GaussianClassModel {
            mu_pos,
            sigma_pos,
            mu_neg,
            sigma_neg,
            positive_prior,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu_pos.len()
    }

    pub fn mu_pos(&self) -> &DVector<f64> {
        &self.mu_pos
    }

    pub fn sigma_pos(&self) -> &SymMatrix {
        &self.sigma_pos
    }

    pub fn mu_neg(&self) -> &DVector<f64> {
        &self.mu_neg
    }

    pub fn sigma_neg(&self) -> &SymMatrix {
        &self.sigma_neg
    }

    pub fn positive_prior(&self) -> f64 {
        self.positive_prior
    }

    /// Second moment `Sigma_+ + mu_+ mu_+^T` of the positive class.
    pub fn positive_second_moment(&self) -> SymMatrix {
        self.sigma_pos.add(&SymMatrix::outer(&self.mu_pos))
    }

    pub fn mean(&self, label: Label) -> &DVector<f64> {
        match label {
            Label::Positive => &self.mu_pos,
            Label::Negative => &self.mu_neg,
        }
    }

    pub fn covariance(&self, label: Label) -> &SymMatrix {
        match label {
            Label::Positive => &self.sigma_pos,
            Label::Negative => &self.sigma_neg,
        }
    }

    /// `count` i.i.d. draws from the class-conditional Gaussian. Draw `i`
    /// depends only on `(seed, label, i)`.
    pub fn sample(&self, label: Label, count: usize, seed: u64) -> Vec<DVector<f64>> {
        let factor = cholesky_lower(self.covariance(label)).expect("model covariance is positive definite");
        (0..count)
            .map(|i| self.sample_one(label, &factor, seed, i as u64))
            .collect()
    }

    pub(crate) fn sample_one(&self, label: Label, factor: &DMatrix<f64>, seed: u64, index: u64) -> DVector<f64> {
        let stream = match label {
            Label::Positive => Stream::PositiveClass,
            Label::Negative => Stream::NegativeClass,
        };
        let mut r = rng::keyed(seed, stream, index);
        let z = rng::standard_normal_vector(&mut r, self.dim());
        self.mean(label) + factor * z
    }
}

/// The two-dimensional illustrative model: `mu_+ = (3, 3)`, `mu_- = 0`,
/// `Sigma_+ = diag(1, 1/5)`, `Sigma_- = diag(1/5, 1)`, equal priors.
pub fn synthetic_example() -> GaussianClassModel {
    GaussianClassModel::new(
        DVector::from_vec(vec![3.0, 3.0]),
        SymMatrix::from_diagonal(&[1.0, 0.2]),
        DVector::from_vec(vec![0.0, 0.0]),
        SymMatrix::from_diagonal(&[0.2, 1.0]),
        0.5,
    )
    .expect("synthetic model is valid")
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    dim: usize,
    feature_names: Vec<String>,
    rows: Vec<(DVector<f64>, Label)>,
}

impl LabeledDataset {
    pub fn new(dim: usize, rows: Vec<(DVector<f64>, Label)>) -> Result<Self> {
        let names = (1..=dim).map(|i| format!("x{i}")).collect();
        Self::with_feature_names(names, rows)
    }

    pub fn with_feature_names(feature_names: Vec<String>, rows: Vec<(DVector<f64>, Label)>) -> Result<Self> {
        let dim = feature_names.len();
        if dim == 0 {
            return Err(Error::Domain("dataset needs at least one feature".into()));
        }
        if let Some((x, _)) = rows.iter().find(|(x, _)| x.len() != dim) {
            return Err(Error::dim(dim, x.len(), "feature vector length"));
        }
        Ok(LabeledDataset { dim, feature_names, rows })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn rows(&self) -> &[(DVector<f64>, Label)] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn features_with(&self, label: Label) -> Vec<&DVector<f64>> {
        self.rows.iter().filter(|(_, l)| *l == label).map(|(x, _)| x).collect()
    }

    /// Reads CSV with a header row and a `label` column; every other column
    /// is a numeric feature, kept in header order. Labels are `-1/+1`, or
    /// `0/1` when `labels01` is set (0 maps to -1).
    pub fn from_csv_reader<R: Read>(reader: R, labels01: bool) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let label_col = headers.iter().position(|h| h == "label").ok_or_else(|| Error::Parse {
            row: 1,
            column: "label".into(),
            message: "missing required column `label`".into(),
        })?;
        let feature_cols: Vec<usize> = (0..headers.len()).filter(|&c| c != label_col).collect();
        let names: Vec<String> = feature_cols.iter().map(|&c| headers[c].to_string()).collect();
        let mut rows = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            // 1-based line number, header is line 1
            let row = i + 2;
            let record = record?;
            let cell = |c: usize| record.get(c).unwrap_or("");
            let raw_label = cell(label_col);
            let label = parse_label(raw_label, labels01).ok_or_else(|| Error::Parse {
                row,
                column: "label".into(),
                message: if labels01 {
                    format!("expected 0 or 1, got `{raw_label}`")
                } else {
                    format!("expected -1 or +1, got `{raw_label}` (use --labels01 for 0/1 labels)")
                },
            })?;
            let mut x = DVector::zeros(feature_cols.len());
            for (k, &c) in feature_cols.iter().enumerate() {
                let text = cell(c);
                let v: f64 = text.parse().map_err(|_| Error::Parse {
                    row,
                    column: headers[c].to_string(),
                    message: format!("not a number: `{text}`"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        row,
                        column: headers[c].to_string(),
                        message: format!("non-finite value `{text}`"),
                    });
                }
                x[k] = v;
            }
            rows.push((x, label));
        }
        Self::with_feature_names(names, rows)
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.push("label");
        w.write_record(&header)?;
        for (x, label) in &self.rows {
            let mut rec: Vec<String> = x.iter().map(|v| v.to_string()).collect();
            rec.push(label.sign().to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn parse_label(s: &str, labels01: bool) -> Option<Label> {
    let v: f64 = s.parse().ok()?;
    if labels01 {
        match v {
            v if v == 0.0 => Some(Label::Negative),
            v if v == 1.0 => Some(Label::Positive),
            _ => None,
        }
    } else if v == 1.0 {
        Some(Label::Positive)
    } else if v == -1.0 {
        Some(Label::Negative)
    } else {
        None
    }
}

fn sample_mean(xs: &[&DVector<f64>], dim: usize) -> DVector<f64> {
    let mut m = DVector::zeros(dim);
    for x in xs {
        m += *x;
    }
    m / xs.len() as f64
}

/// Unbiased sample covariance (denominator `N - 1`).
fn sample_covariance(xs: &[&DVector<f64>], mean: &DVector<f64>) -> SymMatrix {
    let dim = mean.len();
    let mut c = DMatrix::zeros(dim, dim);
    for x in xs {
        let d = *x - mean;
        c += &d * d.transpose();
    }
    SymMatrix::symmetrize(&(c / (xs.len() as f64 - 1.0)))
}

/// Ridge used when none is given: `1e-8 * trace(Sigma) / n`, per class.
pub fn default_ridge(cov: &SymMatrix) -> f64 {
    1e-8 * cov.trace() / cov.order() as f64
}

/// How much to add to the diagonal of each fitted covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ridge {
    Fixed(f64),
    /// [`default_ridge`] of each class covariance.
    Default,
}

/// Per-class sample mean and covariance with a ridge on the diagonal.
pub fn fit(data: &LabeledDataset, ridge: Ridge) -> Result<GaussianClassModel> {
    if let Ridge::Fixed(r) = ridge {
        if !(r >= 0.0) || !r.is_finite() {
            return Err(Error::Domain(format!("ridge must be a finite nonnegative number, got {r}")));
        }
    }
    let dim = data.dim();
    let mut moments = Vec::with_capacity(2);
    for label in [Label::Positive, Label::Negative] {
        let xs = data.features_with(label);
        if xs.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "class {:+} has {} rows; at least 2 are required",
                label.sign(),
                xs.len()
            )));
        }
        let mean = sample_mean(&xs, dim);
        let cov = sample_covariance(&xs, &mean);
        let r = match ridge {
            Ridge::Fixed(r) => r,
            Ridge::Default => default_ridge(&cov),
        };
        let cov = cov.add(&SymMatrix::identity(dim).scale(r));
        cholesky_lower(&cov)?;
        moments.push((mean, cov));
    }
    let n_pos = data.features_with(Label::Positive).len();
    let prior = n_pos as f64 / data.len() as f64;
    let (mu_neg, sigma_neg) = moments.pop().expect("two classes");
    let (mu_pos, sigma_pos) = moments.pop().expect("two classes");
    GaussianClassModel::new(mu_pos, sigma_pos, mu_neg, sigma_neg, prior)
}

/// Linear map `x -> factor_inv * x` with `factor_inv` the inverse of the
/// lower Cholesky factor of the pooled covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhitenTransform {
    #[serde(with = "matrix_serde")]
    factor_inv: DMatrix<f64>,
}

impl WhitenTransform {
    pub fn new(factor_inv: DMatrix<f64>) -> Result<Self> {
        if !factor_inv.is_square() {
            return Err(Error::dim(factor_inv.nrows(), factor_inv.ncols(), "whitening factor must be square"));
        }
        if (0..factor_inv.nrows()).any(|i| factor_inv[(i, i)] == 0.0) {
            return Err(Error::Domain("whitening factor must have a nonzero diagonal".into()));
        }
        Ok(WhitenTransform { factor_inv })
    }

    pub fn factor_inv(&self) -> &DMatrix<f64> {
        &self.factor_inv
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.factor_inv * x
    }

    /// Maps whitened features back to the original coordinates.
    pub fn invert(&self, y: &DVector<f64>) -> DVector<f64> {
        self.factor_inv
            .clone()
            .solve_lower_triangular(y)
            .expect("whitening factor has a nonzero diagonal")
    }
}

/// Whitens all rows with the label-blind pooled covariance.
pub fn whiten(data: &LabeledDataset) -> Result<(LabeledDataset, WhitenTransform)> {
    if data.len() < 2 {
        return Err(Error::InsufficientData("whitening needs at least 2 rows".into()));
    }
    let xs: Vec<&DVector<f64>> = data.rows().iter().map(|(x, _)| x).collect();
    let mean = sample_mean(&xs, data.dim());
    let pooled = sample_covariance(&xs, &mean);
    let l = cholesky_lower(&pooled)?;
    let transform = WhitenTransform::new(lower_triangular_inverse(&l)?)?;
    let rows = data
        .rows()
        .iter()
        .map(|(x, label)| (transform.apply(x), *label))
        .collect();
    let out = LabeledDataset::with_feature_names(data.feature_names().to_vec(), rows)?;
    Ok((out, transform))
}
