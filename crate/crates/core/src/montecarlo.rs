//! Simulation of the game, for checking the closed forms and producing
//! figure data.
//!
//! Sample `i` of each class, and the adversary noise applied to positive
//! sample `i`, are keyed by `(seed, stream, i)`. Work is split into fixed
//! chunks and reduced in chunk order, so results do not depend on the number
//! of worker threads.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::check_compatible;
use crate::model::{GaussianClassModel, Label};
use crate::numerics::{cholesky_lower, psd_factor};
use crate::policy::{AdversaryPolicy, ClassifierPolicy};

pub const MIN_SAMPLES: usize = 100;
/// Points per class in generated figure data.
pub const DEFAULT_FIGURE_SAMPLES: usize = 500;
const CHUNK: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalRates {
    pub tp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
    pub tn: f64,
    pub fp: f64,
    pub cost_mean: f64,
    pub n_samples: usize,
    pub std_err_tp: f64,
    pub std_err_tn: f64,
    pub std_err_cost: f64,
}

/// Per-chunk tallies. Cost moments are merged with the pairwise update so
/// the variance does not suffer from cancellation.
#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    n: usize,
    true_pos: usize,
    true_neg: usize,
    cost_mean: f64,
    cost_m2: f64,
}

impl Tally {
    fn merge(self, o: Tally) -> Tally {
        if self.n == 0 {
            return o;
        }
        if o.n == 0 {
            return self;
        }
        let n = self.n + o.n;
        let d = o.cost_mean - self.cost_mean;
        Tally {
            n,
            true_pos: self.true_pos + o.true_pos,
            true_neg: self.true_neg + o.true_neg,
            cost_mean: self.cost_mean + d * o.n as f64 / n as f64,
            cost_m2: self.cost_m2 + o.cost_m2 + d * d * (self.n as f64 * o.n as f64) / n as f64,
        }
    }
}

struct Sampler<'a> {
    model: &'a GaussianClassModel,
    adv: &'a AdversaryPolicy,
    pos_factor: DMatrix<f64>,
    neg_factor: DMatrix<f64>,
    noise_factor: DMatrix<f64>,
    seed: u64,
}

impl<'a> Sampler<'a> {
    fn new(model: &'a GaussianClassModel, adv: &'a AdversaryPolicy, seed: u64) -> Result<Self> {
        Ok(Sampler {
            model,
            adv,
            pos_factor: cholesky_lower(model.sigma_pos())?,
            neg_factor: cholesky_lower(model.sigma_neg())?,
            noise_factor: psd_factor(adv.w_cov()),
            seed,
        })
    }

    /// Positive sample `i` before and after manipulation.
    fn positive(&self, i: u64) -> (DVector<f64>, DVector<f64>) {
        let x = self.model.sample_one(Label::Positive, &self.pos_factor, self.seed, i);
        let y = self.adv.apply_with_factor(&x, &self.noise_factor, self.seed, i);
        (x, y)
    }

    fn negative(&self, i: u64) -> DVector<f64> {
        self.model.sample_one(Label::Negative, &self.neg_factor, self.seed, i)
    }

    fn tally(&self, clf: &ClassifierPolicy, range: std::ops::Range<usize>) -> Tally {
        let mut t = Tally::default();
        for i in range {
            let (x, y) = self.positive(i as u64);
            if clf.classify(&y) == Label::Positive {
                t.true_pos += 1;
            }
            if clf.classify(&self.negative(i as u64)) == Label::Negative {
                t.true_neg += 1;
            }
            let c = (&x - &y).norm_squared();
            t.n += 1;
            let d = c - t.cost_mean;
            t.cost_mean += d / t.n as f64;
            t.cost_m2 += d * (c - t.cost_mean);
        }
        t
    }
}

/// Draws `n` points of each class, applies the adversary to the positives and
/// tallies the classifier's decisions.
pub fn empirical_rates(
    model: &GaussianClassModel,
    adv: &AdversaryPolicy,
    clf: &ClassifierPolicy,
    n: usize,
    seed: u64,
) -> Result<EmpiricalRates> {
    check_compatible(model, adv, clf)?;
    if n < MIN_SAMPLES {
        return Err(Error::InvalidConfig(format!("need at least {MIN_SAMPLES} samples, got {n}")));
    }
    let sampler = Sampler::new(model, adv, seed)?;
    let chunks: Vec<Tally> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| sampler.tally(clf, c * CHUNK..((c + 1) * CHUNK).min(n)))
        .collect();
    let t = chunks.into_iter().fold(Tally::default(), Tally::merge);

    let nf = n as f64;
    let tp = t.true_pos as f64 / nf;
    let tn = t.true_neg as f64 / nf;
    let binomial = |p: f64| (p * (1.0 - p) / nf).sqrt();
    Ok(EmpiricalRates {
        tp,
        fn_: (n - t.true_pos) as f64 / nf,
        tn,
        fp: (n - t.true_neg) as f64 / nf,
        cost_mean: t.cost_mean,
        n_samples: n,
        std_err_tp: binomial(tp),
        std_err_tn: binomial(tn),
        std_err_cost: (t.cost_m2 / (nf - 1.0)).sqrt() / nf.sqrt(),
    })
}

/// [`empirical_rates`] on a dedicated pool of `workers` threads.
pub fn empirical_rates_with_workers(
    model: &GaussianClassModel,
    adv: &AdversaryPolicy,
    clf: &ClassifierPolicy,
    n: usize,
    seed: u64,
    workers: usize,
) -> Result<EmpiricalRates> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| empirical_rates(model, adv, clf, n, seed))
}

/// Evenly spaced points of `{y : alpha^T y + beta = 0}` inside the box
/// `[lo, hi]`. Two-dimensional policies only; empty if the line misses the box.
pub fn decision_boundary_points(
    clf: &ClassifierPolicy,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    count: usize,
) -> Result<Vec<DVector<f64>>> {
    if clf.dim() != 2 {
        return Err(Error::dim(2, clf.dim(), "decision boundary is drawn in the plane"));
    }
    if lo.len() != 2 || hi.len() != 2 {
        return Err(Error::dim(2, lo.len().max(hi.len()), "bounding box corners"));
    }
    let alpha = clf.weights();
    let norm2 = alpha.norm_squared();
    if norm2 == 0.0 {
        return Err(Error::DegeneratePolicy("boundary of a classifier with zero weights".into()));
    }
    let origin = alpha * (-clf.bias() / norm2);
    let dir = DVector::from_vec(vec![-alpha[1], alpha[0]]);

    // Liang-Barsky on the infinite line origin + s * dir
    let (mut s0, mut s1) = (f64::NEG_INFINITY, f64::INFINITY);
    for i in 0..2 {
        if dir[i] == 0.0 {
            if origin[i] < lo[i] || origin[i] > hi[i] {
                return Ok(Vec::new());
            }
            continue;
        }
        let a = (lo[i] - origin[i]) / dir[i];
        let b = (hi[i] - origin[i]) / dir[i];
        s0 = s0.max(a.min(b));
        s1 = s1.min(a.max(b));
    }
    if s0 > s1 || count == 0 {
        return Ok(Vec::new());
    }
    let point = |s: f64| {
        let mut p = &origin + &dir * s;
        // coordinates along an axis-parallel line stay exact
        for i in 0..2 {
            if dir[i] == 0.0 {
                p[i] = origin[i];
            }
        }
        p
    };
    if count == 1 {
        return Ok(vec![point(0.5 * (s0 + s1))]);
    }
    let step = (s1 - s0) / (count - 1) as f64;
    Ok((0..count)
        .map(|k| point(if k + 1 == count { s1 } else { s0 + step * k as f64 }))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub x1: f64,
    pub x2: f64,
    pub class: i8,
    pub manipulated: u8,
}

/// Figure data for a two-dimensional model: `n_per_class` negatives, the
/// positives as drawn, and the same positives after manipulation.
pub fn scatter_rows(
    model: &GaussianClassModel,
    adv: &AdversaryPolicy,
    n_per_class: usize,
    seed: u64,
) -> Result<Vec<ScatterRow>> {
    if model.dim() != 2 {
        return Err(Error::dim(2, model.dim(), "scatter data is planar"));
    }
    if adv.dim() != 2 {
        return Err(Error::dim(2, adv.dim(), "adversary policy vs model"));
    }
    let sampler = Sampler::new(model, adv, seed)?;
    let row = |p: &DVector<f64>, label: Label, manipulated: u8| ScatterRow {
        x1: p[0],
        x2: p[1],
        class: label.sign(),
        manipulated,
    };
    let mut rows = Vec::with_capacity(3 * n_per_class);
    rows.extend((0..n_per_class).map(|i| row(&sampler.negative(i as u64), Label::Negative, 0)));
    let pos: Vec<_> = (0..n_per_class).map(|i| sampler.positive(i as u64)).collect();
    rows.extend(pos.iter().map(|(x, _)| row(x, Label::Positive, 0)));
    rows.extend(pos.iter().map(|(_, y)| row(y, Label::Positive, 1)));
    Ok(rows)
}

pub fn write_scatter_csv<W: Write>(w: W, rows: &[ScatterRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    if rows.is_empty() {
        out.write_record(["x1", "x2", "class", "manipulated"])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_boundary_csv<W: Write>(w: W, points: &[DVector<f64>]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["x1", "x2"])?;
    for p in points {
        out.write_record([p[0].to_string(), p[1].to_string()])?;
    }
    out.flush()?;
    Ok(())
}
