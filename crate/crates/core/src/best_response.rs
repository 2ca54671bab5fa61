//! Best responses of the two players.
//!
//! Both utilities are monotone in a ratio `mean / sqrt(2 var)` of the
//! positive-class score, so each player's problem is a fractional program.
//! The classifier's becomes a second-order cone program after a
//! Charnes-Cooper change of variables. The adversary's becomes a
//! semidefinite program; that transform is only tight when the optimal ratio
//! is positive, so the adversary answer is picked from several candidates
//! by closed-form utility, one of which comes from an exact low-dimensional
//! reduction ([`reduced_adversary_oracle`]).

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conic::{ConicProgram, LinExpr, SolveStatus, DEFAULT_FEAS_TOL, DEFAULT_GAP_TOL};
use crate::error::{Error, Result};
use crate::game::{
    false_negative_prob, manipulation_cost, true_negative_prob, true_positive_prob, DEGENERATE_VARIANCE,
};
use crate::model::GaussianClassModel;
use crate::numerics::{cholesky_lower, erf, erf_inv, min_eigenvalue, psd_factor, SymMatrix};
use crate::policy::{normalize_classifier, AdversaryPolicy, ClassifierPolicy, NOISE_PSD_TOL};

/// Relative slack accepted on the manipulation budget of a returned policy.
pub const BUDGET_TOL: f64 = 1e-6;
pub const DEFAULT_ORACLE_RESOLUTION: usize = 64;

/// How the bias enters the adversary SDP objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaScaling {
    /// `-t * beta`, the perspective of the affine numerator.
    #[default]
    Perspective,
    /// `-beta`, left unscaled.
    Unscaled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BestResponseOptions {
    pub feas_tol: f64,
    pub gap_tol: f64,
    pub oracle_resolution: usize,
    pub beta_scaling: BetaScaling,
}

impl Default for BestResponseOptions {
    fn default() -> Self {
        BestResponseOptions {
            feas_tol: DEFAULT_FEAS_TOL,
            gap_tol: DEFAULT_GAP_TOL,
            oracle_resolution: DEFAULT_ORACLE_RESOLUTION,
            beta_scaling: BetaScaling::Perspective,
        }
    }
}

/// Raw optimum `(alpha_bar, beta_bar, t)` of the classifier cone program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierBRRaw {
    #[serde(with = "crate::numerics::vector_serde")]
    pub alpha_bar: DVector<f64>,
    pub beta_bar: f64,
    pub t: f64,
    /// `erf_inv(1 - 2 delta)`
    pub delta_prime: f64,
}

/// Raw optimum `(A_bar, mu_w_bar, R_w, Z', t)` of the adversary SDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversaryBRRaw {
    #[serde(with = "crate::numerics::matrix_serde")]
    pub a_bar: DMatrix<f64>,
    #[serde(with = "crate::numerics::vector_serde")]
    pub mu_w_bar: DVector<f64>,
    #[serde(with = "crate::numerics::matrix_serde")]
    pub r_w: DMatrix<f64>,
    pub z_prime: SymMatrix,
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierRoute {
    /// Normalized optimum of the cone program.
    ConeProgram,
    /// Direction search on the reduced ratio; used when the cone program
    /// has no positive optimum (best achievable true-positive rate <= 1/2).
    DirectionSearch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConicDiagnostics {
    pub status: SolveStatus,
    pub objective_value: f64,
    pub max_primal_residual: f64,
    pub rel_gap: f64,
    pub iterations: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierBestResponse {
    pub policy: ClassifierPolicy,
    pub achieved_tp: f64,
    pub route: ClassifierRoute,
    pub raw: Option<ClassifierBRRaw>,
    pub solver: Option<ConicDiagnostics>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversaryCandidate {
    /// `A = A_bar/t`, `mu_w = mu_w_bar/t`, `Sigma_w = R R^T / t`.
    SdpNoiseOverT,
    /// Same with `Sigma_w = R R^T / t^2`.
    SdpNoiseOverTSquared,
    ReducedOracle,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    pub candidate: AdversaryCandidate,
    pub false_negative: f64,
    pub manipulation_cost: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversaryBestResponse {
    pub policy: AdversaryPolicy,
    pub achieved_fn: f64,
    pub winner: AdversaryCandidate,
    pub candidates: Vec<CandidateReport>,
    pub raw: Option<AdversaryBRRaw>,
    pub solver: Option<ConicDiagnostics>,
}

fn diagnostics(sol: &crate::conic::ConicSolution) -> ConicDiagnostics {
    ConicDiagnostics {
        status: sol.status,
        objective_value: sol.objective_value,
        max_primal_residual: sol.max_primal_residual,
        rel_gap: sol.rel_gap,
        iterations: sol.iterations,
    }
}

/// Mean and covariance of the manipulated positive class:
/// `A mu_+ + mu_w` and `A Sigma_+ A^T + Sigma_w`.
fn manipulated_moments(model: &GaussianClassModel, adv: &AdversaryPolicy) -> (DVector<f64>, SymMatrix) {
    let mean = adv.a_matrix() * model.mu_pos() + adv.w_mean();
    let cov = model.sigma_pos().congruence(adv.a_matrix()).add(adv.w_cov());
    (mean, cov)
}

fn check_delta(delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 0.5) {
        return Err(Error::InvalidConfig(format!("delta must lie in (0, 0.5), got {delta}")));
    }
    erf_inv(1.0 - 2.0 * delta)
}

/// Cone program for the classifier: maximize `alpha_bar^T m + beta_bar` over
/// `(alpha_bar, beta_bar, t)` subject to `2 alpha_bar^T S alpha_bar <= 1`,
/// `-alpha_bar^T mu_- - beta_bar >= delta' t`,
/// `|sqrt(2) Sigma_-^{1/2} alpha_bar| <= t`, `t >= 0`, where `m`, `S` are the
/// manipulated positive-class moments.
pub fn classifier_program(
    model: &GaussianClassModel,
    adv: &AdversaryPolicy,
    delta_prime: f64,
) -> Result<(ConicProgram, [crate::conic::Var; 3])> {
    let n = model.dim();
    let (mean, cov) = manipulated_moments(model, adv);
    let cov_factor = psd_factor(&cov);
    let neg_factor = cholesky_lower(model.sigma_neg())?;
    let sqrt2 = std::f64::consts::SQRT_2;

    let mut p = ConicProgram::new();
    let alpha = p.vector("alpha_bar", n);
    let beta = p.scalar("beta_bar");
    let t = p.scalar("t");
    let alpha_dot = |w: &DVector<f64>, scale: f64| {
        (0..n).fold(LinExpr::zero(), |acc, i| acc.add(&alpha.at(i).scale(scale * w[i])))
    };

    p.maximize(alpha_dot(&mean, 1.0).add(&beta.expr()));
    // |sqrt(2) F^T alpha_bar| <= 1 with F F^T = S
    let tail = (0..n).map(|j| alpha_dot(&cov_factor.column(j).into_owned(), sqrt2)).collect();
    p.add_soc(LinExpr::constant(1.0), tail);
    // -alpha_bar^T mu_- - beta_bar - delta' t >= 0
    p.add_nonneg(
        alpha_dot(model.mu_neg(), -1.0)
            .sub(&beta.expr())
            .sub(&t.expr().scale(delta_prime)),
    );
    // |sqrt(2) L^T alpha_bar| <= t with L L^T = Sigma_-
    let tail = (0..n).map(|j| alpha_dot(&neg_factor.column(j).into_owned(), sqrt2)).collect();
    p.add_soc(t.expr(), tail);
    p.add_nonneg(t.expr());
    Ok((p, [alpha, beta, t]))
}

pub fn classifier_best_response(
    model: &GaussianClassModel,
    adv: &AdversaryPolicy,
    delta: f64,
) -> Result<ClassifierBestResponse> {
    classifier_best_response_with(model, adv, delta, &BestResponseOptions::default())
}

pub fn classifier_best_response_with(
    model: &GaussianClassModel,
    adv: &AdversaryPolicy,
    delta: f64,
    opts: &BestResponseOptions,
) -> Result<ClassifierBestResponse> {
    if adv.dim() != model.dim() {
        return Err(Error::dim(model.dim(), adv.dim(), "adversary policy vs model"));
    }
    let delta_prime = check_delta(delta)?;
    let (program, [alpha, beta, t]) = classifier_program(model, adv, delta_prime)?;
    let sol = program.solve(opts.feas_tol, opts.gap_tol)?;
    let diag = diagnostics(&sol);
    if sol.status != SolveStatus::Optimal {
        return Err(Error::Solver {
            status: sol.status,
            detail: format!(
                "classifier cone program (residual {:.2e}, gap {:.2e})",
                sol.max_primal_residual, sol.rel_gap
            ),
        });
    }
    let raw = ClassifierBRRaw {
        alpha_bar: sol.vector(alpha),
        beta_bar: sol.scalar(beta),
        t: sol.scalar(t),
        delta_prime,
    };

    // A non-positive optimum means the best ratio is <= 0 and the relaxed
    // normalization collapsed toward the origin; the cone solution then
    // carries no direction information.
    let scale = raw.alpha_bar.amax().max(raw.beta_bar.abs());
    if sol.objective_value > 1e-7 && scale > 1e-7 {
        let policy = normalize_classifier(&raw.alpha_bar, raw.beta_bar)?;
        let achieved_tp = true_positive_prob(model, adv, &policy);
        return Ok(ClassifierBestResponse {
            policy,
            achieved_tp,
            route: ClassifierRoute::ConeProgram,
            raw: Some(raw),
            solver: Some(diag),
        });
    }

    let policy = classifier_direction_search(model, adv, delta, opts.oracle_resolution)?;
    let achieved_tp = true_positive_prob(model, adv, &policy);
    Ok(ClassifierBestResponse {
        policy,
        achieved_tp,
        route: ClassifierRoute::DirectionSearch,
        raw: Some(raw),
        solver: Some(diag),
    })
}

/// Ratio `(a^T m + beta(a)) / sqrt(2 a^T S a)` with `beta(a)` the largest
/// bias meeting the true-negative constraint.
struct ClassifierRatio {
    mean: DVector<f64>,
    cov: SymMatrix,
    mu_neg: DVector<f64>,
    sigma_neg: SymMatrix,
    delta_prime: f64,
}

impl ClassifierRatio {
    fn bias(&self, a: &DVector<f64>) -> f64 {
        -a.dot(&self.mu_neg) - self.delta_prime * (2.0 * self.sigma_neg.quad_form(a)).sqrt()
    }

    fn value(&self, a: &DVector<f64>) -> f64 {
        let num = a.dot(&self.mean) + self.bias(a);
        let var = self.cov.quad_form(a);
        if var <= DEGENERATE_VARIANCE {
            return if num > 0.0 {
                f64::INFINITY
            } else if num < 0.0 {
                f64::NEG_INFINITY
            } else {
                0.0
            };
        }
        num / (2.0 * var).sqrt()
    }
}

/// Maximizes the classifier's reduced ratio over weight directions, with the
/// bias set to its largest feasible value. Independent of any conic solver.
pub fn classifier_direction_search(
    model: &GaussianClassModel,
    adv: &AdversaryPolicy,
    delta: f64,
    resolution: usize,
) -> Result<ClassifierPolicy> {
    let delta_prime = check_delta(delta)?;
    let (mean, cov) = manipulated_moments(model, adv);
    let ratio = ClassifierRatio {
        mean,
        cov,
        mu_neg: model.mu_neg().clone(),
        sigma_neg: model.sigma_neg().clone(),
        delta_prime,
    };
    let n = model.dim();
    let resolution = resolution.max(4);
    let best = if n == 2 {
        let count = 4 * resolution * resolution;
        let dir = |phi: f64| DVector::from_vec(vec![phi.cos(), phi.sin()]);
        let step = std::f64::consts::TAU / count as f64;
        let (k, _) = (0..count)
            .map(|k| ratio.value(&dir(k as f64 * step)))
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (k, v)| if v > best.1 { (k, v) } else { best });
        let phi = golden_max(|phi| ratio.value(&dir(phi)), (k as f64 - 1.0) * step, (k as f64 + 1.0) * step, 80);
        dir(phi)
    } else {
        let mut starts: Vec<DVector<f64>> = Vec::new();
        for i in 0..n {
            for s in [1.0, -1.0] {
                let mut e = DVector::zeros(n);
                e[i] = s;
                starts.push(e);
            }
        }
        let gap = &ratio.mean - &ratio.mu_neg;
        starts.push(gap.clone());
        let pooled = ratio.cov.add(&ratio.sigma_neg).add(&SymMatrix::identity(n).scale(1e-12));
        if let Some(d) = pooled.as_matrix().clone().cholesky() {
            starts.push(d.solve(&gap));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_c1a5);
        for _ in 0..8 * resolution {
            starts.push(DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0)));
        }
        let f = |a: &DVector<f64>| ratio.value(a);
        multistart_polish(&starts, f, 8, 1e-10)
    };
    let bias = ratio.bias(&best);
    let policy = normalize_classifier(&best, bias)?;
    let direct_fallback = ClassifierPolicy::new(DVector::zeros(n), -1.0)?;
    // Rejecting everything is always feasible and has TP = 0; never do worse.
    if true_negative_prob(model, &policy) + 1e-9 < 1.0 - delta {
        return Ok(direct_fallback);
    }
    Ok(policy)
}

/// Golden-section search for a maximum of `f` on `[lo, hi]`.
fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, iters: usize) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..iters {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        }
    }
    if f1 > f2 {
        x1
    } else {
        x2
    }
}

/// Evaluates every start, keeps the `keep` best and polishes each by a
/// compass search with halving steps. Ties resolve to the earliest start.
fn multistart_polish(
    starts: &[DVector<f64>],
    f: impl Fn(&DVector<f64>) -> f64 + Sync,
    keep: usize,
    min_step: f64,
) -> DVector<f64> {
    let mut scored: Vec<(usize, f64)> = starts.par_iter().map(|s| f(s)).enumerate().collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let polished: Vec<(DVector<f64>, f64)> = scored
        .iter()
        .take(keep)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&&(k, v)| compass_search(&starts[k], v, &f, min_step))
        .collect();
    polished
        .into_iter()
        .fold((starts[scored[0].0].clone(), f64::NEG_INFINITY), |best, cand| {
            if cand.1 > best.1 {
                cand
            } else {
                best
            }
        })
        .0
}

fn compass_search(
    x0: &DVector<f64>,
    f0: f64,
    f: &impl Fn(&DVector<f64>) -> f64,
    min_step: f64,
) -> (DVector<f64>, f64) {
    let n = x0.len();
    let mut x = x0.clone();
    let mut fx = f0;
    let mut step = 0.25 * x.norm().max(1e-3);
    while step > min_step * x.norm().max(1e-12) {
        let mut improved = false;
        for i in 0..n {
            for s in [1.0, -1.0] {
                let mut y = x.clone();
                y[i] += s * step;
                let fy = f(&y);
                if fy > fx {
                    x = y;
                    fx = fy;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (x, fx)
}

/// Structured adversary family: `A = I - alpha d^T / |alpha|^2`,
/// `mu_w = m alpha / |alpha|^2`, `Sigma_w = s alpha alpha^T / |alpha|^4`.
///
/// Against a fixed classifier only `A^T alpha = alpha - d`,
/// `alpha^T mu_w = m` and `alpha^T Sigma_w alpha = s` matter, and within each
/// level set these members have the least cost, namely
/// `(d^T M d + m^2 + s) / |alpha|^2` with `M = Sigma_+ + mu_+ mu_+^T`.
pub fn structured_adversary(alpha: &DVector<f64>, d: &DVector<f64>, m: f64, s: f64) -> Result<AdversaryPolicy> {
    let n2 = alpha.norm_squared();
    if n2 == 0.0 {
        return Err(Error::DegeneratePolicy("classifier weights are zero".into()));
    }
    let n = alpha.len();
    let a = DMatrix::identity(n, n) - alpha * d.transpose() / n2;
    let mu = alpha * (m / n2);
    let sigma = SymMatrix::outer(alpha).scale(s.max(0.0) / (n2 * n2));
    AdversaryPolicy::new(a, mu, sigma)
}

/// Cost of a [`structured_adversary`] member.
pub fn structured_cost(model: &GaussianClassModel, alpha: &DVector<f64>, d: &DVector<f64>, m: f64, s: f64) -> f64 {
    (model.positive_second_moment().quad_form(d) + m * m + s) / alpha.norm_squared()
}

struct AdversaryRatio<'a> {
    model: &'a GaussianClassModel,
    alpha: &'a DVector<f64>,
    beta: f64,
    second_moment: SymMatrix,
    budget: f64,
}

impl AdversaryRatio<'_> {
    /// erf argument for given `d`, with the leftover budget split optimally
    /// between a mean shift `m <= 0` and noise `s`. Returns `(arg, m, s)`.
    fn with_best_split(&self, d: &DVector<f64>) -> (f64, f64, f64) {
        let u = self.alpha - d;
        let c = -u.dot(self.model.mu_pos()) - self.beta;
        let v = self.model.sigma_pos().quad_form(&u).max(0.0);
        let r = (self.budget - self.second_moment.quad_form(d)).max(0.0);
        let arg = |s: f64| {
            let num = c + (r - s).max(0.0).sqrt();
            let var = v + s;
            if var <= DEGENERATE_VARIANCE {
                if num > 0.0 {
                    f64::INFINITY
                } else if num < 0.0 {
                    f64::NEG_INFINITY
                } else {
                    0.0
                }
            } else {
                num / (2.0 * var).sqrt()
            }
        };
        // With a positive numerator noise only hurts.
        if c + r.sqrt() >= 0.0 || r == 0.0 {
            return (arg(0.0), -r.sqrt(), 0.0);
        }
        let grid = 32;
        let (k, _) = (0..=grid)
            .map(|k| arg(r * k as f64 / grid as f64))
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |b, (k, v)| if v > b.1 { (k, v) } else { b });
        let lo = r * (k as f64 - 1.0).max(0.0) / grid as f64;
        let hi = r * (k as f64 + 1.0).min(grid as f64) / grid as f64;
        let s = golden_max(arg, lo, hi, 60);
        let (s, best) = [(0.0, arg(0.0)), (r, arg(r)), (s, arg(s))]
            .into_iter()
            .fold((0.0, f64::NEG_INFINITY), |b, c| if c.1 > b.1 { c } else { b });
        (best, -(r - s).max(0.0).sqrt(), s)
    }

    /// Pulls `d` back inside the budget ellipsoid `d^T M d <= budget`.
    fn project(&self, d: &DVector<f64>) -> DVector<f64> {
        let q = self.second_moment.quad_form(d);
        if q > self.budget && q > 0.0 {
            d * (self.budget / q).sqrt()
        } else {
            d.clone()
        }
    }
}

/// Searches the structured adversary family under the exact budget.
///
/// `d` is scanned over the budget ellipsoid (a polar grid in whitened
/// coordinates for two dimensions, deterministic multi-starts otherwise), the
/// remaining budget is split between mean shift and noise by a scalar search,
/// and the best points are polished by compass search.
pub fn reduced_adversary_oracle(
    model: &GaussianClassModel,
    clf: &ClassifierPolicy,
    epsilon: f64,
    resolution: usize,
) -> Result<(AdversaryPolicy, f64)> {
    if clf.dim() != model.dim() {
        return Err(Error::dim(model.dim(), clf.dim(), "classifier policy vs model"));
    }
    let alpha = clf.weights();
    if alpha.amax() == 0.0 {
        return Err(Error::DegeneratePolicy("classifier weights are zero".into()));
    }
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidConfig(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let n = model.dim();
    let ratio = AdversaryRatio {
        model,
        alpha,
        beta: clf.bias(),
        second_moment: model.positive_second_moment(),
        budget: epsilon * alpha.norm_squared(),
    };
    let resolution = resolution.max(4);

    let d_best = if ratio.budget == 0.0 {
        DVector::zeros(n)
    } else {
        // whitened coordinates: d = W e with W W^T = M^{-1}, so d^T M d = |e|^2
        let m_chol = cholesky_lower(&ratio.second_moment)?;
        let w = m_chol
            .transpose()
            .try_inverse()
            .ok_or_else(|| Error::InvariantViolation("second moment is singular".into()))?;
        let radius = ratio.budget.sqrt();
        let mut starts: Vec<DVector<f64>> = vec![DVector::zeros(n)];
        if n == 2 {
            for i in 1..=resolution {
                let rho = radius * i as f64 / resolution as f64;
                for k in 0..4 * resolution {
                    let phi = std::f64::consts::TAU * k as f64 / (4 * resolution) as f64;
                    starts.push(&w * DVector::from_vec(vec![rho * phi.cos(), rho * phi.sin()]));
                }
            }
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(0x0dd_ba11);
            let mut dirs: Vec<DVector<f64>> = Vec::new();
            for i in 0..n {
                for s in [1.0, -1.0] {
                    let mut e = DVector::zeros(n);
                    e[i] = s;
                    dirs.push(e);
                }
            }
            for v in [alpha.clone(), model.mu_pos().clone(), model.sigma_pos().as_matrix() * alpha] {
                let e = w.transpose() * ratio.second_moment.as_matrix() * &v;
                if e.norm() > 0.0 {
                    dirs.push(e.normalize());
                    dirs.push(-e.normalize());
                }
            }
            for _ in 0..resolution * resolution {
                let e = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
                if e.norm() > 0.0 {
                    dirs.push(e.normalize());
                }
            }
            for i in 1..=resolution.min(16) {
                let rho = radius * i as f64 / resolution.min(16) as f64;
                for e in &dirs {
                    starts.push(&w * e * rho);
                }
            }
        }
        let f = |d: &DVector<f64>| ratio.with_best_split(&ratio.project(d)).0;
        ratio.project(&multistart_polish(&starts, f, 8, 1e-9))
    };
    let (_, m, s) = ratio.with_best_split(&d_best);
    let policy = structured_adversary(alpha, &d_best, m, s)?;
    let fn_prob = false_negative_prob(model, &policy, clf);
    Ok((policy, fn_prob))
}

/// Perspective SDP for the adversary over `(A_bar, mu_w_bar, R_w, Z', t)`.
pub fn adversary_program(
    model: &GaussianClassModel,
    clf: &ClassifierPolicy,
    epsilon: f64,
    beta_scaling: BetaScaling,
) -> Result<(ConicProgram, AdversaryVars)> {
    let n = model.dim();
    let alpha = clf.weights();
    let mu = model.mu_pos();
    let sqrt2 = std::f64::consts::SQRT_2;
    let sigma_chol = cholesky_lower(model.sigma_pos())?;
    let m_inv = model
        .positive_second_moment()
        .as_matrix()
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite { index: 0, pivot: 0.0 })?
        .inverse();

    let mut p = ConicProgram::new();
    let a_bar = p.matrix("A_bar", n, n);
    let mu_bar = p.vector("mu_w_bar", n);
    let r_w = p.matrix("R_w", n, n);
    let z = p.symmetric("Z_prime", n);
    let t = p.scalar("t");

    // (A_bar^T alpha)_j and (R_w^T alpha)_j
    let at_alpha: Vec<LinExpr> = (0..n)
        .map(|j| (0..n).fold(LinExpr::zero(), |acc, i| acc.add(&a_bar.at2(i, j).scale(alpha[i]))))
        .collect();
    let rt_alpha: Vec<LinExpr> = (0..n)
        .map(|j| (0..n).fold(LinExpr::zero(), |acc, i| acc.add(&r_w.at2(i, j).scale(alpha[i]))))
        .collect();

    let mut objective = LinExpr::zero();
    for j in 0..n {
        objective = objective.sub(&at_alpha[j].scale(mu[j]));
        objective = objective.sub(&mu_bar.at(j).scale(alpha[j]));
    }
    objective = match beta_scaling {
        BetaScaling::Perspective => objective.sub(&t.expr().scale(clf.bias())),
        BetaScaling::Unscaled => objective.plus_constant(-clf.bias()),
    };
    p.maximize(objective);

    // |(sqrt(2) L^T A_bar^T alpha ; sqrt(2) R_w^T alpha)| <= 1 with L L^T = Sigma_+
    let mut tail = Vec::with_capacity(2 * n);
    for k in 0..n {
        let row = (0..n).fold(LinExpr::zero(), |acc, j| acc.add(&at_alpha[j].scale(sqrt2 * sigma_chol[(j, k)])));
        tail.push(row);
    }
    for e in &rt_alpha {
        tail.push(e.scale(sqrt2));
    }
    p.add_soc(LinExpr::constant(1.0), tail);

    // [ tI    0   0          R^T         ]
    // [ 0     t   0          mu_bar^T    ]
    // [ 0     0   t M^{-1}   tI - A_bar^T ]
    // [ R     mu  tI - A_bar Z'          ]  >= 0
    let order = 3 * n + 1;
    let mut lmi = vec![vec![LinExpr::zero(); order]; order];
    let (b1, b2, b3) = (n, n + 1, 2 * n + 1);
    for i in 0..n {
        lmi[i][i] = t.expr();
    }
    lmi[b1][b1] = t.expr();
    for i in 0..n {
        for j in 0..n {
            lmi[b2 + i][b2 + j] = t.expr().scale(m_inv[(i, j)]);
            // top-right R^T and its mirror R
            lmi[i][b3 + j] = r_w.at2(j, i);
            lmi[b3 + j][i] = r_w.at2(j, i);
            // (2,3) block tI - A_bar^T, (3,2) block tI - A_bar
            let eye = if i == j { t.expr() } else { LinExpr::zero() };
            let entry = eye.sub(&a_bar.at2(j, i));
            lmi[b2 + i][b3 + j] = entry.clone();
            lmi[b3 + j][b2 + i] = entry;
            lmi[b3 + i][b3 + j] = z.at2(i, j);
        }
        lmi[b1][b3 + i] = mu_bar.at(i);
        lmi[b3 + i][b1] = mu_bar.at(i);
    }
    p.add_psd(lmi);

    // trace(Z') <= t epsilon
    let trace = (0..n).fold(LinExpr::zero(), |acc, i| acc.add(&z.at2(i, i)));
    p.add_leq(trace, &t.expr().scale(epsilon));
    p.add_nonneg(t.expr());

    Ok((
        p,
        AdversaryVars {
            a_bar,
            mu_w_bar: mu_bar,
            r_w,
            z_prime: z,
            t,
        },
    ))
}

#[derive(Debug, Clone, Copy)]
pub struct AdversaryVars {
    pub a_bar: crate::conic::Var,
    pub mu_w_bar: crate::conic::Var,
    pub r_w: crate::conic::Var,
    pub z_prime: crate::conic::Var,
    pub t: crate::conic::Var,
}

pub fn adversary_best_response(
    model: &GaussianClassModel,
    clf: &ClassifierPolicy,
    epsilon: f64,
) -> Result<AdversaryBestResponse> {
    adversary_best_response_with(model, clf, epsilon, &BestResponseOptions::default())
}

pub fn adversary_best_response_with(
    model: &GaussianClassModel,
    clf: &ClassifierPolicy,
    epsilon: f64,
    opts: &BestResponseOptions,
) -> Result<AdversaryBestResponse> {
    if clf.dim() != model.dim() {
        return Err(Error::dim(model.dim(), clf.dim(), "classifier policy vs model"));
    }
    if clf.weights().amax() == 0.0 {
        return Err(Error::DegeneratePolicy("classifier weights are zero".into()));
    }
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidConfig(format!("epsilon must be finite and >= 0, got {epsilon}")));
    }

    let mut proposals: Vec<(AdversaryCandidate, AdversaryPolicy)> = Vec::new();
    let mut raw = None;
    let mut solver = None;
    let (program, vars) = adversary_program(model, clf, epsilon, opts.beta_scaling)?;
    match program.solve(opts.feas_tol, opts.gap_tol) {
        Ok(sol) => {
            solver = Some(diagnostics(&sol));
            let usable = matches!(sol.status, SolveStatus::Optimal | SolveStatus::Inaccurate)
                && sol.values().iter().all(|v| v.is_finite());
            if usable {
                let r = AdversaryBRRaw {
                    a_bar: sol.matrix(vars.a_bar),
                    mu_w_bar: sol.vector(vars.mu_w_bar),
                    r_w: sol.matrix(vars.r_w),
                    z_prime: SymMatrix::symmetrize(&sol.matrix(vars.z_prime)),
                    t: sol.scalar(vars.t),
                };
                // t -> 0 is the collapse of the transform when the best ratio is negative
                if r.t > 1e-9 {
                    let a = &r.a_bar / r.t;
                    let mu = &r.mu_w_bar / r.t;
                    let gram = SymMatrix::symmetrize(&(&r.r_w * r.r_w.transpose()));
                    for (cand, div) in [
                        (AdversaryCandidate::SdpNoiseOverT, r.t),
                        (AdversaryCandidate::SdpNoiseOverTSquared, r.t * r.t),
                    ] {
                        if let Ok(p) = AdversaryPolicy::new(a.clone(), mu.clone(), gram.scale(1.0 / div)) {
                            proposals.push((cand, p));
                        }
                    }
                } else {
                    log::debug!("adversary SDP returned t = {:.3e}; skipping its recoveries", r.t);
                }
                raw = Some(r);
            } else {
                log::warn!("adversary SDP finished with status {:?}; relying on the reduced oracle", sol.status);
            }
        }
        Err(e) => log::warn!("adversary SDP failed ({e}); relying on the reduced oracle"),
    }

    let (oracle_policy, _) = reduced_adversary_oracle(model, clf, epsilon, opts.oracle_resolution)?;
    proposals.push((AdversaryCandidate::ReducedOracle, oracle_policy));
    proposals.push((AdversaryCandidate::Identity, AdversaryPolicy::identity(model.dim())));

    let limit = epsilon * (1.0 + BUDGET_TOL);
    let candidates: Vec<CandidateReport> = proposals
        .iter()
        .map(|(cand, p)| {
            let cost = manipulation_cost(model, p);
            CandidateReport {
                candidate: *cand,
                false_negative: false_negative_prob(model, p, clf),
                manipulation_cost: cost,
                feasible: cost <= limit && min_eigenvalue(p.w_cov()) >= -NOISE_PSD_TOL,
            }
        })
        .collect();
    let best = candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| c.feasible)
        .fold(None::<(usize, f64)>, |best, (k, c)| match best {
            Some((_, v)) if v >= c.false_negative => best,
            _ => Some((k, c.false_negative)),
        })
        .ok_or_else(|| Error::InvariantViolation("no feasible adversary candidate (identity has zero cost)".into()))?;

    let (winner, policy) = proposals.swap_remove(best.0);
    Ok(AdversaryBestResponse {
        policy,
        achieved_fn: best.1,
        winner,
        candidates,
        raw,
        solver,
    })
}

/// `P{z = -1 | theta = +1}` from an erf argument.
pub fn false_negative_from_argument(arg: f64) -> f64 {
    0.5 + 0.5 * erf(arg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{feasible_adversary, feasible_classifier};
    use crate::model::synthetic_example;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(xs)
    }

    fn baseline() -> ClassifierBestResponse {
        classifier_best_response(&synthetic_example(), &AdversaryPolicy::identity(2), 0.01).unwrap()
    }

    #[test]
    fn non_adversarial_baseline() {
        let m = synthetic_example();
        let br = baseline();
        assert_eq!(br.route, ClassifierRoute::ConeProgram);
        let tn = true_negative_prob(&m, &br.policy);
        assert!((tn - 0.99).abs() <= 1e-3, "tn {tn}");
        assert!((br.achieved_tp - 0.9993).abs() <= 1e-3, "tp {}", br.achieved_tp);
        let norm = br.policy.weights().amax().max(br.policy.bias().abs());
        assert!((norm - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn objective_probability_link() {
        let br = baseline();
        let obj = br.solver.as_ref().unwrap().objective_value;
        let from_objective = 0.5 - 0.5 * erf(-obj);
        assert!((br.achieved_tp - from_objective).abs() <= 1e-6);
    }

    #[test]
    fn symmetric_classes_give_axis_weights() {
        let c = 1.5;
        let m = GaussianClassModel::new(
            v(&[c, 0.0, 0.0]),
            SymMatrix::identity(3),
            v(&[-c, 0.0, 0.0]),
            SymMatrix::identity(3),
            0.5,
        )
        .unwrap();
        let br = classifier_best_response(&m, &AdversaryPolicy::identity(3), 0.05).unwrap();
        let w = br.policy.weights();
        assert!(w[0] > 0.0);
        assert!(w[1].abs() <= 1e-6 && w[2].abs() <= 1e-6, "{w}");
    }

    #[test]
    fn structured_family_cost_identity() {
        let m = synthetic_example();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let alpha = v(&[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
            let d = v(&[rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]);
            let mm = rng.gen_range(-2.0..2.0);
            let s = rng.gen_range(0.0..2.0);
            let p = structured_adversary(&alpha, &d, mm, s).unwrap();
            let want = structured_cost(&m, &alpha, &d, mm, s);
            assert!((manipulation_cost(&m, &p) - want).abs() <= 1e-10 * want.max(1.0));
            // the classifier-facing statistics are exactly (alpha - d, m, s)
            assert!((p.a_matrix().transpose() * &alpha - (&alpha - &d)).amax() <= 1e-12);
            assert!((alpha.dot(p.w_mean()) - mm).abs() <= 1e-12);
            assert!((p.w_cov().quad_form(&alpha) - s).abs() <= 1e-12);
        }
    }

    #[test]
    fn zero_budget_is_identity() {
        let m = synthetic_example();
        let clf = baseline().policy;
        let (p, fnp) = reduced_adversary_oracle(&m, &clf, 0.0, 16).unwrap();
        assert_eq!(p, AdversaryPolicy::identity(2));
        assert_eq!(fnp, false_negative_prob(&m, &AdversaryPolicy::identity(2), &clf));

        let br = adversary_best_response(&m, &clf, 0.0).unwrap();
        assert!((br.policy.a_matrix() - DMatrix::identity(2, 2)).amax() <= 1e-4);
        assert!(br.policy.w_mean().norm() <= 1e-6);
        assert!(br.policy.w_cov().trace() <= 1e-6);
        assert!((br.achieved_fn - fnp).abs() <= 1e-12);
    }

    #[test]
    fn oracle_rejects_zero_weights() {
        let m = synthetic_example();
        let clf = ClassifierPolicy::new(v(&[0.0, 0.0]), 1.0).unwrap();
        assert!(matches!(reduced_adversary_oracle(&m, &clf, 1.0, 8), Err(Error::DegeneratePolicy(_))));
        assert!(matches!(adversary_best_response(&m, &clf, 1.0), Err(Error::DegeneratePolicy(_))));
    }

    #[test]
    fn adversary_outputs_are_feasible() {
        let m = synthetic_example();
        let clf = baseline().policy;
        for eps in [0.1, 0.5, 2.0, 5.0] {
            let br = adversary_best_response(&m, &clf, eps).unwrap();
            assert!(manipulation_cost(&m, &br.policy) <= eps * (1.0 + BUDGET_TOL));
            assert!(min_eigenvalue(br.policy.w_cov()) >= -1e-9);
            assert!(feasible_adversary(&m, &br.policy, eps * (1.0 + BUDGET_TOL)));
            let no_attack = false_negative_prob(&m, &AdversaryPolicy::identity(2), &clf);
            assert!(br.achieved_fn >= no_attack - 1e-12);
        }
    }

    #[test]
    fn sdp_matches_oracle_when_ratio_positive() {
        // a weak classifier facing a large budget: the optimal attack pushes
        // the false-negative rate past 1/2, where the perspective SDP is exact
        let m = synthetic_example();
        let clf = ClassifierPolicy::new(v(&[0.3, 0.4]), -1.0).unwrap();
        let br = adversary_best_response(&m, &clf, 4.0).unwrap();
        assert!(br.achieved_fn > 0.5, "fn {}", br.achieved_fn);
        let sdp = br
            .candidates
            .iter()
            .find(|c| c.candidate == AdversaryCandidate::SdpNoiseOverTSquared)
            .expect("SDP candidate present");
        let oracle = br
            .candidates
            .iter()
            .find(|c| c.candidate == AdversaryCandidate::ReducedOracle)
            .unwrap();
        assert!(sdp.feasible);
        assert!((sdp.false_negative - oracle.false_negative).abs() <= 1e-4, "{sdp:?} {oracle:?}");
    }

    #[test]
    fn classifier_outputs_are_feasible_under_attack() {
        let m = synthetic_example();
        let clf = baseline().policy;
        let adv = adversary_best_response(&m, &clf, 2.0).unwrap().policy;
        let br = classifier_best_response(&m, &adv, 0.01).unwrap();
        assert!(feasible_classifier(&m, &br.policy, 0.01 + 1e-6));
        assert!(br.achieved_tp >= true_positive_prob(&m, &adv, &clf) - 1e-6);
    }

    #[test]
    fn direction_search_agrees_with_cone_program() {
        let m = synthetic_example();
        let id = AdversaryPolicy::identity(2);
        let cone = classifier_best_response(&m, &id, 0.01).unwrap();
        let search = classifier_direction_search(&m, &id, 0.01, 64).unwrap();
        let tp = true_positive_prob(&m, &id, &search);
        assert!((tp - cone.achieved_tp).abs() <= 1e-7, "{tp} vs {}", cone.achieved_tp);
    }

    #[test]
    fn weak_signal_uses_direction_search() {
        // overlapping classes and a tight delta: best achievable TP < 1/2
        let m = GaussianClassModel::new(
            v(&[0.5, 0.0]),
            SymMatrix::identity(2),
            v(&[0.0, 0.0]),
            SymMatrix::identity(2),
            0.5,
        )
        .unwrap();
        let br = classifier_best_response(&m, &AdversaryPolicy::identity(2), 0.05).unwrap();
        assert_eq!(br.route, ClassifierRoute::DirectionSearch);
        assert!(br.achieved_tp < 0.5);
        assert!(feasible_classifier(&m, &br.policy, 0.05 + 1e-9));
        // analytic optimum: alpha = e1, threshold at the 95% quantile of N(0,1)
        let z95 = std::f64::consts::SQRT_2 * erf_inv(0.9).unwrap();
        let want = 0.5 * crate::numerics::erfc((z95 - 0.5) / std::f64::consts::SQRT_2);
        assert!((br.achieved_tp - want).abs() <= 1e-7, "{} vs {want}", br.achieved_tp);
    }

    #[test]
    fn bad_delta_is_rejected() {
        let m = synthetic_example();
        assert!(classifier_best_response(&m, &AdversaryPolicy::identity(2), 0.5).is_err());
        assert!(classifier_best_response(&m, &AdversaryPolicy::identity(2), 0.0).is_err());
    }
}
