//! Closed-form evaluation of the game.
//!
//! Under the Gaussian model the classifier score `alpha^T y + beta` is itself
//! Gaussian within each class, so every utility and constraint reduces to one
//! error-function evaluation.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::GaussianClassModel;
use crate::numerics::{erfc, min_eigenvalue};
use crate::policy::{AdversaryPolicy, ClassifierPolicy, CLASSIFIER_BOX_TOL, NOISE_PSD_TOL};

/// Variances at or below this are treated as a point mass.
pub const DEGENERATE_VARIANCE: f64 = 1e-300;
/// Relative slack on the feasibility predicates.
pub const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawConfig", into = "RawConfig")]
pub struct GameConfig {
    pub delta: f64,
    pub epsilon: f64,
    pub varpi: f64,
    pub max_iters: usize,
    pub conv_tol: f64,
    pub solver_tol: f64,
}

#[derive(Serialize, Deserialize)]
struct RawConfig {
    delta: f64,
    epsilon: f64,
    varpi: f64,
    max_iters: usize,
    conv_tol: f64,
    solver_tol: f64,
}

impl TryFrom<RawConfig> for GameConfig {
    type Error = Error;

    fn try_from(r: RawConfig) -> Result<Self> {
        let c = GameConfig {
            delta: r.delta,
            epsilon: r.epsilon,
            varpi: r.varpi,
            max_iters: r.max_iters,
            conv_tol: r.conv_tol,
            solver_tol: r.solver_tol,
        };
        c.validate()?;
        Ok(c)
    }
}

impl From<GameConfig> for RawConfig {
    fn from(c: GameConfig) -> Self {
        RawConfig {
            delta: c.delta,
            epsilon: c.epsilon,
            varpi: c.varpi,
            max_iters: c.max_iters,
            conv_tol: c.conv_tol,
            solver_tol: c.solver_tol,
        }
    }
}

impl Default for GameConfig {
    /// The illustrative game: `delta = 0.01`, `epsilon = 2`, `varpi = 0.5`,
    /// 200 iterations, `conv_tol = 1e-5`, `solver_tol = 1e-8`.
    fn default() -> Self {
        GameConfig {
            delta: 0.01,
            epsilon: 2.0,
            varpi: 0.5,
            max_iters: 200,
            conv_tol: 1e-5,
            solver_tol: 1e-8,
        }
    }
}

impl GameConfig {
    pub fn new(delta: f64, epsilon: f64) -> Result<Self> {
        let c = GameConfig {
            delta,
            epsilon,
            ..GameConfig::default()
        };
        c.validate()?;
        Ok(c)
    }

    /// `delta` in `(0, 1/2)`, `epsilon >= 0`, `varpi` in `(0, 1)`.
    ///
    /// `epsilon = 0` is accepted: it is the zero-budget limit where the game
    /// collapses to the non-adversarial problem.
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 0.5) {
            return Err(Error::InvalidConfig(format!("delta must lie in (0, 0.5), got {}", self.delta)));
        }
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidConfig(format!("epsilon must be finite and >= 0, got {}", self.epsilon)));
        }
        if !(self.varpi > 0.0 && self.varpi < 1.0) {
            return Err(Error::InvalidConfig(format!("varpi must lie in (0, 1), got {}", self.varpi)));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be positive".into()));
        }
        for (v, name) in [(self.conv_tol, "conv_tol"), (self.solver_tol, "solver_tol")] {
            if !(v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Mean and variance of `alpha^T y + beta` given `theta = +1`.
pub fn positive_score_moments(model: &GaussianClassModel, adv: &AdversaryPolicy, clf: &ClassifierPolicy) -> (f64, f64) {
    assert_compatible(model, adv, clf);
    let alpha = clf.weights();
    let at_alpha = adv.a_matrix().transpose() * alpha;
    let mean = at_alpha.dot(model.mu_pos()) + alpha.dot(adv.w_mean()) + clf.bias();
    let var = model.sigma_pos().quad_form(&at_alpha) + adv.w_cov().quad_form(alpha);
    (mean, var.max(0.0))
}

/// Mean and variance of `alpha^T x + beta` given `theta = -1`.
pub fn negative_score_moments(model: &GaussianClassModel, clf: &ClassifierPolicy) -> (f64, f64) {
    assert_eq!(model.dim(), clf.dim(), "classifier dimension must match the model");
    let alpha = clf.weights();
    let mean = alpha.dot(model.mu_neg()) + clf.bias();
    let var = model.sigma_neg().quad_form(alpha);
    (mean, var.max(0.0))
}

/// `P{score > 0}` for a Gaussian score, with the point-mass limit
/// `{> 0 -> 1, < 0 -> 0, = 0 -> 1/2}`.
fn prob_score_positive(mean: f64, var: f64) -> f64 {
    if var <= DEGENERATE_VARIANCE {
        return if mean > 0.0 {
            1.0
        } else if mean < 0.0 {
            0.0
        } else {
            0.5
        };
    }
    0.5 * erfc(-mean / (2.0 * var).sqrt())
}

/// Standardized argument `(-mean) / sqrt(2 var)` of the positive-class score;
/// the false-negative probability is `(1 + erf(arg)) / 2`.
pub fn false_negative_argument(model: &GaussianClassModel, adv: &AdversaryPolicy, clf: &ClassifierPolicy) -> f64 {
    let (mean, var) = positive_score_moments(model, adv, clf);
    if var <= DEGENERATE_VARIANCE {
        return -mean.signum() * f64::INFINITY;
    }
    -mean / (2.0 * var).sqrt()
}

/// Classifier utility `U_c = P{z = +1 | theta = +1}`.
pub fn true_positive_prob(model: &GaussianClassModel, adv: &AdversaryPolicy, clf: &ClassifierPolicy) -> f64 {
    let (mean, var) = positive_score_moments(model, adv, clf);
    prob_score_positive(mean, var)
}

/// Adversary utility `U_a = P{z = -1 | theta = +1} = 1 - U_c`.
pub fn false_negative_prob(model: &GaussianClassModel, adv: &AdversaryPolicy, clf: &ClassifierPolicy) -> f64 {
    1.0 - true_positive_prob(model, adv, clf)
}

/// Classifier constraint `C_c = P{z = -1 | theta = -1}`. Negative-class
/// points are never manipulated, so no adversary enters.
pub fn true_negative_prob(model: &GaussianClassModel, clf: &ClassifierPolicy) -> f64 {
    let (mean, var) = negative_score_moments(model, clf);
    prob_score_positive(-mean, var)
}

/// Adversary constraint `C_a = tr((I - A) M (I - A)^T) + |mu_w|^2 + tr(Sigma_w)`
/// with `M = Sigma_+ + mu_+ mu_+^T`.
///
/// This omits the cross term `-2 mu_w^T (I - A) mu_+` of the mean squared
/// displacement, so it equals `E{|x - y|^2 | theta = +1}` only when that term
/// vanishes (e.g. `A = I` or `mu_w = 0`). See
/// [`expected_squared_displacement`] for the exact expectation.
pub fn manipulation_cost(model: &GaussianClassModel, adv: &AdversaryPolicy) -> f64 {
    assert_eq!(model.dim(), adv.dim(), "adversary dimension must match the model");
    let n = model.dim();
    let shift = DMatrix::<f64>::identity(n, n) - adv.a_matrix();
    let second_moment = model.positive_second_moment();
    let distortion = second_moment.congruence(&shift).trace();
    (distortion + adv.w_mean().norm_squared() + adv.w_cov().trace()).max(0.0)
}

/// `-2 mu_w^T (I - A) mu_+`
pub fn displacement_cross_term(model: &GaussianClassModel, adv: &AdversaryPolicy) -> f64 {
    assert_eq!(model.dim(), adv.dim(), "adversary dimension must match the model");
    let n = model.dim();
    let shift = DMatrix::<f64>::identity(n, n) - adv.a_matrix();
    -2.0 * adv.w_mean().dot(&(shift * model.mu_pos()))
}

/// Exact `E{|x - y|^2 | theta = +1}` under `y = A x + w`.
pub fn expected_squared_displacement(model: &GaussianClassModel, adv: &AdversaryPolicy) -> f64 {
    (manipulation_cost(model, adv) + displacement_cross_term(model, adv)).max(0.0)
}

pub fn feasible_classifier(model: &GaussianClassModel, clf: &ClassifierPolicy, delta: f64) -> bool {
    let in_box = clf.weights().amax() <= 1.0 + CLASSIFIER_BOX_TOL && clf.bias().abs() <= 1.0 + CLASSIFIER_BOX_TOL;
    in_box && true_negative_prob(model, clf) >= 1.0 - delta - FEASIBILITY_TOL
}

pub fn feasible_adversary(model: &GaussianClassModel, adv: &AdversaryPolicy, epsilon: f64) -> bool {
    manipulation_cost(model, adv) <= epsilon * (1.0 + FEASIBILITY_TOL) && min_eigenvalue(adv.w_cov()) >= -NOISE_PSD_TOL
}

/// Checked form of the dimension precondition shared by all evaluations.
pub fn check_compatible(model: &GaussianClassModel, adv: &AdversaryPolicy, clf: &ClassifierPolicy) -> Result<()> {
    if adv.dim() != model.dim() {
        return Err(Error::dim(model.dim(), adv.dim(), "adversary policy vs model"));
    }
    if clf.dim() != model.dim() {
        return Err(Error::dim(model.dim(), clf.dim(), "classifier policy vs model"));
    }
    Ok(())
}

fn assert_compatible(model: &GaussianClassModel, adv: &AdversaryPolicy, clf: &ClassifierPolicy) {
    if let Err(e) = check_compatible(model, adv, clf) {
        panic!("{e}");
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GameMetrics {
    pub true_positive: f64,
    pub false_negative: f64,
    pub true_negative: f64,
    pub manipulation_cost: f64,
}

impl GameMetrics {
    pub fn evaluate(model: &GaussianClassModel, adv: &AdversaryPolicy, clf: &ClassifierPolicy) -> Result<Self> {
        check_compatible(model, adv, clf)?;
        let true_positive = true_positive_prob(model, adv, clf);
        Ok(GameMetrics {
            true_positive,
            false_negative: 1.0 - true_positive,
            true_negative: true_negative_prob(model, clf),
            manipulation_cost: manipulation_cost(model, adv),
        })
    }
}

/// Metrics together with the game constants they were evaluated under.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(flatten)]
    pub metrics: GameMetrics,
    pub delta: f64,
    pub epsilon: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::synthetic_example;
    use crate::numerics::SymMatrix;
    use nalgebra::DVector;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(xs)
    }

    #[test]
    fn zero_mean_score_is_a_coin_flip() {
        let m = synthetic_example();
        // alpha^T mu_+ + beta = 0 with alpha = (1, 0), beta = -3
        let clf = ClassifierPolicy::new(v(&[1.0, 0.0]), -1.0).unwrap();
        let adv = AdversaryPolicy::new(DMatrix::identity(2, 2) / 3.0, DVector::zeros(2), SymMatrix::zeros(2)).unwrap();
        assert_eq!(true_positive_prob(&m, &adv, &clf), 0.5);
    }

    #[test]
    fn all_positive_classifier() {
        let m = synthetic_example();
        let clf = ClassifierPolicy::new(v(&[0.0, 0.0]), 1.0).unwrap();
        assert_eq!(true_negative_prob(&m, &clf), 0.0);
        assert_eq!(true_positive_prob(&m, &AdversaryPolicy::identity(2), &clf), 1.0);
        let neg = ClassifierPolicy::new(v(&[0.0, 0.0]), -1.0).unwrap();
        assert_eq!(true_negative_prob(&m, &neg), 1.0);
        let tie = ClassifierPolicy::new(v(&[0.0, 0.0]), 0.0).unwrap();
        assert_eq!(true_negative_prob(&m, &tie), 0.5);
    }

    #[test]
    fn manipulation_cost_closed_form() {
        let m = synthetic_example();
        assert_eq!(manipulation_cost(&m, &AdversaryPolicy::identity(2)), 0.0);
        let erase = AdversaryPolicy::new(DMatrix::zeros(2, 2), DVector::zeros(2), SymMatrix::zeros(2)).unwrap();
        // trace(Sigma_+) + |mu_+|^2 = 1.2 + 18
        assert!((manipulation_cost(&m, &erase) - 19.2).abs() < 1e-12);
        let shift = AdversaryPolicy::new(DMatrix::identity(2, 2), v(&[1.0, -2.0]), SymMatrix::from_diagonal(&[0.5, 0.25])).unwrap();
        assert!((manipulation_cost(&m, &shift) - 5.75).abs() < 1e-12);
    }

    #[test]
    fn feasibility_predicates() {
        let m = synthetic_example();
        assert!(feasible_adversary(&m, &AdversaryPolicy::identity(2), 0.0));
        let shift = AdversaryPolicy::new(DMatrix::identity(2, 2), v(&[1.0, 0.0]), SymMatrix::zeros(2)).unwrap();
        assert!(feasible_adversary(&m, &shift, 1.0));
        let doubled = AdversaryPolicy::new(DMatrix::identity(2, 2), v(&[2.0, 0.0]), SymMatrix::zeros(2)).unwrap();
        assert!(!feasible_adversary(&m, &doubled, 1.0));

        let all_neg = ClassifierPolicy::new(v(&[0.0, 0.0]), -1.0).unwrap();
        assert!(feasible_classifier(&m, &all_neg, 0.01));
        let all_pos = ClassifierPolicy::new(v(&[0.0, 0.0]), 1.0).unwrap();
        assert!(!feasible_classifier(&m, &all_pos, 0.01));
    }

    #[test]
    fn config_validation() {
        assert!(GameConfig::new(0.01, 2.0).is_ok());
        assert!(GameConfig::new(0.0, 2.0).is_err());
        assert!(GameConfig::new(0.5, 2.0).is_err());
        assert!(GameConfig::new(0.1, -1.0).is_err());
        assert!(GameConfig::new(0.1, 0.0).is_ok());
        let bad = GameConfig {
            varpi: 1.0,
            ..GameConfig::default()
        };
        assert!(bad.validate().is_err());
        let json = serde_json::to_string(&GameConfig::default()).unwrap();
        assert!(serde_json::from_str::<GameConfig>(&json.replace("0.5", "1.5")).is_err());
    }

    #[test]
    fn metrics_report_echoes_constants() {
        let m = synthetic_example();
        let clf = ClassifierPolicy::new(v(&[0.3, 0.4]), -1.0).unwrap();
        let metrics = GameMetrics::evaluate(&m, &AdversaryPolicy::identity(2), &clf).unwrap();
        let report = MetricsReport { metrics, delta: 0.01, epsilon: 2.0 };
        let json = serde_json::to_value(report).unwrap();
        for key in ["true_positive", "false_negative", "true_negative", "manipulation_cost", "delta", "epsilon"] {
            assert!(json.get(key).is_some(), "{key}");
        }
        let clf3 = ClassifierPolicy::new(v(&[0.3, 0.4, 0.0]), -1.0).unwrap();
        assert!(GameMetrics::evaluate(&m, &AdversaryPolicy::identity(2), &clf3).is_err());
    }
}
