//! Averaged best-response dynamics and equilibrium checks.
//!
//! At iteration `k` both players compute a best response to the current
//! opponent and move toward it with weight `varpi / k`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::best_response::{
    adversary_best_response_with, classifier_best_response_with, BestResponseOptions, BUDGET_TOL,
};
use crate::error::{Error, Result};
use crate::game::{
    check_compatible, false_negative_prob, feasible_adversary, feasible_classifier, manipulation_cost,
    true_negative_prob, true_positive_prob, GameConfig,
};
use crate::model::GaussianClassModel;
use crate::policy::{AdversaryPolicy, ClassifierPolicy};

/// Slack on the classifier constraint asserted along the trajectory.
pub const TRACE_TN_TOL: f64 = 1e-6;

/// Which adversary iterate the classifier responds to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sweep {
    /// Both players respond to the iteration-`k` opponent.
    #[default]
    Jacobi,
    /// The classifier responds to the already-updated adversary.
    GaussSeidel,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DynamicsOptions {
    pub sweep: Sweep,
    pub best_response: BestResponseOptions,
}

impl DynamicsOptions {
    /// Solver tolerances taken from the game configuration.
    pub fn from_config(config: &GameConfig) -> Self {
        DynamicsOptions {
            sweep: Sweep::Jacobi,
            best_response: BestResponseOptions {
                feas_tol: config.solver_tol,
                ..BestResponseOptions::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub adv_policy: AdversaryPolicy,
    pub clf_policy: ClassifierPolicy,
    pub tp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
    pub tn: f64,
    pub cost: f64,
    /// Adversary utility gained by switching to its best response.
    pub adv_br_gain: f64,
    /// Classifier utility gained by switching to its best response.
    pub clf_br_gain: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Tolerance,
    MaxIters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumTrace {
    pub iterations: Vec<IterationRecord>,
    pub converged: bool,
    pub stop_reason: StopReason,
}

impl EquilibriumTrace {
    fn empty() -> Self {
        EquilibriumTrace {
            iterations: Vec::new(),
            converged: false,
            stop_reason: StopReason::MaxIters,
        }
    }

    /// One JSON object per iteration, newline terminated.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for rec in &self.iterations {
            serde_json::to_writer(&mut w, rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Reads the records written by [`write_jsonl`](Self::write_jsonl).
    /// The stop metadata is not part of that format and comes back as
    /// `MaxIters`, not converged.
    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<IterationRecord>> {
        let mut out = Vec::new();
        for line in r.lines() {
            let line = line?;
            if !line.trim().is_empty() {
                out.push(serde_json::from_str(&line)?);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsOutcome {
    pub adversary: AdversaryPolicy,
    /// Normalized to `max(|alpha|_inf, |beta|) = 1`.
    pub classifier: ClassifierPolicy,
    pub trace: EquilibriumTrace,
}

pub fn run_best_response_dynamics(
    model: &GaussianClassModel,
    config: &GameConfig,
    init: Option<(AdversaryPolicy, ClassifierPolicy)>,
) -> Result<DynamicsOutcome> {
    run_best_response_dynamics_with(model, config, init, &DynamicsOptions::from_config(config))
}

pub fn run_best_response_dynamics_with(
    model: &GaussianClassModel,
    config: &GameConfig,
    init: Option<(AdversaryPolicy, ClassifierPolicy)>,
    opts: &DynamicsOptions,
) -> Result<DynamicsOutcome> {
    config.validate()?;
    let br = &opts.best_response;
    let (mut adv, mut clf) = match init {
        Some((a, c)) => {
            check_compatible(model, &a, &c)?;
            check_feasible(model, &a, &c, config)?;
            (a, c)
        }
        None => {
            let a = AdversaryPolicy::identity(model.dim());
            let c = classifier_best_response_with(model, &a, config.delta, br)?.policy;
            (a, c)
        }
    };

    let mut trace = EquilibriumTrace::empty();
    let fail = |k: usize, e: Error, trace: &EquilibriumTrace| Error::Dynamics {
        iteration: k,
        source: Box::new(e),
        trace: Box::new(trace.clone()),
    };

    for k in 1..=config.max_iters {
        let tp = true_positive_prob(model, &adv, &clf);
        let fn_ = 1.0 - tp;
        let tn = true_negative_prob(model, &clf);
        let cost = manipulation_cost(model, &adv);
        if let Err(e) = check_trace_feasible(k, cost, tn, config) {
            return Err(fail(k, e, &trace));
        }

        let w = config.varpi / k as f64;
        let (adv_br, clf_br, clf_gain) = match opts.sweep {
            Sweep::Jacobi => {
                let (a, c) = rayon::join(
                    || adversary_best_response_with(model, &clf, config.epsilon, br),
                    || classifier_best_response_with(model, &adv, config.delta, br),
                );
                let a = a.map_err(|e| fail(k, e, &trace))?;
                let c = c.map_err(|e| fail(k, e, &trace))?;
                let gain = c.achieved_tp - tp;
                (a, c, gain)
            }
            Sweep::GaussSeidel => {
                let a = adversary_best_response_with(model, &clf, config.epsilon, br).map_err(|e| fail(k, e, &trace))?;
                let moved = adv.lerp(&a.policy, w);
                let c = classifier_best_response_with(model, &moved, config.delta, br)
                    .map_err(|e| fail(k, e, &trace))?;
                // against the opponent the response was computed for
                let gain = c.achieved_tp - true_positive_prob(model, &moved, &clf);
                (a, c, gain)
            }
        };

        trace.iterations.push(IterationRecord {
            k,
            adv_policy: adv.clone(),
            clf_policy: clf.clone(),
            tp,
            fn_,
            tn,
            cost,
            adv_br_gain: adv_br.achieved_fn - fn_,
            clf_br_gain: clf_gain,
        });

        let next_adv = adv.lerp(&adv_br.policy, w);
        let next_clf = clf.lerp(&clf_br.policy, w);
        let change = next_adv.max_abs_diff(&adv).max(next_clf.max_abs_diff(&clf));
        log::debug!("iteration {k}: fn {fn_:.6} tn {tn:.6} change {change:.3e}");
        adv = next_adv;
        clf = next_clf;
        if change < config.conv_tol {
            trace.converged = true;
            trace.stop_reason = StopReason::Tolerance;
            break;
        }
    }

    let classifier = clf.normalized().map_err(|e| fail(config.max_iters, e, &trace))?;
    Ok(DynamicsOutcome {
        adversary: adv,
        classifier,
        trace,
    })
}

fn check_trace_feasible(k: usize, cost: f64, tn: f64, config: &GameConfig) -> Result<()> {
    if cost > config.epsilon * (1.0 + BUDGET_TOL) {
        return Err(Error::InvariantViolation(format!(
            "iteration {k}: manipulation cost {cost} exceeds budget {}",
            config.epsilon
        )));
    }
    if tn < 1.0 - config.delta - TRACE_TN_TOL {
        return Err(Error::InvariantViolation(format!(
            "iteration {k}: true negative rate {tn} below {}",
            1.0 - config.delta
        )));
    }
    Ok(())
}

fn check_feasible(
    model: &GaussianClassModel,
    adv: &AdversaryPolicy,
    clf: &ClassifierPolicy,
    config: &GameConfig,
) -> Result<()> {
    if !feasible_adversary(model, adv, config.epsilon) {
        return Err(Error::Infeasible(format!(
            "adversary cost {} exceeds budget {}",
            manipulation_cost(model, adv),
            config.epsilon
        )));
    }
    if !feasible_classifier(model, clf, config.delta) {
        return Err(Error::Infeasible(format!(
            "classifier true negative rate {} below {} or outside the unit box",
            true_negative_prob(model, clf),
            1.0 - config.delta
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub adv_gain: f64,
    pub clf_gain: f64,
    pub is_equilibrium: bool,
}

/// Utility each player would gain by deviating to a best response.
pub fn verify_equilibrium(
    model: &GaussianClassModel,
    adv: &AdversaryPolicy,
    clf: &ClassifierPolicy,
    config: &GameConfig,
    tol: f64,
) -> Result<EquilibriumReport> {
    config.validate()?;
    check_compatible(model, adv, clf)?;
    check_feasible(model, adv, clf, config)?;
    let br = DynamicsOptions::from_config(config).best_response;
    let adv_br = adversary_best_response_with(model, clf, config.epsilon, &br)?;
    let clf_br = classifier_best_response_with(model, adv, config.delta, &br)?;
    let adv_gain = adv_br.achieved_fn - false_negative_prob(model, adv, clf);
    let clf_gain = clf_br.achieved_tp - true_positive_prob(model, adv, clf);
    Ok(EquilibriumReport {
        adv_gain,
        clf_gain,
        is_equilibrium: adv_gain <= tol && clf_gain <= tol,
    })
}
