//! Progressive hedging over the scenario set: the classical fixed-weight
//! form solving the no-learning problem, and the revised form that
//! re-weights the scenario policies with beliefs updated along a nominal
//! trajectory, producing the two-layer feedback policy.
//!
//! Scenarios with zero prior probability are excluded from the hedging
//! loop: they contribute nothing to the aggregate or the objective, their
//! beliefs can never revive, and forcing their subproblems into consensus
//! through the multipliers would only stall the stopping criterion. Their
//! multipliers stay at zero and their policies stay at the scenario Riccati
//! solution.

use nalgebra::{DMatrix, DVector};

use crate::belief::{nominal_posterior_update, Belief};
use crate::error::{Error, Result};
use crate::model::{LinearPolicy, SystemModel};
use crate::scenario_dp::{solve_augmented_scenario, solve_scenario_lqg, AugmentationTerms};

/// Penalty, tolerance, and iteration cap for the hedging loop.
#[derive(Debug, Clone)]
pub struct PhaConfig {
    pub penalty: f64,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for PhaConfig {
    fn default() -> Self {
        Self {
            penalty: 1.0,
            tol: 1e-5,
            max_iters: 10_000,
        }
    }
}

impl PhaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.penalty > 0.0 && self.penalty.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "penalty must be positive, got {}",
                self.penalty
            )));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "tolerance must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidModel("max_iters must be positive".into()));
        }
        Ok(())
    }
}

/// Outcome of a hedging run. `converged` holds exactly when the final error
/// dropped below the tolerance.
#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub iterations: usize,
    pub final_err: f64,
    pub converged: bool,
    pub err_history: Vec<f64>,
}

/// Full iterate of the hedging loop.
#[derive(Debug, Clone)]
pub struct PhaState {
    /// Per-scenario subproblem policies at the current iteration.
    pub scenario_policies: Vec<LinearPolicy>,
    /// Multiplier gains `W_{ti}`, indexed `[scenario][stage]`, each m x n.
    pub multipliers: Vec<Vec<DMatrix<f64>>>,
    /// The aggregated implementable policy.
    pub implementable: LinearPolicy,
    /// Nominal states `x̄_t`, t = 0..=T.
    pub nominal_states: Vec<DVector<f64>>,
    /// Nominal beliefs `p̄_t`, t = 0..T-1.
    pub nominal_beliefs: Vec<Belief>,
    /// Completed multiplier-update cycles.
    pub iteration: usize,
    /// Stopping errors, one per completed iteration.
    pub err_history: Vec<f64>,
}

/// How the forward pass weights scenario policies when aggregating.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregationWeights {
    /// Beliefs updated along the nominal trajectory (revised form).
    NominalBelief,
    /// The prior at every stage (classical form, no learning).
    FixedPrior,
}

/// One line of the optional iteration trace.
#[derive(Debug)]
pub struct IterationRecord<'a> {
    pub iteration: usize,
    pub err: f64,
    pub implementable: &'a LinearPolicy,
}

/// Observer invoked once per completed hedging iteration.
pub type IterationObserver<'a> = dyn FnMut(&IterationRecord<'_>) + 'a;

fn check_policies(policies: &[LinearPolicy], model: &SystemModel) -> Result<()> {
    if policies.len() != model.num_scenarios() {
        return Err(Error::DimensionMismatch(format!(
            "{} scenario policies for {} scenarios",
            policies.len(),
            model.num_scenarios()
        )));
    }
    for (i, p) in policies.iter().enumerate() {
        if p.len() != model.horizon {
            return Err(Error::DimensionMismatch(format!(
                "scenario {i} policy has {} gains for horizon {}",
                p.len(),
                model.horizon
            )));
        }
    }
    Ok(())
}

fn weighted_gain(
    policies: &[LinearPolicy],
    belief: &Belief,
    t: usize,
    m: usize,
    n: usize,
) -> DMatrix<f64> {
    let mut k = DMatrix::zeros(m, n);
    for i in belief.support() {
        k += &policies[i].gains[t] * belief.probs()[i];
    }
    k
}

fn weighted_b(model: &SystemModel, belief: &Belief) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(model.state_dim(), model.control_dim());
    for i in belief.support() {
        b += &model.b[i] * belief.probs()[i];
    }
    b
}

fn forward_with(
    policies: &[LinearPolicy],
    model: &SystemModel,
    update_beliefs: bool,
) -> Result<(LinearPolicy, Vec<DVector<f64>>, Vec<Belief>)> {
    check_policies(policies, model)?;
    let t_len = model.horizon;
    let (n, m) = (model.state_dim(), model.control_dim());

    let mut states = Vec::with_capacity(t_len + 1);
    states.push(model.x0.clone());
    let mut beliefs = Vec::with_capacity(t_len);
    beliefs.push(model.prior.clone());
    let mut gains = Vec::with_capacity(t_len);

    for t in 0..t_len {
        let belief = &beliefs[t];
        let k_hat = weighted_gain(policies, belief, t, m, n);
        let u_hat = -(&k_hat * &states[t]);
        let x_next = &model.a * &states[t] + weighted_b(model, belief) * &u_hat;
        if t + 1 < t_len {
            let next_belief = if update_beliefs {
                nominal_posterior_update(belief, &states[t], &u_hat, &x_next, model)?
            } else {
                model.prior.clone()
            };
            beliefs.push(next_belief);
        }
        states.push(x_next);
        gains.push(k_hat);
    }
    Ok((LinearPolicy { gains }, states, beliefs))
}

/// Forward pass of the revised scheme: aggregate the scenario gains with the
/// nominal beliefs stage by stage, propagate the nominal state under the
/// belief-averaged gain matrix (noise enters only through its zero mean),
/// and update the nominal belief after each nominal transition.
pub fn forward_pass(
    scenario_policies: &[LinearPolicy],
    model: &SystemModel,
) -> Result<(LinearPolicy, Vec<DVector<f64>>, Vec<Belief>)> {
    forward_with(scenario_policies, model, true)
}

/// Multiplier update `W_{ti} <- W_{ti} + r (K̂_t - K_{ti})` for every
/// scenario, in scenario order.
pub fn update_multipliers(
    multipliers: &[Vec<DMatrix<f64>>],
    scenario_policies: &[LinearPolicy],
    implementable: &LinearPolicy,
    penalty: f64,
) -> Vec<Vec<DMatrix<f64>>> {
    multipliers
        .iter()
        .zip(scenario_policies)
        .map(|(ws, policy)| {
            ws.iter()
                .zip(implementable.gains.iter().zip(&policy.gains))
                .map(|(w, (k_hat, k))| w + (k_hat - k) * penalty)
                .collect()
        })
        .collect()
}

fn frobenius_sq_diff(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_squared()).sum()
}

fn err_from_parts(
    prev_implementable: &LinearPolicy,
    prev_multipliers: &[Vec<DMatrix<f64>>],
    next_implementable: &LinearPolicy,
    next_multipliers: &[Vec<DMatrix<f64>>],
    penalty: f64,
) -> f64 {
    let policy_term = frobenius_sq_diff(&prev_implementable.gains, &next_implementable.gains);
    let multiplier_term: f64 = prev_multipliers
        .iter()
        .zip(next_multipliers)
        .map(|(a, b)| frobenius_sq_diff(a, b))
        .sum();
    (policy_term + multiplier_term / (penalty * penalty)).sqrt()
}

/// Stopping error between consecutive iterates: the Frobenius norm over the
/// stacked implementable gains plus the multiplier change scaled by `1/r`.
///
/// Distances are measured in gain space: the gains fully determine the
/// linear policies, which keeps the error state-independent.
pub fn compute_err(prev: &PhaState, next: &PhaState, penalty: f64) -> f64 {
    err_from_parts(
        &prev.implementable,
        &prev.multipliers,
        &next.implementable,
        &next.multipliers,
        penalty,
    )
}

/// One hedging iteration: solve the augmented subproblem for every supported
/// scenario against the current anchor and multipliers, re-aggregate, update
/// the multipliers, and append the stopping error to the history.
pub fn pha_iteration(
    state: PhaState,
    model: &SystemModel,
    cfg: &PhaConfig,
    weights: AggregationWeights,
) -> Result<(PhaState, f64)> {
    let mut new_policies = state.scenario_policies.clone();
    for i in model.prior.support() {
        let aug = AugmentationTerms {
            anchor: state.implementable.clone(),
            multiplier_gains: state.multipliers[i].clone(),
            penalty: cfg.penalty,
        };
        new_policies[i] = solve_augmented_scenario(model, i, &aug)?.0;
    }

    let (implementable, nominal_states, nominal_beliefs) = forward_with(
        &new_policies,
        model,
        weights == AggregationWeights::NominalBelief,
    )?;

    let mut new_multipliers = state.multipliers.clone();
    for i in model.prior.support() {
        for ((w, k_hat), k) in new_multipliers[i]
            .iter_mut()
            .zip(&implementable.gains)
            .zip(&new_policies[i].gains)
        {
            *w += (k_hat - k) * cfg.penalty;
        }
    }

    let err = err_from_parts(
        &state.implementable,
        &state.multipliers,
        &implementable,
        &new_multipliers,
        cfg.penalty,
    );

    let mut err_history = state.err_history;
    err_history.push(err);
    let next = PhaState {
        scenario_policies: new_policies,
        multipliers: new_multipliers,
        implementable,
        nominal_states,
        nominal_beliefs,
        iteration: state.iteration + 1,
        err_history,
    };
    Ok((next, err))
}

fn run_pha(
    model: &SystemModel,
    cfg: &PhaConfig,
    weights: AggregationWeights,
    mut observer: Option<&mut IterationObserver<'_>>,
) -> Result<(PhaState, ConvergenceReport)> {
    cfg.validate()?;
    let scenario_policies: Vec<LinearPolicy> = (0..model.num_scenarios())
        .map(|i| solve_scenario_lqg(model, i).map(|(p, _)| p))
        .collect::<Result<_>>()?;
    let (implementable, nominal_states, nominal_beliefs) = forward_with(
        &scenario_policies,
        model,
        weights == AggregationWeights::NominalBelief,
    )?;
    let multipliers =
        vec![
            vec![DMatrix::zeros(model.control_dim(), model.state_dim()); model.horizon];
            model.num_scenarios()
        ];
    let mut state = PhaState {
        scenario_policies,
        multipliers,
        implementable,
        nominal_states,
        nominal_beliefs,
        iteration: 0,
        err_history: Vec::new(),
    };

    loop {
        let (next, err) = pha_iteration(state, model, cfg, weights)?;
        state = next;
        if let Some(obs) = observer.as_deref_mut() {
            obs(&IterationRecord {
                iteration: state.iteration,
                err,
                implementable: &state.implementable,
            });
        }
        let converged = err < cfg.tol;
        if converged || state.iteration >= cfg.max_iters {
            let report = ConvergenceReport {
                iterations: state.iteration,
                final_err: err,
                converged,
                err_history: state.err_history.clone(),
            };
            return Ok((state, report));
        }
    }
}

/// Run the revised two-layer scheme and return the converged implementable
/// policy `u_t(x) = -K̂_t x` with its convergence report. Non-convergence at
/// the iteration cap is reported, not an error; the caller decides.
pub fn run_two_layer(
    model: &SystemModel,
    cfg: &PhaConfig,
) -> Result<(LinearPolicy, ConvergenceReport)> {
    run_two_layer_traced(model, cfg, None)
}

/// [`run_two_layer`] with an optional per-iteration observer.
pub fn run_two_layer_traced(
    model: &SystemModel,
    cfg: &PhaConfig,
    observer: Option<&mut IterationObserver<'_>>,
) -> Result<(LinearPolicy, ConvergenceReport)> {
    let (state, report) = run_pha(model, cfg, AggregationWeights::NominalBelief, observer)?;
    Ok((state.implementable, report))
}

/// Classical progressive hedging on the no-learning problem: identical loop,
/// but the aggregation weights stay at the prior for every stage.
pub fn run_classical_pha(
    model: &SystemModel,
    cfg: &PhaConfig,
) -> Result<(LinearPolicy, ConvergenceReport)> {
    run_classical_pha_traced(model, cfg, None)
}

/// [`run_classical_pha`] with an optional per-iteration observer.
pub fn run_classical_pha_traced(
    model: &SystemModel,
    cfg: &PhaConfig,
    observer: Option<&mut IterationObserver<'_>>,
) -> Result<(LinearPolicy, ConvergenceReport)> {
    let (state, report) = run_pha(model, cfg, AggregationWeights::FixedPrior, observer)?;
    Ok((state.implementable, report))
}

/// Run the revised scheme and return the full final iterate. Used by tests
/// and diagnostics that need the multipliers and nominal trajectory.
pub fn run_two_layer_full(
    model: &SystemModel,
    cfg: &PhaConfig,
) -> Result<(PhaState, ConvergenceReport)> {
    run_pha(model, cfg, AggregationWeights::NominalBelief, None)
}

/// Classical counterpart of [`run_two_layer_full`].
pub fn run_classical_pha_full(
    model: &SystemModel,
    cfg: &PhaConfig,
) -> Result<(PhaState, ConvergenceReport)> {
    run_pha(model, cfg, AggregationWeights::FixedPrior, None)
}
