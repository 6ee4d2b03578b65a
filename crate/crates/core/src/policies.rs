//! The decision algorithms compared by the harness, behind one uniform
//! interface: (stage, state, belief, randomness) -> control.
//!
//! All of them are linear in the state for a fixed (stage, belief, random
//! draw) except the DP benchmark's first stage. The rolling algorithms
//! (DUL, GRE, EPS_GRE, TS) select or average the scenario Riccati policies
//! for the remaining horizon; those gains are state-independent, so they
//! are memoized per stage in [`TruncatedGainTable`].

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};

use crate::belief::Belief;
use crate::error::{Error, Result};
use crate::model::{LinearPolicy, SystemModel};
use crate::pha::{run_two_layer, PhaConfig};
use crate::scenario_dp::solve_scenario_lqg;

pub use crate::dp2::dp2_decide;

/// Everything a decision rule may look at: the stage, the observed state,
/// the realized posterior, and a deterministic randomness stream owned by
/// the caller.
pub struct DecisionContext<'a> {
    pub t: usize,
    pub x: &'a DVector<f64>,
    pub belief: &'a Belief,
    pub rng: &'a mut dyn RngCore,
}

/// The seven compared algorithms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlgorithmKind {
    /// Exact DP benchmark on the augmented state (horizon 2, scalar only).
    Dp2,
    /// Static two-layer policy computed once from the prior.
    Tl,
    /// Two-layer policy re-solved each stage from the realized posterior.
    TlRolling,
    /// Posterior-weighted average of the remaining-horizon scenario gains.
    Dul,
    /// Scenario with the largest posterior probability.
    Greedy,
    /// Greedy with probability 1 - epsilon, a uniformly random supported
    /// scenario otherwise.
    EpsGreedy { epsilon: f64 },
    /// Scenario sampled from the posterior.
    Thompson,
}

impl AlgorithmKind {
    /// Canonical text label, used in CLI output and parsing.
    pub fn label(&self) -> &'static str {
        match self {
            AlgorithmKind::Dp2 => "DP2",
            AlgorithmKind::Tl => "TL",
            AlgorithmKind::TlRolling => "TL_R",
            AlgorithmKind::Dul => "DUL",
            AlgorithmKind::Greedy => "GRE",
            AlgorithmKind::EpsGreedy { .. } => "EPS_GRE",
            AlgorithmKind::Thompson => "TS",
        }
    }

    /// All seven algorithms in reporting order.
    pub fn all(epsilon: f64) -> Vec<Self> {
        vec![
            AlgorithmKind::Dp2,
            AlgorithmKind::Tl,
            AlgorithmKind::TlRolling,
            AlgorithmKind::Dul,
            AlgorithmKind::Greedy,
            AlgorithmKind::EpsGreedy { epsilon },
            AlgorithmKind::Thompson,
        ]
    }

    /// Stable stream tag so each algorithm draws from its own substreams.
    /// The epsilon bits fold in so two epsilon-greedy variants in one run
    /// stay independent.
    pub(crate) fn stream_tag(&self) -> u64 {
        match self {
            AlgorithmKind::Dp2 => 1,
            AlgorithmKind::Tl => 2,
            AlgorithmKind::TlRolling => 3,
            AlgorithmKind::Dul => 4,
            AlgorithmKind::Greedy => 5,
            AlgorithmKind::EpsGreedy { epsilon } => 6 ^ (epsilon.to_bits() << 3),
            AlgorithmKind::Thompson => 7,
        }
    }
}

impl std::fmt::Display for AlgorithmKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// First-stage Riccati gains of every remaining-horizon scenario
/// subproblem, indexed `[stage][scenario]`. Gains depend only on the number
/// of stages left, never on the state or belief, so one table serves every
/// rollout of an experiment.
#[derive(Debug, Clone)]
pub struct TruncatedGainTable {
    first_gains: Vec<Vec<DMatrix<f64>>>,
}

impl TruncatedGainTable {
    pub fn new(model: &SystemModel) -> Result<Self> {
        let mut first_gains = Vec::with_capacity(model.horizon);
        for t in 0..model.horizon {
            let sub = model.truncated(t, model.x0.clone(), model.prior.clone())?;
            let gains = (0..model.num_scenarios())
                .map(|i| solve_scenario_lqg(&sub, i).map(|(p, _)| p.gains[0].clone()))
                .collect::<Result<Vec<_>>>()?;
            first_gains.push(gains);
        }
        Ok(Self { first_gains })
    }

    /// Scenario `i`'s first gain for the subproblem starting at stage `t`.
    pub fn first_gain(&self, t: usize, scenario: usize) -> &DMatrix<f64> {
        &self.first_gains[t][scenario]
    }

    pub fn horizon(&self) -> usize {
        self.first_gains.len()
    }
}

/// Apply the static two-layer policy: `-K̂_t x`. The context belief is
/// ignored on purpose; the policy embeds only nominal learning.
pub fn tl_decide(ctx: DecisionContext<'_>, tl_policy: &LinearPolicy) -> DVector<f64> {
    tl_policy.control(ctx.t, ctx.x)
}

/// Re-solve the two-layer policy on the remaining horizon with the current
/// state and posterior as initial data, and apply its first gain.
pub fn tl_rolling_decide(
    ctx: DecisionContext<'_>,
    model: &SystemModel,
    cfg: &PhaConfig,
) -> Result<DVector<f64>> {
    let sub = model.truncated(ctx.t, ctx.x.clone(), ctx.belief.clone())?;
    let (policy, report) = run_two_layer(&sub, cfg)?;
    if !report.converged {
        return Err(Error::NotConverged {
            iterations: report.iterations,
            final_err: report.final_err,
            report,
        });
    }
    Ok(policy.control(0, ctx.x))
}

/// Posterior-weighted average of the remaining-horizon scenario gains.
pub fn dul_decide(ctx: DecisionContext<'_>, table: &TruncatedGainTable) -> DVector<f64> {
    let first = table.first_gain(ctx.t, 0);
    let mut k = DMatrix::zeros(first.nrows(), first.ncols());
    for i in ctx.belief.support() {
        k += table.first_gain(ctx.t, i) * ctx.belief.probs()[i];
    }
    -(k * ctx.x)
}

/// Remaining-horizon control of the scenario with the largest posterior
/// probability, ties to the lowest index.
pub fn greedy_decide(ctx: DecisionContext<'_>, table: &TruncatedGainTable) -> DVector<f64> {
    let best = ctx.belief.argmax();
    -(table.first_gain(ctx.t, best) * ctx.x)
}

/// Inverse-CDF scenario draw from the belief, given a uniform variate.
/// Zero-probability scenarios can never be selected.
fn sample_scenario(belief: &Belief, v: f64) -> usize {
    let mut cumulative = 0.0;
    let mut pick = belief.len() - 1;
    for (i, p) in belief.probs().iter().enumerate() {
        if *p == 0.0 {
            continue;
        }
        cumulative += p;
        pick = i;
        if v < cumulative {
            break;
        }
    }
    pick
}

/// Greedy with probability `1 - epsilon`; otherwise a scenario sampled from
/// the posterior. A single uniform draw decides both the branch and the
/// randomized pick (the draw conditioned on landing below epsilon is itself
/// uniform).
pub fn eps_greedy_decide(
    ctx: DecisionContext<'_>,
    table: &TruncatedGainTable,
    epsilon: f64,
) -> DVector<f64> {
    let v: f64 = ctx.rng.random();
    if v >= epsilon {
        return greedy_decide(ctx, table);
    }
    let pick = sample_scenario(ctx.belief, v / epsilon);
    -(table.first_gain(ctx.t, pick) * ctx.x)
}

/// Remaining-horizon control of a scenario sampled from the posterior.
pub fn thompson_decide(ctx: DecisionContext<'_>, table: &TruncatedGainTable) -> DVector<f64> {
    let v: f64 = ctx.rng.random();
    let pick = sample_scenario(ctx.belief, v);
    -(table.first_gain(ctx.t, pick) * ctx.x)
}
