//! Monte Carlo evaluation harness: sample (scenario, noise-path) pairs once,
//! roll every algorithm out on the same paths (common random numbers), and
//! accumulate cost statistics.
//!
//! Randomness discipline: every stream is derived by a splitmix-style key
//! schedule from `(master_seed, purpose, path_index, ...)`. Path sampling
//! never shares a stream with decision randomness, and each (path,
//! algorithm, stage) decision gets its own substream, so adding or removing
//! algorithms never perturbs anyone else's draws. Rollouts run in parallel
//! but reduce in path order, so results are identical for any worker count.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::belief::{posterior_update, Transition};
use crate::error::{Error, Result};
use crate::model::SystemModel;
use crate::pha::{run_two_layer, ConvergenceReport, PhaConfig};
use crate::policies::{
    dp2_decide, dul_decide, eps_greedy_decide, greedy_decide, thompson_decide, tl_decide,
    tl_rolling_decide, AlgorithmKind, DecisionContext, TruncatedGainTable,
};

/// Stream purpose tags.
const PATH_STREAM: u64 = 0x70617468; // "path"
const DECISION_STREAM: u64 = 0x64656369; // "deci"

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent, reproducible stream from the master seed and a
/// key of stream words.
pub(crate) fn derive_rng(master: u64, words: &[u64]) -> ChaCha8Rng {
    let mut state = mix(master ^ 0xA076_1D64_78BD_642F);
    for &w in words {
        state = mix(state.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(w));
    }
    let mut seed = [0u8; 32];
    for (i, chunk) in seed.chunks_exact_mut(8).enumerate() {
        let out = mix(state.wrapping_add((i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)));
        chunk.copy_from_slice(&out.to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

/// What to simulate: how many paths, from which master seed, for which
/// algorithms.
#[derive(Debug, Clone)]
pub struct SimulationPlan {
    pub num_sims: usize,
    pub master_seed: u64,
    pub algorithms: Vec<AlgorithmKind>,
}

/// One sampled environment: the true scenario index and the noise sequence.
#[derive(Debug, Clone)]
pub struct SamplePath {
    pub true_scenario: usize,
    pub noises: Vec<DVector<f64>>,
}

/// Mean, sample standard deviation, and standard error over the successful
/// rollouts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostStats {
    pub mean: f64,
    pub std_dev: f64,
    pub std_err: f64,
    pub n: usize,
}

/// Fixed-order pairwise summation, deterministic for any worker count.
fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

impl CostStats {
    pub fn from_samples(costs: &[f64]) -> Self {
        let n = costs.len();
        if n == 0 {
            return Self {
                mean: 0.0,
                std_dev: 0.0,
                std_err: 0.0,
                n: 0,
            };
        }
        let mean = pairwise_sum(costs) / n as f64;
        if n == 1 {
            return Self {
                mean,
                std_dev: 0.0,
                std_err: 0.0,
                n,
            };
        }
        let sq_dev: Vec<f64> = costs.iter().map(|c| (c - mean) * (c - mean)).collect();
        let var = pairwise_sum(&sq_dev) / (n as f64 - 1.0);
        let std_dev = var.sqrt();
        Self {
            mean,
            std_dev,
            std_err: std_dev / (n as f64).sqrt(),
            n,
        }
    }
}

/// Per-algorithm outcome of one experiment.
#[derive(Debug, Clone)]
pub struct AlgorithmOutcome {
    pub kind: AlgorithmKind,
    pub stats: CostStats,
    /// Rollouts aborted by a degenerate belief update or an inner hedging
    /// loop that failed to converge. Excluded from the statistics.
    pub failures: usize,
    /// Cost per path, `None` where the rollout failed. Shared paths across
    /// algorithms make paired comparisons exact.
    pub per_path: Vec<Option<f64>>,
}

/// All outcomes of one experiment, in the requested algorithm order.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub experiment_id: String,
    pub per_algorithm: Vec<AlgorithmOutcome>,
}

impl ExperimentResult {
    pub fn outcome(&self, kind: AlgorithmKind) -> Option<&AlgorithmOutcome> {
        self.per_algorithm.iter().find(|o| o.kind == kind)
    }

    pub fn outcome_by_label(&self, label: &str) -> Option<&AlgorithmOutcome> {
        self.per_algorithm.iter().find(|o| o.kind.label() == label)
    }
}

/// Symmetric PSD square root, used to color standard normal draws. Handles
/// semidefinite covariances (including zero).
fn psd_sqrt(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = nalgebra::linalg::SymmetricEigen::new(cov.clone());
    let sqrt_vals = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    &eig.eigenvectors * sqrt_vals * eig.eigenvectors.transpose()
}

fn sample_scenario(rng: &mut ChaCha8Rng, prior: &[f64]) -> usize {
    let v: f64 = rng.random();
    let mut cumulative = 0.0;
    let mut pick = 0;
    let mut any = false;
    for (i, p) in prior.iter().enumerate() {
        if *p == 0.0 {
            continue;
        }
        cumulative += p;
        pick = i;
        any = true;
        if v < cumulative {
            break;
        }
    }
    debug_assert!(any, "prior has no support");
    pick
}

/// Sample `num_sims` (scenario, noise-path) pairs. Path `k` draws from the
/// stream keyed by `(master_seed, PATH, k)`: the scenario by inverse CDF on
/// the prior, then the `T` noise vectors. The same list is reused by every
/// algorithm.
pub fn draw_sample_paths(model: &SystemModel, plan: &SimulationPlan) -> Vec<SamplePath> {
    let noise_factor = psd_sqrt(&model.noise_cov);
    let n = model.state_dim();
    (0..plan.num_sims)
        .map(|k| {
            let mut rng = derive_rng(plan.master_seed, &[PATH_STREAM, k as u64]);
            let true_scenario = sample_scenario(&mut rng, model.prior.probs());
            let noises = (0..model.horizon)
                .map(|_| {
                    let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
                    &noise_factor * z
                })
                .collect();
            SamplePath {
                true_scenario,
                noises,
            }
        })
        .collect()
}

/// Artifacts shared by every rollout of one experiment: the two-layer policy
/// solved once from the prior, the memoized truncated Riccati gains, and the
/// DP benchmark's first-stage control (state and belief are the same for
/// every path at stage 0).
#[derive(Debug, Clone)]
pub struct SharedArtifacts {
    pub tl_policy: crate::model::LinearPolicy,
    pub tl_report: ConvergenceReport,
    pub gain_table: TruncatedGainTable,
    pub dp2_time0: Option<DVector<f64>>,
}

impl SharedArtifacts {
    pub fn new(model: &SystemModel, cfg: &PhaConfig, algorithms: &[AlgorithmKind]) -> Result<Self> {
        let (tl_policy, tl_report) = run_two_layer(model, cfg)?;
        if !tl_report.converged {
            return Err(Error::NotConverged {
                iterations: tl_report.iterations,
                final_err: tl_report.final_err,
                report: tl_report,
            });
        }
        let gain_table = TruncatedGainTable::new(model)?;
        let dp2_time0 = if algorithms.iter().any(|k| matches!(k, AlgorithmKind::Dp2)) {
            let mut rng = derive_rng(0, &[]);
            Some(dp2_decide(
                DecisionContext {
                    t: 0,
                    x: &model.x0,
                    belief: &model.prior,
                    rng: &mut rng,
                },
                model,
            )?)
        } else {
            None
        };
        Ok(Self {
            tl_policy,
            tl_report,
            gain_table,
            dp2_time0,
        })
    }
}

fn decide(
    kind: AlgorithmKind,
    ctx: DecisionContext<'_>,
    model: &SystemModel,
    shared: &SharedArtifacts,
    cfg: &PhaConfig,
) -> Result<DVector<f64>> {
    match kind {
        AlgorithmKind::Tl => Ok(tl_decide(ctx, &shared.tl_policy)),
        AlgorithmKind::TlRolling => {
            // Stage 0 is the same full-horizon solve the shared policy came
            // from: prior belief, initial state.
            if ctx.t == 0 {
                Ok(shared.tl_policy.control(0, ctx.x))
            } else {
                tl_rolling_decide(ctx, model, cfg)
            }
        }
        AlgorithmKind::Dul => Ok(dul_decide(ctx, &shared.gain_table)),
        AlgorithmKind::Greedy => Ok(greedy_decide(ctx, &shared.gain_table)),
        AlgorithmKind::EpsGreedy { epsilon } => {
            Ok(eps_greedy_decide(ctx, &shared.gain_table, epsilon))
        }
        AlgorithmKind::Thompson => Ok(thompson_decide(ctx, &shared.gain_table)),
        AlgorithmKind::Dp2 => {
            if ctx.t == 0 {
                match &shared.dp2_time0 {
                    Some(u) => Ok(u.clone()),
                    None => dp2_decide(ctx, model),
                }
            } else {
                dp2_decide(ctx, model)
            }
        }
    }
}

fn needs_belief(kind: AlgorithmKind) -> bool {
    !matches!(kind, AlgorithmKind::Tl)
}

/// Simulate one path under one algorithm and return the realized total cost
/// `0.5 x_T'Q x_T + sum_t (0.5 x_t'Q x_t + 0.5 u_t'R u_t)`.
///
/// The realized posterior is maintained after every observed transition for
/// the belief-dependent algorithms. Decision randomness draws from the
/// `(path, algorithm, stage)` substream.
pub fn rollout(
    kind: AlgorithmKind,
    model: &SystemModel,
    path: &SamplePath,
    shared: &SharedArtifacts,
    cfg: &PhaConfig,
    master_seed: u64,
    path_index: usize,
) -> Result<f64> {
    if path.noises.len() != model.horizon || path.true_scenario >= model.num_scenarios() {
        return Err(Error::DimensionMismatch(
            "sample path does not match the model".into(),
        ));
    }
    let b_true = &model.b[path.true_scenario];
    let track_belief = needs_belief(kind);

    let mut x = model.x0.clone();
    let mut belief = model.prior.clone();
    let mut cost = 0.0;
    for t in 0..model.horizon {
        let mut rng = derive_rng(
            master_seed,
            &[
                DECISION_STREAM,
                path_index as u64,
                kind.stream_tag(),
                t as u64,
            ],
        );
        let u = decide(
            kind,
            DecisionContext {
                t,
                x: &x,
                belief: &belief,
                rng: &mut rng,
            },
            model,
            shared,
            cfg,
        )?;
        cost += 0.5 * x.dot(&(&model.q * &x)) + 0.5 * u.dot(&(&model.r * &u));
        let x_next = &model.a * &x + b_true * &u + &path.noises[t];
        if track_belief {
            belief = posterior_update(
                &belief,
                Transition {
                    x_prev: &x,
                    u: &u,
                    x_next: &x_next,
                },
                model,
            )?;
        }
        x = x_next;
    }
    cost += 0.5 * x.dot(&(&model.q * &x));
    Ok(cost)
}

fn is_rollout_failure(err: &Error) -> bool {
    matches!(err, Error::DegenerateUpdate(_) | Error::NotConverged { .. })
}

/// Run one experiment: precompute the shared artifacts, draw the paths, roll
/// every algorithm out on every path in parallel, and aggregate statistics
/// in path order.
pub fn run_experiment(
    experiment_id: &str,
    model: &SystemModel,
    plan: &SimulationPlan,
    cfg: &PhaConfig,
) -> Result<ExperimentResult> {
    if plan.num_sims == 0 {
        return Err(Error::InvalidModel("num_sims must be at least 1".into()));
    }
    let shared = SharedArtifacts::new(model, cfg, &plan.algorithms)?;
    let paths = draw_sample_paths(model, plan);

    let mut per_algorithm = Vec::with_capacity(plan.algorithms.len());
    for &kind in &plan.algorithms {
        let outcomes: Vec<Result<f64>> = paths
            .par_iter()
            .enumerate()
            .map(|(k, path)| rollout(kind, model, path, &shared, cfg, plan.master_seed, k))
            .collect();

        let mut per_path = Vec::with_capacity(outcomes.len());
        let mut successes = Vec::with_capacity(outcomes.len());
        let mut failures = 0usize;
        for outcome in outcomes {
            match outcome {
                Ok(cost) => {
                    per_path.push(Some(cost));
                    successes.push(cost);
                }
                Err(err) if is_rollout_failure(&err) => {
                    per_path.push(None);
                    failures += 1;
                }
                Err(err) => return Err(err),
            }
        }
        per_algorithm.push(AlgorithmOutcome {
            kind,
            stats: CostStats::from_samples(&successes),
            failures,
            per_path,
        });
    }
    Ok(ExperimentResult {
        experiment_id: experiment_id.to_string(),
        per_algorithm,
    })
}
