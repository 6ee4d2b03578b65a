//! Exact-DP benchmark for the scalar two-stage problem on the augmented
//! (state, belief) space.
//!
//! At the final stage the posterior-mixture quadratic has a closed-form
//! minimizer. At the first stage the value is not quadratic, so the
//! expectation over (scenario, noise) is taken by Gauss-Hermite quadrature
//! and the control is found by golden-section search, multi-started over
//! five subintervals of the bracket because the objective can be non-convex.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::belief::{posterior_update, Belief, Transition};
use crate::error::{Error, Result};
use crate::model::SystemModel;
use crate::policies::DecisionContext;
use crate::scenario_dp::solve_scenario_lqg;

/// Gauss-Hermite node count for the noise expectation.
const GH_NODES: usize = 129;
/// Bracket width reduction target for the golden-section search.
const SEARCH_TOL: f64 = 1e-8;
/// Number of bracket subintervals searched independently.
const MULTI_START: usize = 5;

/// Nodes and weights for ∫ f(z) e^{-z^2} dz on the physicists' scale,
/// computed from the symmetric tridiagonal Jacobi matrix (Golub-Welsch).
fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let off = (k as f64 / 2.0).sqrt();
        jacobi[(k - 1, k)] = off;
        jacobi[(k, k - 1)] = off;
    }
    let eig = nalgebra::linalg::SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|j| {
            let first = eig.eigenvectors[(0, j)];
            (
                eig.eigenvalues[j],
                std::f64::consts::PI.sqrt() * first * first,
            )
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

fn gh_table() -> &'static (Vec<f64>, Vec<f64>) {
    static TABLE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    TABLE.get_or_init(|| gauss_hermite(GH_NODES))
}

/// E[f(mu + sigma Z)] for Z ~ N(0,1) by Gauss-Hermite quadrature.
fn gaussian_expectation(mu: f64, sigma: f64, f: impl Fn(f64) -> f64) -> f64 {
    let (nodes, weights) = gh_table();
    let scale = std::f64::consts::SQRT_2 * sigma;
    let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
    nodes
        .iter()
        .zip(weights)
        .map(|(z, w)| w * f(mu + scale * z))
        .sum::<f64>()
        * inv_sqrt_pi
}

/// Golden-section minimization on [a, b], refined until the bracket is
/// narrower than `tol`. Returns (argmin, min).
fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = 0.618_033_988_749_894_9;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

fn minimize_multistart(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let step = (hi - lo) / MULTI_START as f64;
    let mut best_x = lo;
    let mut best_f = f64::INFINITY;
    for k in 0..MULTI_START {
        let a = lo + step * k as f64;
        let (x, fx) = golden_section(&f, a, a + step, SEARCH_TOL);
        if fx < best_f {
            best_f = fx;
            best_x = x;
        }
    }
    best_x
}

struct ScalarDp2 {
    a: f64,
    b: Vec<f64>,
    q: f64,
    r: f64,
    sigma2: f64,
}

impl ScalarDp2 {
    fn new(model: &SystemModel) -> Result<Self> {
        if model.horizon != 2 {
            return Err(Error::UnsupportedConfig(format!(
                "the DP benchmark needs horizon 2, got {}",
                model.horizon
            )));
        }
        if model.state_dim() != 1 || model.control_dim() != 1 {
            return Err(Error::UnsupportedConfig(
                "the DP benchmark is scalar-only".into(),
            ));
        }
        Ok(Self {
            a: model.a[(0, 0)],
            b: model.b.iter().map(|bi| bi[(0, 0)]).collect(),
            q: model.q[(0, 0)],
            r: model.r[(0, 0)],
            sigma2: model.noise_cov[(0, 0)],
        })
    }

    /// Closed-form minimizer of the posterior-mixture quadratic at the last
    /// stage: `u* = -(sum_i p_i b_i) Q a x / (R + sum_i p_i b_i^2 Q)`.
    fn last_stage_control(&self, belief: &Belief, x: f64) -> f64 {
        let mean_b: f64 = belief.probs().iter().zip(&self.b).map(|(p, b)| p * b).sum();
        let mean_b2: f64 = belief
            .probs()
            .iter()
            .zip(&self.b)
            .map(|(p, b)| p * b * b)
            .sum();
        -(mean_b * self.q * self.a * x) / (self.r + mean_b2 * self.q)
    }

    /// Value-to-go at the last stage under belief `p`:
    /// stage cost plus the expected terminal cost at the mixture minimizer.
    fn last_stage_value(&self, belief: &Belief, x: f64) -> f64 {
        let u = self.last_stage_control(belief, x);
        let expected_terminal: f64 = belief
            .probs()
            .iter()
            .zip(&self.b)
            .map(|(p, b)| {
                let x_next = self.a * x + b * u;
                p * x_next * x_next
            })
            .sum();
        0.5 * self.q * x * x
            + 0.5 * self.r * u * u
            + 0.5 * self.q * (expected_terminal + self.sigma2)
    }

    /// First-stage objective: running cost plus the expectation of the
    /// last-stage value over scenarios and noise, with the planned posterior
    /// evaluated at each quadrature point.
    fn first_stage_objective(&self, model: &SystemModel, belief: &Belief, x0: f64, u0: f64) -> f64 {
        let sigma = self.sigma2.sqrt();
        let x_prev = DVector::from_element(1, x0);
        let u_vec = DVector::from_element(1, u0);
        let mut expectation = 0.0;
        for (i, p) in belief.probs().iter().enumerate() {
            if *p == 0.0 {
                continue;
            }
            let mu = self.a * x0 + self.b[i] * u0;
            expectation += p * gaussian_expectation(mu, sigma, |x1| {
                let x_next = DVector::from_element(1, x1);
                let posterior = posterior_update(
                    belief,
                    Transition {
                        x_prev: &x_prev,
                        u: &u_vec,
                        x_next: &x_next,
                    },
                    model,
                )
                .expect("planning update cannot degenerate at quadrature nodes");
                self.last_stage_value(&posterior, x1)
            });
        }
        0.5 * self.q * x0 * x0 + 0.5 * self.r * u0 * u0 + expectation
    }
}

/// Decide by exact dynamic programming on the (state, belief) pair.
///
/// Only defined for scalar models with horizon 2. The stage-1 control is the
/// closed-form mixture minimizer; the stage-0 control minimizes the
/// quadrature-evaluated Bellman objective over a bracket sized by the
/// largest scenario Riccati gain.
pub fn dp2_decide(ctx: DecisionContext<'_>, model: &SystemModel) -> Result<DVector<f64>> {
    let dp = ScalarDp2::new(model)?;
    match ctx.t {
        1 => Ok(DVector::from_element(
            1,
            dp.last_stage_control(ctx.belief, ctx.x[0]),
        )),
        0 => {
            if ctx.belief.support_count() > 1 && dp.sigma2 <= 0.0 {
                return Err(Error::Numerical(
                    "belief planning needs a positive-definite noise covariance".into(),
                ));
            }
            let mut k_max = 0.0f64;
            for i in 0..model.num_scenarios() {
                let (policy, _) = solve_scenario_lqg(model, i)?;
                for k in &policy.gains {
                    k_max = k_max.max(k[(0, 0)].abs());
                }
            }
            let x0 = ctx.x[0];
            let half_width = 10.0 * (k_max * x0).abs() + 1.0;
            let u0 = minimize_multistart(
                |u| dp.first_stage_objective(model, ctx.belief, x0, u),
                -half_width,
                half_width,
            );
            Ok(DVector::from_element(1, u0))
        }
        t => Err(Error::UnsupportedConfig(format!(
            "the DP benchmark has no stage {t}"
        ))),
    }
}
