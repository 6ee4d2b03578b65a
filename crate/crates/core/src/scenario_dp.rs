//! Closed-form dynamic programming for the known-gain LQG scenario
//! subproblem and its Lagrangian-augmented variant.
//!
//! Both solvers run the backward Riccati recursion from `Gamma_T = Q`,
//! symmetrizing after every step, and factor the control-space matrix with a
//! Cholesky decomposition rather than forming an explicit inverse. A
//! conditioning estimate above 1e12 on that matrix aborts with a numerical
//! error.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{LinearPolicy, SystemModel};

/// Conditioning limit for the control-space solve.
const COND_LIMIT: f64 = 1e12;

/// Backward value recursion: `J_t(x) = 0.5 x' Gamma_t x + Lambda_t`.
#[derive(Debug, Clone)]
pub struct ValueRecursion {
    /// Quadratic coefficients `Gamma_t` for t = 0..=T.
    pub gamma: Vec<DMatrix<f64>>,
    /// Constants `Lambda_t` for t = 0..=T.
    pub lambda: Vec<f64>,
}

/// Augmentation of one scenario subproblem inside the hedging loop: anchor
/// policy gains, multiplier gains `w_t(x) = W_t x`, and the penalty weight.
#[derive(Debug, Clone)]
pub struct AugmentationTerms {
    pub anchor: LinearPolicy,
    pub multiplier_gains: Vec<DMatrix<f64>>,
    pub penalty: f64,
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let mt = m.transpose();
    (m + mt) * 0.5
}

/// Factor `m` after checking it is positive definite and well conditioned.
fn factor_control_matrix(
    m: DMatrix<f64>,
    context: &str,
) -> Result<nalgebra::linalg::Cholesky<f64, nalgebra::Dyn>> {
    let eigs = m.clone().symmetric_eigenvalues();
    let min = eigs.min();
    let max = eigs.max();
    if min <= 0.0 {
        return Err(Error::Numerical(format!(
            "{context}: control matrix not positive definite (min eigenvalue {min:.3e})"
        )));
    }
    if max / min > COND_LIMIT {
        return Err(Error::Numerical(format!(
            "{context}: control matrix condition estimate {:.3e} exceeds {COND_LIMIT:e}",
            max / min
        )));
    }
    nalgebra::linalg::Cholesky::new(m)
        .ok_or_else(|| Error::Numerical(format!("{context}: Cholesky factorization failed")))
}

fn check_scenario(model: &SystemModel, scenario: usize) -> Result<()> {
    if scenario >= model.num_scenarios() {
        return Err(Error::InvalidModel(format!(
            "scenario index {scenario} out of range (N = {})",
            model.num_scenarios()
        )));
    }
    Ok(())
}

fn noise_constant(gamma_next: &DMatrix<f64>, model: &SystemModel) -> f64 {
    0.5 * (gamma_next * &model.noise_cov).trace()
}

/// Solve the known-gain scenario subproblem by backward Riccati recursion.
///
/// Gains: `K_t = (R + B'Gamma_{t+1}B)^{-1} B'Gamma_{t+1}A`, value update
/// `Gamma_t = Q + K'RK + (A - BK)'Gamma_{t+1}(A - BK)`, constants
/// `Lambda_t = Lambda_{t+1} + 0.5 tr(Gamma_{t+1} noise_cov)`. The optimal
/// expected cost from `x_0` is `0.5 x_0'Gamma_0 x_0 + Lambda_0`.
pub fn solve_scenario_lqg(
    model: &SystemModel,
    scenario: usize,
) -> Result<(LinearPolicy, ValueRecursion)> {
    check_scenario(model, scenario)?;
    let t_len = model.horizon;
    let b = &model.b[scenario];

    let mut gamma = vec![DMatrix::zeros(0, 0); t_len + 1];
    let mut lambda = vec![0.0; t_len + 1];
    gamma[t_len] = model.q.clone();
    let mut gains = vec![DMatrix::zeros(0, 0); t_len];

    for t in (0..t_len).rev() {
        let gamma_next = &gamma[t + 1];
        let bt_gamma = b.transpose() * gamma_next;
        let m = symmetrize(&model.r + &bt_gamma * b);
        let chol = factor_control_matrix(m, "scenario LQG")?;
        let k = chol.solve(&(&bt_gamma * &model.a));
        let closed_loop = &model.a - b * &k;
        let g = symmetrize(
            &model.q
                + k.transpose() * &model.r * &k
                + closed_loop.transpose() * gamma_next * &closed_loop,
        );
        debug_assert!(
            g.clone().symmetric_eigenvalues().min() >= -1e-10 * (1.0 + g.amax()),
            "value coefficient lost positive semidefiniteness"
        );
        lambda[t] = lambda[t + 1] + noise_constant(gamma_next, model);
        gamma[t] = g;
        gains[t] = k;
    }

    Ok((LinearPolicy::new(gains)?, ValueRecursion { gamma, lambda }))
}

/// Solve one Lagrangian-augmented scenario subproblem.
///
/// The stage cost gains the multiplier term `(W_t x)'u` and the penalty
/// `0.5 r (u + K̂_t x)'(u + K̂_t x)` centered on the anchor policy
/// `û_t(x) = -K̂_t x`. Completing the square gives
/// `K_t = (R + rI + B'Gamma_{t+1}B)^{-1}(B'Gamma_{t+1}A + r K̂_t + W_t)` and
/// `Gamma_t = Q + r K̂_t'K̂_t + A'Gamma_{t+1}A - K_t'(R + rI + B'Gamma_{t+1}B)K_t`.
pub fn solve_augmented_scenario(
    model: &SystemModel,
    scenario: usize,
    aug: &AugmentationTerms,
) -> Result<(LinearPolicy, ValueRecursion)> {
    check_scenario(model, scenario)?;
    let t_len = model.horizon;
    let (n, m_dim) = (model.state_dim(), model.control_dim());
    if aug.penalty <= 0.0 || !aug.penalty.is_finite() {
        return Err(Error::InvalidModel(format!(
            "augmentation penalty must be positive, got {}",
            aug.penalty
        )));
    }
    if aug.anchor.len() != t_len || aug.multiplier_gains.len() != t_len {
        return Err(Error::DimensionMismatch(format!(
            "augmentation needs {t_len} anchor and multiplier gains, got {} and {}",
            aug.anchor.len(),
            aug.multiplier_gains.len()
        )));
    }
    for (t, (kh, w)) in aug
        .anchor
        .gains
        .iter()
        .zip(&aug.multiplier_gains)
        .enumerate()
    {
        if kh.nrows() != m_dim || kh.ncols() != n || w.nrows() != m_dim || w.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "augmentation gains at stage {t} must be {m_dim}x{n}"
            )));
        }
    }

    let b = &model.b[scenario];
    let r_pen = aug.penalty;
    let penalty_eye = DMatrix::<f64>::identity(m_dim, m_dim) * r_pen;

    let mut gamma = vec![DMatrix::zeros(0, 0); t_len + 1];
    let mut lambda = vec![0.0; t_len + 1];
    gamma[t_len] = model.q.clone();
    let mut gains = vec![DMatrix::zeros(0, 0); t_len];

    for t in (0..t_len).rev() {
        let gamma_next = &gamma[t + 1];
        let anchor = &aug.anchor.gains[t];
        let w = &aug.multiplier_gains[t];

        let bt_gamma = b.transpose() * gamma_next;
        let m = symmetrize(&model.r + &penalty_eye + &bt_gamma * b);
        let chol = factor_control_matrix(m.clone(), "augmented scenario")?;
        let rhs = &bt_gamma * &model.a + anchor * r_pen + w;
        let k = chol.solve(&rhs);

        let g = symmetrize(
            &model.q
                + anchor.transpose() * anchor * r_pen
                + model.a.transpose() * gamma_next * &model.a
                - k.transpose() * &m * &k,
        );
        lambda[t] = lambda[t + 1] + noise_constant(gamma_next, model);
        gamma[t] = g;
        gains[t] = k;
    }

    Ok((LinearPolicy::new(gains)?, ValueRecursion { gamma, lambda }))
}

/// Evaluate the cost-to-go `0.5 x'Gamma_t x + Lambda_t`.
pub fn expected_value(v: &ValueRecursion, t: usize, x: &DVector<f64>) -> Result<f64> {
    if t >= v.gamma.len() {
        return Err(Error::DimensionMismatch(format!(
            "stage {t} out of range for a recursion with {} entries",
            v.gamma.len()
        )));
    }
    let g = &v.gamma[t];
    if g.nrows() != x.len() {
        return Err(Error::DimensionMismatch(format!(
            "state has length {} but Gamma_{t} is {}x{}",
            x.len(),
            g.nrows(),
            g.ncols()
        )));
    }
    Ok(0.5 * x.dot(&(g * x)) + v.lambda[t])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::Belief;
    use approx::assert_relative_eq;

    fn scalar_model(a: f64, b: &[f64], q: f64, r: f64, sigma: f64, t: usize) -> SystemModel {
        SystemModel::scalar(a, b, q, r, sigma, t, 1.0, Belief::uniform(b.len())).unwrap()
    }

    /// Independent oracle: expected cost of an arbitrary scalar linear policy
    /// under one scenario, by plain policy evaluation in bare f64 arithmetic.
    /// `cost = 0.5 g_0 x0^2 + c_0` with `g_t = q + r k_t^2 + (a - b k_t)^2 g_{t+1}`
    /// and `c_t = c_{t+1} + 0.5 g_{t+1} sigma^2`.
    fn scalar_policy_cost(a: f64, b: f64, q: f64, r: f64, sigma2: f64, x0: f64, ks: &[f64]) -> f64 {
        let mut g = q;
        let mut c = 0.0;
        for k in ks.iter().rev() {
            let closed = a - b * k;
            c += 0.5 * g * sigma2;
            g = q + r * k * k + closed * closed * g;
        }
        0.5 * g * x0 * x0 + c
    }

    #[test]
    fn hand_evaluated_two_stage_recursion() {
        let model = scalar_model(1.0, &[1.0], 1.0, 1.0, 1.0, 2);
        let (policy, value) = solve_scenario_lqg(&model, 0).unwrap();
        assert_relative_eq!(policy.gains[1][(0, 0)], 0.5, epsilon = 1e-14);
        assert_relative_eq!(value.gamma[1][(0, 0)], 1.5, epsilon = 1e-14);
        assert_relative_eq!(policy.gains[0][(0, 0)], 0.6, epsilon = 1e-14);
        assert_relative_eq!(value.lambda[1], 0.5, epsilon = 1e-14);
        assert_relative_eq!(value.lambda[0], 1.25, epsilon = 1e-14);
        assert_eq!(value.gamma[2][(0, 0)], 1.0);
        assert_eq!(value.lambda[2], 0.0);
    }

    #[test]
    fn single_stage_closed_form_matrix() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.0, 0.9]);
        let b = DMatrix::from_row_slice(2, 1, &[0.5, 1.0]);
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        let r = DMatrix::from_element(1, 1, 0.5);
        let model = SystemModel::new(
            a.clone(),
            vec![b.clone()],
            q.clone(),
            r.clone(),
            DMatrix::identity(2, 2),
            1,
            DVector::zeros(2),
            Belief::uniform(1),
        )
        .unwrap();
        let (policy, _) = solve_scenario_lqg(&model, 0).unwrap();
        let m = (&r + b.transpose() * &q * &b).try_inverse().unwrap();
        let expected = m * b.transpose() * &q * &a;
        assert_relative_eq!(policy.gains[0][(0, 0)], expected[(0, 0)], epsilon = 1e-12);
        assert_relative_eq!(policy.gains[0][(0, 1)], expected[(0, 1)], epsilon = 1e-12);
    }

    #[test]
    fn zero_gain_scenario_yields_zero_feedback() {
        let model = scalar_model(1.2, &[0.0], 1.0, 1.0, 1.0, 3);
        let (policy, _) = solve_scenario_lqg(&model, 0).unwrap();
        for k in &policy.gains {
            assert_eq!(k[(0, 0)], 0.0);
        }
    }

    #[test]
    fn optimal_beats_gain_grid() {
        // Grid oracle over K_t in {-3.0, -2.9, ..., 3.0}^T for T <= 3.
        for (a, b, q, r, t_len) in [
            (1.0, 1.0, 1.0, 1.0, 2usize),
            (0.8, 1.5, 2.0, 0.5, 3),
            (1.1, -0.7, 1.0, 2.0, 3),
        ] {
            let model = scalar_model(a, &[b], q, r, 1.0, t_len);
            let (policy, value) = solve_scenario_lqg(&model, 0).unwrap();
            let opt_ks: Vec<f64> = policy.gains.iter().map(|k| k[(0, 0)]).collect();
            let opt_cost = scalar_policy_cost(a, b, q, r, 1.0, 1.0, &opt_ks);
            assert_relative_eq!(
                opt_cost,
                0.5 * value.gamma[0][(0, 0)] + value.lambda[0],
                epsilon = 1e-12
            );

            let grid: Vec<f64> = (-30..=30).map(|i| i as f64 / 10.0).collect();
            let mut stack = vec![Vec::new()];
            for _ in 0..t_len {
                let mut next = Vec::new();
                for partial in &stack {
                    for k in &grid {
                        let mut p = partial.clone();
                        p.push(*k);
                        next.push(p);
                    }
                }
                stack = next;
            }
            for ks in &stack {
                let cost = scalar_policy_cost(a, b, q, r, 1.0, 1.0, ks);
                assert!(
                    opt_cost <= cost + 1e-9,
                    "grid policy {ks:?} beat the Riccati solution: {cost} < {opt_cost}"
                );
            }
        }
    }

    #[test]
    fn augmented_fixed_point_at_scenario_optimum() {
        let model = scalar_model(1.0, &[1.0, 2.0], 1.0, 1.0, 1.0, 3);
        for scenario in 0..2 {
            let (opt, _) = solve_scenario_lqg(&model, scenario).unwrap();
            for r_pen in [0.1, 1.0, 25.0] {
                let aug = AugmentationTerms {
                    anchor: opt.clone(),
                    multiplier_gains: vec![DMatrix::zeros(1, 1); 3],
                    penalty: r_pen,
                };
                let (solved, _) = solve_augmented_scenario(&model, scenario, &aug).unwrap();
                for (k, k_opt) in solved.gains.iter().zip(&opt.gains) {
                    assert_relative_eq!(k[(0, 0)], k_opt[(0, 0)], epsilon = 1e-10);
                }
            }
        }
    }

    #[test]
    fn augmented_single_stage_hand_value() {
        // a = b = Q = R = sigma = 1, T = 1, r = 1, W = 0, anchor 0:
        // K_0 = (1*1*1 + 1*0 + 0) / (1 + 1 + 1*1) = 1/3.
        let model = scalar_model(1.0, &[1.0], 1.0, 1.0, 1.0, 1);
        let aug = AugmentationTerms {
            anchor: LinearPolicy::zeros(1, 1, 1),
            multiplier_gains: vec![DMatrix::zeros(1, 1)],
            penalty: 1.0,
        };
        let (policy, _) = solve_augmented_scenario(&model, 0, &aug).unwrap();
        assert_relative_eq!(policy.gains[0][(0, 0)], 1.0 / 3.0, epsilon = 1e-14);

        // Cross-check by grid minimization of the augmented one-step
        // objective at a few states.
        for x in [-2.0, 0.5, 1.0, 3.0] {
            let f = |u: f64| {
                0.5 * x * x
                    + 0.5 * u * u
                    + 0.5 * (u - 0.0) * (u - 0.0)
                    + 0.5 * ((x + u) * (x + u) + 1.0)
            };
            let mut best_u = f64::NAN;
            let mut best = f64::INFINITY;
            for i in -40000..=40000 {
                let u = i as f64 * 1e-4;
                let v = f(u);
                if v < best {
                    best = v;
                    best_u = u;
                }
            }
            assert!((best_u - (-x / 3.0)).abs() < 1e-3);
        }
    }

    #[test]
    fn vanishing_penalty_recovers_unconstrained_gains() {
        let model = scalar_model(1.0, &[2.0], 1.0, 1.0, 1.0, 3);
        let (opt, _) = solve_scenario_lqg(&model, 0).unwrap();
        let aug = AugmentationTerms {
            anchor: LinearPolicy::new(vec![DMatrix::from_element(1, 1, 5.0); 3]).unwrap(),
            multiplier_gains: vec![DMatrix::zeros(1, 1); 3],
            penalty: 1e-9,
        };
        let (solved, _) = solve_augmented_scenario(&model, 0, &aug).unwrap();
        for (k, k_opt) in solved.gains.iter().zip(&opt.gains) {
            assert_relative_eq!(k[(0, 0)], k_opt[(0, 0)], epsilon = 1e-6);
        }
    }

    #[test]
    fn scalar_and_matrix_recursions_agree() {
        // Independent scalar implementation of both backward recursions.
        let (a, b, q, r, sigma2) = (1.1, 1.7, 2.0, 0.6, 0.81f64);
        let t_len = 4;
        let model =
            SystemModel::scalar(a, &[b], q, r, sigma2.sqrt(), t_len, 1.0, Belief::uniform(1))
                .unwrap();

        let mut gamma = q;
        let mut lambda = 0.0;
        let mut ks = vec![0.0; t_len];
        let mut gammas = vec![0.0; t_len + 1];
        gammas[t_len] = q;
        for t in (0..t_len).rev() {
            let k = a * b * gamma / (r + b * b * gamma);
            lambda += 0.5 * gamma * sigma2;
            gamma = q + r * k * k + (a - b * k) * (a - b * k) * gamma;
            ks[t] = k;
            gammas[t] = gamma;
        }
        let (policy, value) = solve_scenario_lqg(&model, 0).unwrap();
        for t in 0..t_len {
            assert_relative_eq!(policy.gains[t][(0, 0)], ks[t], epsilon = 1e-12);
            assert_relative_eq!(value.gamma[t][(0, 0)], gammas[t], epsilon = 1e-12);
        }
        assert_relative_eq!(value.lambda[0], lambda, epsilon = 1e-12);

        // Augmented recursion against its scalar form.
        let r_pen = 0.7;
        let anchors = [0.3, -0.2, 0.5, 0.1];
        let ws = [0.05, -0.1, 0.2, 0.0];
        let aug = AugmentationTerms {
            anchor: LinearPolicy::new(
                anchors
                    .iter()
                    .map(|&v| DMatrix::from_element(1, 1, v))
                    .collect(),
            )
            .unwrap(),
            multiplier_gains: ws.iter().map(|&v| DMatrix::from_element(1, 1, v)).collect(),
            penalty: r_pen,
        };
        let mut gamma_aug = q;
        let mut k_aug = vec![0.0; t_len];
        let mut gamma_scalar = vec![0.0; t_len + 1];
        gamma_scalar[t_len] = q;
        for t in (0..t_len).rev() {
            let denom = r + r_pen + b * b * gamma_aug;
            let k = (a * b * gamma_aug + r_pen * anchors[t] + ws[t]) / denom;
            gamma_aug = a * a * gamma_aug + q + r_pen * anchors[t] * anchors[t] - denom * k * k;
            k_aug[t] = k;
            gamma_scalar[t] = gamma_aug;
        }
        let (policy, value) = solve_augmented_scenario(&model, 0, &aug).unwrap();
        for t in 0..t_len {
            assert_relative_eq!(policy.gains[t][(0, 0)], k_aug[t], epsilon = 1e-12);
            assert_relative_eq!(value.gamma[t][(0, 0)], gamma_scalar[t], epsilon = 1e-12);
        }
    }

    #[test]
    fn value_coefficients_stay_psd() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, -0.2, 1.1]);
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 2.0]);
        let model = SystemModel::new(
            a,
            vec![b],
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2) * 0.5,
            5,
            DVector::zeros(2),
            Belief::uniform(1),
        )
        .unwrap();
        let (_, value) = solve_scenario_lqg(&model, 0).unwrap();
        for g in &value.gamma {
            let min = g.clone().symmetric_eigenvalues().min();
            assert!(min >= -1e-10, "Gamma lost PSD: min eigenvalue {min}");
            assert!((g - g.transpose()).amax() <= 1e-10);
        }
    }

    #[test]
    fn conditioning_failure_is_reported() {
        // Second control channel has no effect on the state and an R entry
        // near zero, so (R + B'Gamma B) has condition estimate ~1e13.
        let model = SystemModel::new(
            DMatrix::from_element(1, 1, 1.0),
            vec![DMatrix::from_row_slice(1, 2, &[1.0, 0.0])],
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_partial_diagonal(2, 2, &[1.0, 1e-13]),
            DMatrix::from_element(1, 1, 1.0),
            2,
            DVector::from_element(1, 1.0),
            Belief::uniform(1),
        )
        .unwrap();
        let err = solve_scenario_lqg(&model, 0).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)), "got {err:?}");
    }

    #[test]
    fn expected_value_examples() {
        let v = ValueRecursion {
            gamma: vec![
                DMatrix::from_element(1, 1, 2.0),
                DMatrix::from_element(1, 1, 1.5),
            ],
            lambda: vec![0.0, 0.5],
        };
        assert_eq!(
            expected_value(&v, 0, &DVector::from_element(1, 0.0)).unwrap(),
            0.0
        );
        assert_relative_eq!(
            expected_value(&v, 1, &DVector::from_element(1, 2.0)).unwrap(),
            3.5,
            epsilon = 1e-14
        );
        assert!(expected_value(&v, 2, &DVector::from_element(1, 1.0)).is_err());
        assert!(expected_value(&v, 0, &DVector::zeros(2)).is_err());
    }

    #[test]
    fn scenario_index_out_of_range() {
        let model = scalar_model(1.0, &[1.0], 1.0, 1.0, 1.0, 2);
        assert!(solve_scenario_lqg(&model, 1).is_err());
    }
}
