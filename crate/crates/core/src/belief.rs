//! Bayesian posterior updates over the finite scenario set.
//!
//! Updates are computed in log space (log-density plus log-prior,
//! max-subtracted before exponentiation) so far-out states do not underflow
//! the Gaussian tails. Scenarios with zero probability stay at zero: the
//! update is exact Bayes with no flooring or smoothing.

use nalgebra::{DMatrix, DVector};

use crate::error::{DegenerateUpdate, Error, Result};
use crate::model::SystemModel;

const LN_2PI: f64 = 1.8378770664093453;
/// Simplex sum tolerance.
const SUM_TOL: f64 = 1e-12;

/// A probability vector over the N gain scenarios.
///
/// Invariant: all entries are non-negative and sum to 1 within 1e-12. The
/// field is private so every `Belief` in circulation satisfies it.
#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    probs: Vec<f64>,
}

impl Belief {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidModel("belief must be non-empty".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidModel(format!(
                "belief entries must be finite and non-negative: {probs:?}"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidModel(format!(
                "belief must sum to 1 within {SUM_TOL:e}, got {sum}"
            )));
        }
        Ok(Self { probs })
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            probs: vec![1.0 / n as f64; n],
        }
    }

    /// Point mass on scenario `i`.
    pub fn delta(n: usize, i: usize) -> Self {
        let mut probs = vec![0.0; n];
        probs[i] = 1.0;
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Indices of scenarios with positive probability.
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(i, _)| i)
    }

    pub fn support_count(&self) -> usize {
        self.support().count()
    }

    /// Index of the largest entry, ties resolved to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate().skip(1) {
            if *p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    fn from_weights(weights: Vec<f64>, total: f64) -> Self {
        Self {
            probs: weights.into_iter().map(|w| w / total).collect(),
        }
    }
}

/// One observed state transition `(x_t, u_t, x_{t+1})`.
#[derive(Debug, Clone, Copy)]
pub struct Transition<'a> {
    pub x_prev: &'a DVector<f64>,
    pub u: &'a DVector<f64>,
    pub x_next: &'a DVector<f64>,
}

fn check_density_dims(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<usize> {
    let n = x.len();
    if mean.len() != n || cov.nrows() != n || cov.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "density arguments: x has {n}, mean has {}, cov is {}x{}",
            mean.len(),
            cov.nrows(),
            cov.ncols()
        )));
    }
    Ok(n)
}

/// Multivariate normal density value, assembled in direct (non-log) space.
pub fn gaussian_density(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let n = check_density_dims(x, mean, cov)?;
    let chol = nalgebra::linalg::Cholesky::new(cov.clone())
        .ok_or_else(|| Error::Numerical("covariance is not positive definite".into()))?;
    let z = chol
        .l_dirty()
        .solve_lower_triangular(&(x - mean))
        .ok_or_else(|| Error::Numerical("singular Cholesky factor in density evaluation".into()))?;
    let sqrt_det: f64 = chol.l_dirty().diagonal().iter().product();
    let norm = (2.0 * std::f64::consts::PI).powf(n as f64 / 2.0) * sqrt_det;
    Ok((-0.5 * z.norm_squared()).exp() / norm)
}

/// Log of the multivariate normal density.
pub fn log_gaussian_density(
    x: &DVector<f64>,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
) -> Result<f64> {
    check_density_dims(x, mean, cov)?;
    let chol = nalgebra::linalg::Cholesky::new(cov.clone())
        .ok_or_else(|| Error::Numerical("covariance is not positive definite".into()))?;
    log_density_with_chol(&chol, x, mean)
}

fn log_density_with_chol(
    chol: &nalgebra::linalg::Cholesky<f64, nalgebra::Dyn>,
    x: &DVector<f64>,
    mean: &DVector<f64>,
) -> Result<f64> {
    let n = x.len() as f64;
    let z = chol
        .l_dirty()
        .solve_lower_triangular(&(x - mean))
        .ok_or_else(|| Error::Numerical("singular Cholesky factor in density evaluation".into()))?;
    let log_sqrt_det: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
    Ok(-0.5 * z.norm_squared() - 0.5 * n * LN_2PI - log_sqrt_det)
}

/// Bayes update of the scenario belief from one realized transition.
///
/// `p'_i ∝ phi(x_next; A x_prev + B_i u, noise_cov) * p_i`, with zero-mass
/// scenarios staying at zero. When the belief has a single supported
/// scenario the likelihood cancels and the belief is returned unchanged
/// (this also covers singular noise covariances in that case).
pub fn posterior_update(b: &Belief, tr: Transition<'_>, model: &SystemModel) -> Result<Belief> {
    let n = model.state_dim();
    if b.len() != model.num_scenarios() {
        return Err(Error::DimensionMismatch(format!(
            "belief has {} entries for {} scenarios",
            b.len(),
            model.num_scenarios()
        )));
    }
    if tr.x_prev.len() != n || tr.x_next.len() != n || tr.u.len() != model.control_dim() {
        return Err(Error::DimensionMismatch(
            "transition dimensions do not match the model".into(),
        ));
    }
    if b.support_count() <= 1 {
        return Ok(b.clone());
    }

    let chol = nalgebra::linalg::Cholesky::new(model.noise_cov.clone())
        .ok_or_else(|| Error::Numerical("noise covariance is not positive definite".into()))?;
    let drift = &model.a * tr.x_prev;

    let mut log_weights = vec![f64::NEG_INFINITY; b.len()];
    let mut max_lw = f64::NEG_INFINITY;
    for (i, p) in b.probs().iter().enumerate() {
        if *p == 0.0 {
            continue;
        }
        let mean = &drift + &model.b[i] * tr.u;
        let lw = log_density_with_chol(&chol, tr.x_next, &mean)? + p.ln();
        log_weights[i] = lw;
        if lw > max_lw {
            max_lw = lw;
        }
    }
    if !max_lw.is_finite() {
        return Err(Error::DegenerateUpdate(DegenerateUpdate {
            prior: b.probs().to_vec(),
            log_weights,
        }));
    }

    let weights: Vec<f64> = log_weights
        .iter()
        .map(|lw| {
            if lw.is_finite() {
                (lw - max_lw).exp()
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = weights.iter().sum();
    if total < 1e-300 {
        return Err(Error::DegenerateUpdate(DegenerateUpdate {
            prior: b.probs().to_vec(),
            log_weights,
        }));
    }
    Ok(Belief::from_weights(weights, total))
}

/// The same Bayes update driven by nominal quantities `(x̄_t, û_t(x̄_t),
/// x̄_{t+1})` instead of realized ones. Kept distinct so the nominal and
/// realized paths stay separately testable.
pub fn nominal_posterior_update(
    b: &Belief,
    x_bar_prev: &DVector<f64>,
    u_hat: &DVector<f64>,
    x_bar_next: &DVector<f64>,
    model: &SystemModel,
) -> Result<Belief> {
    posterior_update(
        b,
        Transition {
            x_prev: x_bar_prev,
            u: u_hat,
            x_next: x_bar_next,
        },
        model,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn dv(vals: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(vals)
    }

    fn two_scenario_model() -> SystemModel {
        SystemModel::scalar(
            1.0,
            &[1.0, 2.0],
            1.0,
            1.0,
            1.0,
            2,
            1.0,
            Belief::new(vec![0.5, 0.5]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn density_at_standard_normal_origin() {
        let d = gaussian_density(&dv(&[0.0]), &dv(&[0.0]), &DMatrix::identity(1, 1)).unwrap();
        assert_relative_eq!(d, 0.3989422804014327, epsilon = 1e-12);
    }

    #[test]
    fn density_at_mean_is_normalizer() {
        for var in [0.25, 1.0, 4.0] {
            let cov = DMatrix::from_element(1, 1, var);
            let d = gaussian_density(&dv(&[3.0]), &dv(&[3.0]), &cov).unwrap();
            assert_relative_eq!(
                d,
                1.0 / (2.0 * std::f64::consts::PI * var).sqrt(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn density_one_sigma_off() {
        let d = gaussian_density(&dv(&[1.0]), &dv(&[2.0]), &DMatrix::identity(1, 1)).unwrap();
        assert_relative_eq!(d, 0.24197072451914337, epsilon = 1e-10);
    }

    #[test]
    fn density_rejects_singular_cov() {
        let err = gaussian_density(&dv(&[0.0]), &dv(&[0.0]), &DMatrix::zeros(1, 1)).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
    }

    #[test]
    fn log_density_matches_direct_when_no_underflow() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        for x in [[0.0, 0.0], [1.5, -2.0], [-3.0, 4.0]] {
            let xv = dv(&x);
            let mean = dv(&[0.5, -0.5]);
            let direct = gaussian_density(&xv, &mean, &cov).unwrap();
            let logd = log_gaussian_density(&xv, &mean, &cov).unwrap();
            assert_relative_eq!(logd.exp(), direct, max_relative = 1e-10);
        }
    }

    #[test]
    fn log_density_survives_where_direct_underflows() {
        let cov = DMatrix::identity(1, 1);
        let direct = gaussian_density(&dv(&[60.0]), &dv(&[0.0]), &cov).unwrap();
        let logd = log_gaussian_density(&dv(&[60.0]), &dv(&[0.0]), &cov).unwrap();
        assert_eq!(direct, 0.0); // exp(-1800) underflows
        assert_relative_eq!(logd, -0.5 * 3600.0 - 0.5 * LN_2PI, epsilon = 1e-9);
    }

    #[test]
    fn posterior_update_derived_example() {
        // Means 1 and 2, observation 1: densities 0.39894 and 0.24197.
        let model = two_scenario_model();
        let b = Belief::new(vec![0.5, 0.5]).unwrap();
        let post = posterior_update(
            &b,
            Transition {
                x_prev: &dv(&[0.0]),
                u: &dv(&[1.0]),
                x_next: &dv(&[1.0]),
            },
            &model,
        )
        .unwrap();
        assert_relative_eq!(post.probs()[0], 0.62246, epsilon = 1e-5);
        assert_relative_eq!(post.probs()[1], 0.37754, epsilon = 1e-5);
    }

    #[test]
    fn single_scenario_belief_is_fixed() {
        let model =
            SystemModel::scalar(1.0, &[1.0], 1.0, 1.0, 1.0, 2, 1.0, Belief::uniform(1)).unwrap();
        let b = Belief::uniform(1);
        let post = posterior_update(
            &b,
            Transition {
                x_prev: &dv(&[1.0]),
                u: &dv(&[5.0]),
                x_next: &dv(&[-2.0]),
            },
            &model,
        )
        .unwrap();
        assert_eq!(post.probs(), &[1.0]);
    }

    #[test]
    fn zero_control_returns_prior() {
        let model = two_scenario_model();
        let b = Belief::new(vec![0.3, 0.7]).unwrap();
        for x_next in [-4.0, 0.0, 2.5] {
            let post = posterior_update(
                &b,
                Transition {
                    x_prev: &dv(&[1.0]),
                    u: &dv(&[0.0]),
                    x_next: &dv(&[x_next]),
                },
                &model,
            )
            .unwrap();
            assert!((post.probs()[0] - 0.3).abs() < 1e-14);
            assert!((post.probs()[1] - 0.7).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_prior_mass_stays_zero() {
        let model = SystemModel::scalar(
            1.0,
            &[1.0, 2.0, 3.0],
            1.0,
            1.0,
            1.0,
            2,
            1.0,
            Belief::uniform(3),
        )
        .unwrap();
        let b = Belief::new(vec![0.5, 0.0, 0.5]).unwrap();
        let post = posterior_update(
            &b,
            Transition {
                x_prev: &dv(&[1.0]),
                u: &dv(&[2.0]),
                x_next: &dv(&[3.5]),
            },
            &model,
        )
        .unwrap();
        assert_eq!(post.probs()[1], 0.0);
        assert!(post.probs()[0] > 0.0 && post.probs()[2] > 0.0);
    }

    #[test]
    fn degenerate_update_reports_diagnostics() {
        let model = two_scenario_model();
        let b = Belief::new(vec![0.5, 0.5]).unwrap();
        // Control so large the squared residual overflows to infinity for
        // both scenarios, leaving no finite log-weight.
        let err = posterior_update(
            &b,
            Transition {
                x_prev: &dv(&[0.0]),
                u: &dv(&[1e200]),
                x_next: &dv(&[0.0]),
            },
            &model,
        )
        .unwrap_err();
        match err {
            Error::DegenerateUpdate(diag) => {
                assert_eq!(diag.prior, vec![0.5, 0.5]);
                assert!(diag.log_weights.iter().all(|lw| !lw.is_finite()));
            }
            other => panic!("expected degenerate update, got {other:?}"),
        }
    }

    #[test]
    fn likelihood_scale_invariance() {
        // The log-space update must agree with directly computed densities
        // rescaled by an arbitrary positive constant.
        let model = two_scenario_model();
        let b = Belief::new(vec![0.25, 0.75]).unwrap();
        let (x_prev, u, x_next) = (dv(&[0.5]), dv(&[1.5]), dv(&[2.0]));
        let post = posterior_update(
            &b,
            Transition {
                x_prev: &x_prev,
                u: &u,
                x_next: &x_next,
            },
            &model,
        )
        .unwrap();
        for scale in [1.0, 1e-30, 1e30] {
            let mut weights = Vec::new();
            for (i, p) in b.probs().iter().enumerate() {
                let mean = &model.a * &x_prev + &model.b[i] * &u;
                weights
                    .push(scale * gaussian_density(&x_next, &mean, &model.noise_cov).unwrap() * p);
            }
            let total: f64 = weights.iter().sum();
            for (i, w) in weights.iter().enumerate() {
                assert_relative_eq!(post.probs()[i], w / total, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn nominal_update_mirrors_realized() {
        let model = two_scenario_model();
        let b = Belief::new(vec![0.5, 0.5]).unwrap();
        let post =
            nominal_posterior_update(&b, &dv(&[0.0]), &dv(&[1.0]), &dv(&[1.0]), &model).unwrap();
        assert_relative_eq!(post.probs()[0], 0.62246, epsilon = 1e-5);
    }

    #[test]
    fn nominal_update_keeps_delta_prior() {
        let model = two_scenario_model();
        let b = Belief::delta(2, 1);
        let post =
            nominal_posterior_update(&b, &dv(&[1.0]), &dv(&[-0.4]), &dv(&[0.3]), &model).unwrap();
        assert_eq!(post.probs(), &[0.0, 1.0]);
    }

    #[test]
    fn nominal_update_consistent_trajectory_stays_degenerate() {
        // Nominal state generated under belief (1, 0) with scenario-1
        // dynamics exact: the belief must remain (1, 0).
        let model = two_scenario_model();
        let b = Belief::delta(2, 0);
        let x_bar = dv(&[1.0]);
        let u_hat = dv(&[-0.5]);
        let x_next = &model.a * &x_bar + &model.b[0] * &u_hat;
        let post = nominal_posterior_update(&b, &x_bar, &u_hat, &x_next, &model).unwrap();
        assert_eq!(post.probs(), &[1.0, 0.0]);
    }

    proptest! {
        #[test]
        fn simplex_preserved(
            raw in proptest::collection::vec(1e-6f64..1.0, 2..5),
            x_prev in -3.0f64..3.0,
            u in -3.0f64..3.0,
            x_next in -6.0f64..6.0,
        ) {
            let sum: f64 = raw.iter().sum();
            let probs: Vec<f64> = raw.iter().map(|p| p / sum).collect();
            let b = Belief::new(probs).unwrap();
            let n = b.len();
            let gains: Vec<f64> = (0..n).map(|i| i as f64).collect();
            let model = SystemModel::scalar(
                1.0, &gains, 1.0, 1.0, 1.0, 2, 1.0, Belief::uniform(n),
            ).unwrap();
            let post = posterior_update(
                &b,
                Transition {
                    x_prev: &dv(&[x_prev]),
                    u: &dv(&[u]),
                    x_next: &dv(&[x_next]),
                },
                &model,
            ).unwrap();
            let total: f64 = post.probs().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(post.probs().iter().all(|p| *p >= 0.0));
        }

        #[test]
        fn zero_control_identifiability(
            raw in proptest::collection::vec(1e-6f64..1.0, 2..5),
            x_next in -6.0f64..6.0,
        ) {
            let sum: f64 = raw.iter().sum();
            let probs: Vec<f64> = raw.iter().map(|p| p / sum).collect();
            let b = Belief::new(probs.clone()).unwrap();
            let n = b.len();
            let gains: Vec<f64> = (0..n).map(|i| 1.0 + i as f64).collect();
            let model = SystemModel::scalar(
                1.0, &gains, 1.0, 1.0, 1.0, 2, 1.0, Belief::uniform(n),
            ).unwrap();
            let post = posterior_update(
                &b,
                Transition {
                    x_prev: &dv(&[1.0]),
                    u: &dv(&[0.0]),
                    x_next: &dv(&[x_next]),
                },
                &model,
            ).unwrap();
            for (before, after) in probs.iter().zip(post.probs()) {
                prop_assert!((before - after).abs() < 1e-14);
            }
        }
    }
}
