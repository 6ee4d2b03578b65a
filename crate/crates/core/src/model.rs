//! Problem data: the LQG instance with a scenario-valued gain matrix, and
//! time-indexed linear feedback policies.

use nalgebra::{DMatrix, DVector};

use crate::belief::Belief;
use crate::error::{Error, Result};

/// Tolerance for symmetry checks on cost/covariance matrices.
const SYM_TOL: f64 = 1e-10;
/// Slack allowed below zero for smallest eigenvalues of PSD matrices.
const PSD_TOL: f64 = 1e-10;

/// A finite-horizon LQG control problem whose gain matrix takes one of N
/// scenario values.
///
/// Dynamics: `x_{t+1} = A x_t + B_i u_t + xi_t` with `xi_t ~ N(0, noise_cov)`,
/// stage cost `0.5 x'Qx + 0.5 u'Ru`, terminal cost `0.5 x'Qx`, and a prior
/// belief over which scenario gain `B_i` is the true one.
#[derive(Debug, Clone)]
pub struct SystemModel {
    /// State transition matrix, n x n.
    pub a: DMatrix<f64>,
    /// Scenario gain matrices, each n x m.
    pub b: Vec<DMatrix<f64>>,
    /// State cost weight, n x n, symmetric PSD.
    pub q: DMatrix<f64>,
    /// Control cost weight, m x m, symmetric PD.
    pub r: DMatrix<f64>,
    /// Noise covariance, n x n, symmetric PSD.
    pub noise_cov: DMatrix<f64>,
    /// Number of decision stages T.
    pub horizon: usize,
    /// Initial state.
    pub x0: DVector<f64>,
    /// Prior belief over the N scenarios.
    pub prior: Belief,
}

impl SystemModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: DMatrix<f64>,
        b: Vec<DMatrix<f64>>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        noise_cov: DMatrix<f64>,
        horizon: usize,
        x0: DVector<f64>,
        prior: Belief,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidModel("horizon must be positive".into()));
        }
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::InvalidModel("A must be square".into()));
        }
        if b.is_empty() {
            return Err(Error::InvalidModel(
                "at least one scenario gain is required".into(),
            ));
        }
        let m = b[0].ncols();
        for (i, bi) in b.iter().enumerate() {
            if bi.nrows() != n || bi.ncols() != m {
                return Err(Error::InvalidModel(format!(
                    "scenario gain {i} must be {n}x{m}, got {}x{}",
                    bi.nrows(),
                    bi.ncols()
                )));
            }
        }
        if q.nrows() != n || q.ncols() != n {
            return Err(Error::InvalidModel(format!("Q must be {n}x{n}")));
        }
        if r.nrows() != m || r.ncols() != m {
            return Err(Error::InvalidModel(format!("R must be {m}x{m}")));
        }
        if noise_cov.nrows() != n || noise_cov.ncols() != n {
            return Err(Error::InvalidModel(format!("noise_cov must be {n}x{n}")));
        }
        if x0.len() != n {
            return Err(Error::InvalidModel(format!("x0 must have length {n}")));
        }
        check_sym_psd(&q, "Q")?;
        check_sym_psd(&noise_cov, "noise_cov")?;
        check_sym_pd(&r, "R")?;
        if prior.len() != b.len() {
            return Err(Error::InvalidModel(format!(
                "prior has {} entries but there are {} scenarios",
                prior.len(),
                b.len()
            )));
        }
        Ok(Self {
            a,
            b,
            q,
            r,
            noise_cov,
            horizon,
            x0,
            prior,
        })
    }

    /// Scalar-model shorthand: `x_{t+1} = a x_t + b_i u_t + xi_t` with
    /// `xi_t ~ N(0, sigma^2)`.
    #[allow(clippy::too_many_arguments)]
    pub fn scalar(
        a: f64,
        b_values: &[f64],
        q: f64,
        r: f64,
        sigma: f64,
        horizon: usize,
        x0: f64,
        prior: Belief,
    ) -> Result<Self> {
        Self::new(
            DMatrix::from_element(1, 1, a),
            b_values
                .iter()
                .map(|&bi| DMatrix::from_element(1, 1, bi))
                .collect(),
            DMatrix::from_element(1, 1, q),
            DMatrix::from_element(1, 1, r),
            DMatrix::from_element(1, 1, sigma * sigma),
            horizon,
            DVector::from_element(1, x0),
            prior,
        )
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.b[0].ncols()
    }

    pub fn num_scenarios(&self) -> usize {
        self.b.len()
    }

    /// The remaining-horizon subproblem starting at stage `start` with a new
    /// initial state and prior. System matrices carry over unchanged.
    pub fn truncated(&self, start: usize, x0: DVector<f64>, prior: Belief) -> Result<Self> {
        if start >= self.horizon {
            return Err(Error::InvalidModel(format!(
                "truncation start {start} leaves no stages (horizon {})",
                self.horizon
            )));
        }
        if x0.len() != self.state_dim() {
            return Err(Error::InvalidModel("truncated x0 has wrong length".into()));
        }
        if prior.len() != self.num_scenarios() {
            return Err(Error::InvalidModel(
                "truncated prior has wrong length".into(),
            ));
        }
        Ok(Self {
            horizon: self.horizon - start,
            x0,
            prior,
            ..self.clone()
        })
    }
}

fn check_symmetric(m: &DMatrix<f64>, name: &str) -> Result<()> {
    let scale = 1.0 + m.amax();
    let skew = (m - m.transpose()).amax();
    if skew > SYM_TOL * scale {
        return Err(Error::InvalidModel(format!(
            "{name} is not symmetric (max asymmetry {skew:.3e})"
        )));
    }
    Ok(())
}

fn check_sym_psd(m: &DMatrix<f64>, name: &str) -> Result<()> {
    check_symmetric(m, name)?;
    let eigs = m.clone().symmetric_eigenvalues();
    let min = eigs.min();
    if min < -PSD_TOL * (1.0 + m.amax()) {
        return Err(Error::InvalidModel(format!(
            "{name} is not positive semidefinite (min eigenvalue {min:.3e})"
        )));
    }
    Ok(())
}

fn check_sym_pd(m: &DMatrix<f64>, name: &str) -> Result<()> {
    check_symmetric(m, name)?;
    if nalgebra::linalg::Cholesky::new(m.clone()).is_none() {
        return Err(Error::InvalidModel(format!(
            "{name} is not positive definite"
        )));
    }
    Ok(())
}

/// A time-indexed linear feedback policy `u_t(x) = -K_t x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPolicy {
    /// Feedback gains `K_t`, one m x n matrix per stage.
    pub gains: Vec<DMatrix<f64>>,
}

impl LinearPolicy {
    pub fn new(gains: Vec<DMatrix<f64>>) -> Result<Self> {
        if gains.is_empty() {
            return Err(Error::InvalidModel(
                "policy must have at least one gain".into(),
            ));
        }
        for (t, k) in gains.iter().enumerate() {
            if k.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidModel(format!(
                    "policy gain at stage {t} is not finite"
                )));
            }
        }
        Ok(Self { gains })
    }

    /// All-zero policy with `horizon` gains of shape m x n.
    pub fn zeros(horizon: usize, m: usize, n: usize) -> Self {
        Self {
            gains: (0..horizon).map(|_| DMatrix::zeros(m, n)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains.is_empty()
    }

    /// The feedback control `-K_t x`.
    pub fn control(&self, t: usize, x: &DVector<f64>) -> DVector<f64> {
        -(&self.gains[t] * x)
    }
}
