//! A two-layer approximate solver for finite-horizon LQG control when the
//! gain matrix is unknown but confined to a finite scenario set.
//!
//! The lower layer ([`scenario_dp`]) solves each known-gain scenario
//! subproblem in closed form by backward Riccati recursion, together with
//! the Lagrangian-augmented variant used inside the hedging loop. The upper
//! layer ([`pha`]) runs progressive hedging over the scenarios, re-weighting
//! the scenario policies with Bayesian beliefs ([`belief`]) updated along a
//! nominal trajectory, and converges to a single implementable linear
//! feedback policy. [`policies`] wraps that policy and six comparison
//! algorithms behind one decision interface, and [`montecarlo`] evaluates
//! them on shared sample paths with fully reproducible randomness.
//!
//! ```
//! use scenario_lqg::belief::Belief;
//! use scenario_lqg::model::SystemModel;
//! use scenario_lqg::pha::{run_two_layer, PhaConfig};
//!
//! let prior = Belief::new(vec![1.0 / 3.0, 2.0 / 3.0]).unwrap();
//! let model = SystemModel::scalar(1.0, &[1.0, 2.0], 1.0, 1.0, 1.0, 2, 1.0, prior).unwrap();
//! let (policy, report) = run_two_layer(&model, &PhaConfig::default()).unwrap();
//! assert!(report.converged);
//! assert_eq!(policy.len(), 2);
//! ```

pub mod belief;
pub mod dp2;
pub mod error;
pub mod model;
pub mod montecarlo;
pub mod pha;
pub mod policies;
pub mod scenario_dp;

pub use error::{Error, Result};
