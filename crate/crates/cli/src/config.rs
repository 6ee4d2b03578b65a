//! Experiment configuration: JSON loading with a scalar shorthand, a
//! full-matrix form, and the source-embedded `table1` preset.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use scenario_lqg::belief::Belief;
use scenario_lqg::model::SystemModel;
use scenario_lqg::montecarlo::SimulationPlan;
use scenario_lqg::pha::PhaConfig;
use scenario_lqg::policies::AlgorithmKind;

/// A scalar (shorthand) or a full matrix given as rows.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ScalarOrMatrix {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

impl ScalarOrMatrix {
    fn to_matrix(&self, name: &str) -> Result<DMatrix<f64>> {
        match self {
            ScalarOrMatrix::Scalar(v) => Ok(DMatrix::from_element(1, 1, *v)),
            ScalarOrMatrix::Matrix(rows) => {
                if rows.is_empty() || rows[0].is_empty() {
                    bail!("{name}: matrix must be non-empty");
                }
                let cols = rows[0].len();
                if rows.iter().any(|r| r.len() != cols) {
                    bail!("{name}: ragged matrix rows");
                }
                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                Ok(DMatrix::from_row_slice(rows.len(), cols, &flat))
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ScalarOrVector {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl ScalarOrVector {
    fn to_vector(&self) -> DVector<f64> {
        match self {
            ScalarOrVector::Scalar(v) => DVector::from_element(1, *v),
            ScalarOrVector::Vector(vals) => DVector::from_row_slice(vals),
        }
    }
}

fn default_penalty() -> f64 {
    1.0
}
fn default_tol() -> f64 {
    1e-5
}
fn default_epsilon() -> f64 {
    0.1
}
fn default_num_sims() -> usize {
    10_000
}

/// One experiment row: the model in scalar shorthand or full-matrix form,
/// plus solver and simulation settings with their documented defaults.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub id: String,
    pub horizon: usize,
    pub a: ScalarOrMatrix,
    pub q: ScalarOrMatrix,
    pub r_cost: ScalarOrMatrix,
    /// Scalar form: the noise standard deviation. Matrix form: the full
    /// noise covariance.
    pub sigma: ScalarOrMatrix,
    pub x0: ScalarOrVector,
    pub b_values: Vec<ScalarOrMatrix>,
    pub prior: Vec<f64>,
    #[serde(default = "default_penalty")]
    pub pha_penalty: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_num_sims")]
    pub num_sims: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Empty means all seven algorithms.
    #[serde(default)]
    pub algorithms: Vec<String>,
}

impl ExperimentConfig {
    pub fn to_model(&self) -> Result<SystemModel> {
        let a = self.a.to_matrix("a")?;
        let n = a.nrows();
        let q = self.q.to_matrix("q")?;
        let r = self.r_cost.to_matrix("r_cost")?;
        let noise_cov = match &self.sigma {
            ScalarOrMatrix::Scalar(s) => DMatrix::identity(n, n) * (s * s),
            m @ ScalarOrMatrix::Matrix(_) => m.to_matrix("sigma")?,
        };
        let b = self
            .b_values
            .iter()
            .enumerate()
            .map(|(i, v)| v.to_matrix(&format!("b_values[{i}]")))
            .collect::<Result<Vec<_>>>()?;
        let prior = Belief::new(self.prior.clone()).map_err(|e| anyhow!("prior: {e}"))?;
        SystemModel::new(
            a,
            b,
            q,
            r,
            noise_cov,
            self.horizon,
            self.x0.to_vector(),
            prior,
        )
        .map_err(|e| anyhow!("experiment {}: {e}", self.id))
    }

    pub fn pha_config(&self) -> PhaConfig {
        PhaConfig {
            penalty: self.pha_penalty,
            tol: self.tol,
            max_iters: PhaConfig::default().max_iters,
        }
    }

    /// Resolve the algorithm list, with an empty list meaning all seven.
    pub fn algorithms(&self, override_tokens: Option<&[String]>) -> Result<Vec<AlgorithmKind>> {
        let tokens: &[String] = match override_tokens {
            Some(t) => t,
            None => &self.algorithms,
        };
        if tokens.is_empty() {
            return Ok(AlgorithmKind::all(self.epsilon));
        }
        tokens
            .iter()
            .map(|t| parse_algorithm(t, self.epsilon))
            .collect()
    }

    pub fn plan(
        &self,
        algorithms: Vec<AlgorithmKind>,
        seed: u64,
        sims_override: Option<usize>,
    ) -> SimulationPlan {
        SimulationPlan {
            num_sims: sims_override.unwrap_or(self.num_sims),
            master_seed: seed,
            algorithms,
        }
    }

    /// Surface invariant violations (with the offending field named) without
    /// running anything.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            bail!("experiment {}: epsilon must be in [0, 1]", self.id);
        }
        if self.pha_penalty <= 0.0 {
            bail!("experiment {}: pha_penalty must be positive", self.id);
        }
        if self.tol <= 0.0 {
            bail!("experiment {}: tol must be positive", self.id);
        }
        if self.num_sims == 0 {
            bail!("experiment {}: num_sims must be at least 1", self.id);
        }
        self.to_model()?;
        self.algorithms(None)?;
        Ok(())
    }
}

/// Parse one algorithm token (case-insensitive; `-`/`_` interchangeable).
pub fn parse_algorithm(token: &str, epsilon: f64) -> Result<AlgorithmKind> {
    let canon = token.trim().to_ascii_uppercase().replace('-', "_");
    Ok(match canon.as_str() {
        "DP" | "DP2" => AlgorithmKind::Dp2,
        "TL" => AlgorithmKind::Tl,
        "TL_R" | "TLR" => AlgorithmKind::TlRolling,
        "DUL" => AlgorithmKind::Dul,
        "GRE" | "GREEDY" => AlgorithmKind::Greedy,
        "EPS_GRE" | "EPSGRE" | "EPSILON_GREEDY" => AlgorithmKind::EpsGreedy { epsilon },
        "TS" | "THOMPSON" => AlgorithmKind::Thompson,
        _ => bail!("unknown algorithm {token:?} (expected DP2, TL, TL_R, DUL, GRE, EPS_GRE, TS)"),
    })
}

/// Load experiment configs from a JSON file holding either a single object
/// or an array of objects. Unknown keys are rejected; every config is
/// validated before anything runs.
pub fn load_config(path: &Path) -> Result<Vec<ExperimentConfig>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config file {}", path.display()))?;
    let configs: Vec<ExperimentConfig> = match serde_json::from_str::<Vec<ExperimentConfig>>(&text)
    {
        Ok(list) => list,
        Err(list_err) => match serde_json::from_str::<ExperimentConfig>(&text) {
            Ok(single) => vec![single],
            Err(single_err) => {
                // Report whichever parse got further; the array error carries
                // line/column context for array inputs.
                if text.trim_start().starts_with('[') {
                    bail!("parsing {}: {list_err}", path.display());
                }
                bail!("parsing {}: {single_err}", path.display());
            }
        },
    };
    if configs.is_empty() {
        bail!("{}: no experiments defined", path.display());
    }
    for cfg in &configs {
        cfg.validate()?;
    }
    Ok(configs)
}

fn preset_row(id: &str, horizon: usize, b2: f64, p01: f64, with_dp: bool) -> ExperimentConfig {
    let algorithms = if with_dp {
        vec![]
    } else {
        ["TL", "TL_R", "DUL", "GRE", "EPS_GRE", "TS"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    };
    ExperimentConfig {
        id: id.to_string(),
        horizon,
        a: ScalarOrMatrix::Scalar(1.0),
        q: ScalarOrMatrix::Scalar(1.0),
        r_cost: ScalarOrMatrix::Scalar(1.0),
        sigma: ScalarOrMatrix::Scalar(1.0),
        x0: ScalarOrVector::Scalar(1.0),
        b_values: vec![ScalarOrMatrix::Scalar(1.0), ScalarOrMatrix::Scalar(b2)],
        prior: vec![p01, 1.0 - p01],
        pha_penalty: default_penalty(),
        tol: default_tol(),
        epsilon: default_epsilon(),
        num_sims: default_num_sims(),
        seed: None,
        algorithms,
    }
}

/// The twelve benchmark experiments: a = Q = R = sigma = x0 = 1, two
/// scenario gains, varying horizon, second gain, and prior. The DP
/// benchmark only applies to the two-stage rows.
pub fn table1_preset() -> Vec<ExperimentConfig> {
    let third = 1.0 / 3.0;
    vec![
        preset_row("i", 2, 2.0, third, true),
        preset_row("ii", 2, 5.0, third, true),
        preset_row("iii", 2, 10.0, third, true),
        preset_row("iv", 2, 2.0, 0.5, true),
        preset_row("v", 2, 2.0, 2.0 * third, true),
        preset_row("vi", 2, 2.0, 1.0, true),
        preset_row("vii", 3, 2.0, third, false),
        preset_row("viii", 3, 2.0, 0.5, false),
        preset_row("ix", 3, 2.0, 2.0 * third, false),
        preset_row("x", 5, 2.0, third, false),
        preset_row("xi", 5, 2.0, 0.5, false),
        preset_row("xii", 5, 2.0, 2.0 * third, false),
    ]
}

/// Look up a preset collection by name.
pub fn preset(name: &str) -> Result<Vec<ExperimentConfig>> {
    match name {
        "table1" => Ok(table1_preset()),
        other => bail!("unknown preset {other:?} (available: table1)"),
    }
}
