//! Experiment orchestration shared by the binary and the test suites.

use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};

use scenario_lqg::montecarlo::{run_experiment, ExperimentResult};
use scenario_lqg::pha::{run_two_layer_traced, IterationRecord};

use crate::config::ExperimentConfig;

/// Environment variable consulted for the default master seed.
pub const SEED_ENV_VAR: &str = "SCENARIO_LQG_SEED";
/// Fallback master seed when neither flag, config, nor environment set one.
pub const DEFAULT_SEED: u64 = 42;

/// Overrides applied on top of the loaded configs.
#[derive(Debug, Clone, Default)]
pub struct RunSettings {
    /// Keep only the experiment with this id.
    pub experiment_filter: Option<String>,
    /// Algorithm tokens replacing each config's list.
    pub algos: Option<Vec<String>>,
    /// Path count override.
    pub sims: Option<usize>,
    /// Master seed override.
    pub seed: Option<u64>,
}

/// One experiment's outcome: the result, or the failure message. Partial
/// output is still rendered from whatever succeeded.
#[derive(Debug)]
pub struct ExperimentRun {
    pub id: String,
    pub outcome: std::result::Result<ExperimentResult, String>,
}

/// The whole run plus the derived process exit code.
#[derive(Debug)]
pub struct SuiteOutcome {
    pub runs: Vec<ExperimentRun>,
}

impl SuiteOutcome {
    pub fn results(&self) -> Vec<&ExperimentResult> {
        self.runs
            .iter()
            .filter_map(|r| r.outcome.as_ref().ok())
            .collect()
    }

    /// Zero only when every experiment completed with converged hedging and
    /// no rollout failures.
    pub fn exit_code(&self) -> i32 {
        let clean = self.runs.iter().all(|run| match &run.outcome {
            Ok(result) => result.per_algorithm.iter().all(|o| o.failures == 0),
            Err(_) => false,
        });
        if clean {
            0
        } else {
            1
        }
    }
}

fn resolve_seed(config: &ExperimentConfig, settings: &RunSettings) -> u64 {
    if let Some(seed) = settings.seed {
        return seed;
    }
    if let Some(seed) = config.seed {
        return seed;
    }
    if let Ok(raw) = std::env::var(SEED_ENV_VAR) {
        if let Ok(seed) = raw.parse() {
            return seed;
        }
    }
    DEFAULT_SEED
}

/// Run the selected experiments sequentially (rollouts inside each
/// experiment parallelize), echoing the effective settings to stderr.
pub fn run_suite(configs: &[ExperimentConfig], settings: &RunSettings) -> Result<SuiteOutcome> {
    run_suite_with_trace(configs, settings, None)
}

/// [`run_suite`] with an optional hedging-iteration trace written as one
/// JSON object per line. The trace covers each experiment's main two-layer
/// solve (not the per-path rolling re-solves).
pub fn run_suite_with_trace(
    configs: &[ExperimentConfig],
    settings: &RunSettings,
    trace_path: Option<&Path>,
) -> Result<SuiteOutcome> {
    let selected: Vec<&ExperimentConfig> = configs
        .iter()
        .filter(|c| {
            settings
                .experiment_filter
                .as_ref()
                .is_none_or(|want| &c.id == want)
        })
        .collect();
    anyhow::ensure!(
        !selected.is_empty(),
        "no experiment matches the requested selection"
    );

    let mut trace_file = match trace_path {
        Some(path) => Some(
            std::fs::File::create(path)
                .with_context(|| format!("creating trace file {}", path.display()))?,
        ),
        None => None,
    };

    let mut runs = Vec::with_capacity(selected.len());
    for config in selected {
        let outcome = run_one(config, settings, trace_file.as_mut());
        runs.push(ExperimentRun {
            id: config.id.clone(),
            outcome,
        });
    }
    Ok(SuiteOutcome { runs })
}

fn run_one(
    config: &ExperimentConfig,
    settings: &RunSettings,
    trace_file: Option<&mut std::fs::File>,
) -> std::result::Result<ExperimentResult, String> {
    let seed = resolve_seed(config, settings);
    let model = config.to_model().map_err(|e| e.to_string())?;
    let algorithms = config
        .algorithms(settings.algos.as_deref())
        .map_err(|e| e.to_string())?;
    let plan = config.plan(algorithms, seed, settings.sims);
    let pha_cfg = config.pha_config();

    eprintln!(
        "experiment {}: horizon {}, {} scenarios, {} paths, seed {}, penalty {}, tol {:e}, algorithms [{}]",
        config.id,
        config.horizon,
        model.num_scenarios(),
        plan.num_sims,
        seed,
        pha_cfg.penalty,
        pha_cfg.tol,
        plan.algorithms
            .iter()
            .map(|a| a.label())
            .collect::<Vec<_>>()
            .join(", "),
    );

    if let Some(file) = trace_file {
        let id = config.id.clone();
        let mut write_record = |rec: &IterationRecord<'_>| {
            let k_hat: Vec<Vec<Vec<f64>>> = rec
                .implementable
                .gains
                .iter()
                .map(|k| {
                    (0..k.nrows())
                        .map(|r| (0..k.ncols()).map(|c| k[(r, c)]).collect())
                        .collect()
                })
                .collect();
            let line = serde_json::json!({
                "experiment": id,
                "iteration": rec.iteration,
                "err": rec.err,
                "k_hat": k_hat,
            });
            // Trace writes are best-effort diagnostics.
            let _ = writeln!(file, "{line}");
        };
        run_two_layer_traced(&model, &pha_cfg, Some(&mut write_record))
            .map_err(|e| e.to_string())?;
    }

    run_experiment(&config.id, &model, &plan, &pha_cfg).map_err(|e| e.to_string())
}
