use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use scenario_lqg_cli::config::{load_config, preset};
use scenario_lqg_cli::output::{render_csv, render_markdown, render_path_dump};
use scenario_lqg_cli::runner::{run_suite_with_trace, RunSettings};

#[derive(Parser)]
#[command(
    name = "scenario-lqg",
    version,
    about = "Monte Carlo benchmark of decision algorithms for LQG control with an unknown gain"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run experiments and write a results table.
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Built-in experiment collection (table1).
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,

    /// JSON config file: one experiment object or an array of them.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Run only the experiment with this id.
    #[arg(long)]
    experiment: Option<String>,

    /// Comma-separated algorithm subset (DP2, TL, TL_R, DUL, GRE, EPS_GRE, TS).
    #[arg(long, value_delimiter = ',')]
    algos: Option<Vec<String>>,

    /// Override the number of simulated paths per experiment.
    #[arg(long)]
    sims: Option<usize>,

    /// Master seed (also settable via SCENARIO_LQG_SEED).
    #[arg(long)]
    seed: Option<u64>,

    /// Write the results table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Results table format.
    #[arg(long, value_enum, default_value_t = Format::Md)]
    format: Format,

    /// Write a line-delimited JSON trace of each experiment's hedging
    /// iterations to this file.
    #[arg(long)]
    trace_pha: Option<PathBuf>,

    /// Write per-path costs for every (experiment, algorithm) to this file.
    #[arg(long)]
    dump_paths: Option<PathBuf>,
}

#[derive(Copy, Clone, ValueEnum)]
enum Format {
    Csv,
    Md,
}

fn run(args: &RunArgs) -> Result<i32> {
    let configs = match (&args.preset, &args.config) {
        (Some(name), None) => preset(name)?,
        (None, Some(path)) => load_config(path)?,
        (None, None) => bail!("pass either --preset <name> or --config <path>"),
        (Some(_), Some(_)) => unreachable!("clap rejects the combination"),
    };

    let settings = RunSettings {
        experiment_filter: args.experiment.clone(),
        algos: args.algos.clone(),
        sims: args.sims,
        seed: args.seed,
    };

    let suite = run_suite_with_trace(&configs, &settings, args.trace_pha.as_deref())?;

    for run in &suite.runs {
        if let Err(message) = &run.outcome {
            eprintln!("experiment {} failed: {message}", run.id);
        }
    }

    let results: Vec<_> = suite.results().into_iter().cloned().collect();
    let table = match args.format {
        Format::Csv => render_csv(&results),
        Format::Md => render_markdown(&results),
    };
    match &args.out {
        Some(path) => std::fs::write(path, table)?,
        None => print!("{table}"),
    }
    if let Some(path) = &args.dump_paths {
        std::fs::write(path, render_path_dump(&results))?;
    }
    Ok(suite.exit_code())
}

fn main() {
    let cli = Cli::parse();
    let code = match &cli.command {
        Command::Run(args) => match run(args) {
            Ok(code) => code,
            Err(err) => {
                eprintln!("error: {err:#}");
                2
            }
        },
    };
    std::process::exit(code);
}
