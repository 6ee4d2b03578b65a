//! Result rendering: machine CSV at full precision, an aligned markdown
//! table for humans, and per-path cost dumps.

use anyhow::{bail, Context, Result};

use scenario_lqg::montecarlo::ExperimentResult;

/// CSV column header.
pub const CSV_HEADER: &str = "experiment_id,algorithm,mean,std_dev,std_err,n,failures";

/// Full-precision float formatting: 17 significant digits round-trip f64
/// exactly.
fn full(v: f64) -> String {
    format!("{v:.16e}")
}

/// Machine-readable CSV, one row per (experiment, algorithm).
pub fn render_csv(results: &[ExperimentResult]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for result in results {
        for outcome in &result.per_algorithm {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                result.experiment_id,
                outcome.kind.label(),
                full(outcome.stats.mean),
                full(outcome.stats.std_dev),
                full(outcome.stats.std_err),
                outcome.stats.n,
                outcome.failures,
            ));
        }
    }
    out
}

/// One parsed CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub experiment_id: String,
    pub algorithm: String,
    pub mean: f64,
    pub std_dev: f64,
    pub std_err: f64,
    pub n: usize,
    pub failures: usize,
}

/// Parse the CSV emitted by [`render_csv`].
pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header == CSV_HEADER => {}
        other => bail!("unexpected CSV header: {other:?}"),
    }
    let mut rows = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            bail!("line {}: expected 7 fields, got {}", idx + 2, fields.len());
        }
        rows.push(CsvRow {
            experiment_id: fields[0].to_string(),
            algorithm: fields[1].to_string(),
            mean: fields[2]
                .parse()
                .with_context(|| format!("line {}", idx + 2))?,
            std_dev: fields[3].parse()?,
            std_err: fields[4].parse()?,
            n: fields[5].parse()?,
            failures: fields[6].parse()?,
        });
    }
    Ok(rows)
}

/// Human-readable markdown table: one row per experiment, one column per
/// algorithm showing `mean (std_err)` to four decimals, the per-row minimum
/// mean in bold.
pub fn render_markdown(results: &[ExperimentResult]) -> String {
    // Column order: algorithms in first-encounter order across experiments.
    let mut labels: Vec<&'static str> = Vec::new();
    for result in results {
        for outcome in &result.per_algorithm {
            let label = outcome.kind.label();
            if !labels.contains(&label) {
                labels.push(label);
            }
        }
    }

    // Build all cells first, then pad columns to a common width.
    let mut grid: Vec<Vec<String>> = Vec::with_capacity(results.len() + 1);
    let mut header = vec!["experiment".to_string()];
    header.extend(labels.iter().map(|l| l.to_string()));
    grid.push(header);
    for result in results {
        let min_mean = result
            .per_algorithm
            .iter()
            .map(|o| o.stats.mean)
            .fold(f64::INFINITY, f64::min);
        let mut row = vec![result.experiment_id.clone()];
        for label in &labels {
            row.push(match result.outcome_by_label(label) {
                Some(outcome) => {
                    let cell = format!("{:.4} ({:.4})", outcome.stats.mean, outcome.stats.std_err);
                    if outcome.stats.mean <= min_mean {
                        format!("**{cell}**")
                    } else {
                        cell
                    }
                }
                None => "n/a".to_string(),
            });
        }
        grid.push(row);
    }

    let widths: Vec<usize> = (0..grid[0].len())
        .map(|c| grid.iter().map(|row| row[c].len()).max().unwrap_or(3).max(3))
        .collect();
    let mut out = String::new();
    for (r, row) in grid.iter().enumerate() {
        out.push('|');
        for (cell, width) in row.iter().zip(&widths) {
            out.push_str(&format!(" {cell:<width$} |"));
        }
        out.push('\n');
        if r == 0 {
            out.push('|');
            for width in &widths {
                out.push_str(&format!("{:-<w$}|", "", w = width + 2));
            }
            out.push('\n');
        }
    }
    out
}

/// Per-path cost dump: one row per (experiment, algorithm, path). Failed
/// rollouts are written as `failed`.
pub fn render_path_dump(results: &[ExperimentResult]) -> String {
    let mut out = String::from("experiment_id,algorithm,path,cost\n");
    for result in results {
        for outcome in &result.per_algorithm {
            for (k, cost) in outcome.per_path.iter().enumerate() {
                match cost {
                    Some(c) => out.push_str(&format!(
                        "{},{},{},{}\n",
                        result.experiment_id,
                        outcome.kind.label(),
                        k,
                        full(*c)
                    )),
                    None => out.push_str(&format!(
                        "{},{},{},failed\n",
                        result.experiment_id,
                        outcome.kind.label(),
                        k
                    )),
                }
            }
        }
    }
    out
}
