//! Result files.
//!
//! Every CSV starts with a `# schema=<name>/<version>` line; the version pins
//! the column list. `results.csv` holds one row per (agent, trial) followed by
//! one aggregate row per agent. Empty cells mean "not applicable".
//!
//! | file          | columns |
//! |---------------|---------|
//! | `results.csv` | row, agent, trial, iterations, final_reward, final_reward_ci95, sqrt_mse, sqrt_mse_ci95, repartitions |
//! | `curve.csv`   | agent, window, iteration, mean_reward, ci95 |
//! | `scores.csv`  | agent, trial, iteration, mse, l, l_tilde |
//! | `cycle.csv`   | states, samples, mean_c1, var_c1, mean_c, mean_l1, mean_c1_leading, var_c1_leading |
//! | `timings.csv` | agent, trial, iterations, micros_per_iter (wall clock, not reproducible) |
//!
//! The `timing` subcommand writes `timings.csv` as agent, iterations,
//! repeats, micros_per_iter, overhead_vs_fixed instead.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AgentKind, ExperimentConfig, Report};
use crate::error::{Error, Result};

pub const RESULTS_SCHEMA: &str = "pasa-results/1";
pub const CURVE_SCHEMA: &str = "pasa-curve/1";
pub const SCORES_SCHEMA: &str = "pasa-scores/1";
pub const CYCLE_SCHEMA: &str = "pasa-cycle/1";
pub const TIMINGS_SCHEMA: &str = "pasa-timings/1";

/// One line of `results.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    /// `trial` or `aggregate`.
    pub row: String,
    pub agent: String,
    pub trial: Option<usize>,
    pub iterations: u64,
    pub final_reward: f64,
    pub final_reward_ci95: Option<f64>,
    pub sqrt_mse: Option<f64>,
    pub sqrt_mse_ci95: Option<f64>,
    pub repartitions: f64,
}

fn csv_text<T: Serialize>(schema: &str, rows: impl IntoIterator<Item = T>, header: &[&str]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| csv_err(e.into_error().into()))?)
        .expect("csv output is UTF-8");
    Ok(format!("# schema={schema}\n{body}"))
}

fn csv_err(e: csv::Error) -> Error {
    Error::invalid(format!("csv encoding failed: {e}"))
}

fn write(out: &Path, name: &str, text: &str) -> Result<()> {
    let path = out.join(name);
    std::fs::write(&path, text).map_err(|e| Error::io(path, e))
}

pub fn result_rows(report: &Report) -> Vec<ResultRow> {
    let mut rows = Vec::new();
    for s in &report.summaries {
        for t in report.trials.iter().filter(|t| t.agent == s.agent) {
            rows.push(ResultRow {
                row: "trial".into(),
                agent: t.agent.name().into(),
                trial: Some(t.trial),
                iterations: t.iterations,
                final_reward: t.final_reward,
                final_reward_ci95: None,
                sqrt_mse: t.sqrt_mse,
                sqrt_mse_ci95: None,
                repartitions: t.repartitions as f64,
            });
        }
    }
    for s in &report.summaries {
        rows.push(ResultRow {
            row: "aggregate".into(),
            agent: s.agent.name().into(),
            trial: None,
            iterations: s.iterations,
            final_reward: s.final_reward,
            final_reward_ci95: Some(s.final_reward_ci95),
            sqrt_mse: s.sqrt_mse,
            sqrt_mse_ci95: s.sqrt_mse_ci95,
            repartitions: s.repartitions,
        });
    }
    rows
}

const RESULT_COLUMNS: [&str; 9] = [
    "row",
    "agent",
    "trial",
    "iterations",
    "final_reward",
    "final_reward_ci95",
    "sqrt_mse",
    "sqrt_mse_ci95",
    "repartitions",
];

/// Parse a `results.csv` written by [`write_outputs`].
pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        message,
    };
    let mut lines = text.splitn(2, '\n');
    let first = lines.next().unwrap_or_default();
    if first != format!("# schema={RESULTS_SCHEMA}") {
        return Err(parse_err(format!("unexpected schema line {first:?}")));
    }
    let mut r = csv::Reader::from_reader(lines.next().unwrap_or_default().as_bytes());
    let header = r.headers().map_err(|e| parse_err(e.to_string()))?;
    if header.iter().ne(RESULT_COLUMNS) {
        return Err(parse_err(format!("unexpected columns {header:?}")));
    }
    r.deserialize()
        .collect::<std::result::Result<Vec<ResultRow>, _>>()
        .map_err(|e| parse_err(e.to_string()))
}

/// Write the report's files into `out`, creating it if needed.
pub fn write_outputs(report: &Report, cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write(out, "config.toml", &cfg.to_toml())?;

    if let Some(c) = &report.cycle {
        let s = cfg.cycle.as_ref().map_or(0, |c| c.states) as f64;
        let row = (
            s as usize,
            c.samples,
            c.mean_c1,
            c.var_c1,
            c.mean_c,
            c.mean_l1,
            (std::f64::consts::PI * s / 8.0).sqrt(),
            (32.0 - 8.0 * std::f64::consts::PI) * s / 24.0,
        );
        let header = [
            "states",
            "samples",
            "mean_c1",
            "var_c1",
            "mean_c",
            "mean_l1",
            "mean_c1_leading",
            "var_c1_leading",
        ];
        write(out, "cycle.csv", &csv_text(CYCLE_SCHEMA, [row], &header)?)?;
        return Ok(());
    }

    write(out, "results.csv", &csv_text(RESULTS_SCHEMA, result_rows(report), &RESULT_COLUMNS)?)?;

    let curve = report
        .curve
        .iter()
        .map(|p| (p.agent.name(), p.window, p.iteration, p.mean_reward, p.ci95));
    let header = ["agent", "window", "iteration", "mean_reward", "ci95"];
    write(out, "curve.csv", &csv_text(CURVE_SCHEMA, curve, &header)?)?;

    let scores: Vec<_> = report.trials.iter().flat_map(|t| &t.scores).collect();
    if !scores.is_empty() {
        let rows = scores
            .iter()
            .map(|s| (s.agent.name(), s.trial, s.iteration, s.mse, s.l, s.l_tilde));
        let header = ["agent", "trial", "iteration", "mse", "l", "l_tilde"];
        write(out, "scores.csv", &csv_text(SCORES_SCHEMA, rows, &header)?)?;
    }

    if cfg.log_events {
        let mut text = String::new();
        for line in report.trials.iter().flat_map(|t| &t.events) {
            writeln!(text, "{line}").expect("writing to a String");
        }
        write(out, "events.log", &text)?;
    }

    let timings = if report.timing.is_empty() {
        let rows = report
            .trials
            .iter()
            .map(|t| (t.agent.name(), t.trial, t.iterations, t.micros_per_iter));
        csv_text(TIMINGS_SCHEMA, rows, &["agent", "trial", "iterations", "micros_per_iter"])?
    } else {
        let overhead = report.overhead();
        let rows = report.timing.iter().map(|t| {
            let ratio = if t.agent == AgentKind::Pasa { overhead } else { None };
            (t.agent.name(), t.iterations, t.repeats, t.micros_per_iter, ratio)
        });
        let header = ["agent", "iterations", "repeats", "micros_per_iter", "overhead_vs_fixed"];
        csv_text(TIMINGS_SCHEMA, rows, &header)?
    };
    write(out, "timings.csv", &timings)
}
