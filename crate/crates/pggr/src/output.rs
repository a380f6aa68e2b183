//! JSON records, CSV tables and the plain-text comparison table.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use crate::harness::{Experiment, ExperimentSummary, RunRecord, SweepParam, SCHEMA_VERSION};

/// Three significant digits in scientific notation, `-` for missing values.
pub fn sci(x: Option<f64>) -> String {
    match x {
        Some(v) if v.is_finite() => format!("{v:.2e}"),
        Some(v) => v.to_string(),
        None => "-".into(),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Writes `summary.json`, `timing.json`, `table.csv`, `runs/run_NNNN.json`
/// and `trace_NNNN.csv` into `dir`.
pub fn write_experiment(dir: &Path, exp: &Experiment) -> Result<()> {
    let runs_dir = dir.join("runs");
    fs::create_dir_all(&runs_dir).with_context(|| format!("creating {}", runs_dir.display()))?;
    write_json(&dir.join("summary.json"), &exp.summary)?;
    write_json(&dir.join("timing.json"), &exp.timing)?;
    write_table_csv(&dir.join("table.csv"), &[(exp.summary.method.tag().to_string(), &exp.summary)])?;
    for run in &exp.runs {
        write_json(&runs_dir.join(format!("run_{:04}.json", run.index)), run)?;
        if run.result.is_some() {
            write_trace_csv(&dir.join(format!("trace_{:04}.csv", run.index)), run)?;
        }
    }
    Ok(())
}

pub fn write_trace_csv(path: &Path, run: &RunRecord) -> Result<()> {
    let Some(result) = &run.result else {
        bail!("run {} has no result to trace", run.index);
    };
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record([
        "config_hash",
        "schema_version",
        "run",
        "seed",
        "t",
        "sigma",
        "delta_star",
        "weight_cov",
        "predicted_failures",
        "ess",
        "g_evals",
        "train_mse",
        "selected",
    ])?;
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for s in &result.stages {
        let selected: Vec<String> = s.selected.iter().map(|i| i.to_string()).collect();
        w.write_record([
            run.config_hash.clone(),
            SCHEMA_VERSION.to_string(),
            run.index.to_string(),
            run.seed.to_string(),
            s.t.to_string(),
            s.sigma.to_string(),
            opt(s.delta_star),
            opt(s.weight_cov),
            s.predicted_failures.to_string(),
            opt(s.ess),
            s.g_evals.to_string(),
            opt(s.train_mse),
            selected.join(";"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per summary with the comparison-table columns, numbers at full precision.
pub fn write_table_csv(path: &Path, rows: &[(String, &ExperimentSummary)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record([
        "config_hash",
        "schema_version",
        "problem",
        "method",
        "n_g",
        "mean_estimate",
        "rel_error",
        "delta",
        "n_rep",
        "failures",
    ])?;
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for (label, s) in rows {
        w.write_record([
            s.config_hash.clone(),
            SCHEMA_VERSION.to_string(),
            s.problem.clone(),
            label.clone(),
            s.n_g.to_string(),
            s.mean_estimate.to_string(),
            opt(s.rel_error),
            opt(s.delta),
            s.n_rep.to_string(),
            s.failures.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep_csv(path: &Path, param: SweepParam, values: &[f64], exps: &[Experiment]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record([
        "config_hash",
        "schema_version",
        "parameter",
        "value",
        "mean_estimate",
        "delta",
        "rel_error",
        "n_g",
    ])?;
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for (v, e) in values.iter().zip(exps) {
        let s = &e.summary;
        w.write_record([
            s.config_hash.clone(),
            SCHEMA_VERSION.to_string(),
            param.tag().to_string(),
            v.to_string(),
            s.mean_estimate.to_string(),
            opt(s.delta),
            opt(s.rel_error),
            s.n_g.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn table_header() -> String {
    format!("{:<12} {:>10} {:>10} {:>10} {:>10}", "method", "N_g", "P_F", "rel.err", "CoV")
}

pub fn table_row(label: &str, s: &ExperimentSummary) -> String {
    format!(
        "{:<12} {:>10} {:>10} {:>10} {:>10}",
        label,
        sci(Some(s.n_g)),
        sci(Some(s.mean_estimate)),
        sci(s.rel_error),
        sci(s.delta)
    )
}

/// Reads a summary, rejecting files written under another schema version.
pub fn read_summary(path: &Path) -> Result<ExperimentSummary> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    match value.get("schema_version").and_then(|v| v.as_u64()) {
        Some(v) if v == SCHEMA_VERSION as u64 => {}
        Some(v) => bail!(
            "{}: schema version {v} does not match this build's version {SCHEMA_VERSION}",
            path.display()
        ),
        None => bail!("{}: no schema_version field", path.display()),
    }
    serde_json::from_value(value).with_context(|| format!("decoding {}", path.display()))
}

/// Orders summaries as in the comparison tables and labels each row with its
/// method, suffixing repeated methods.
pub fn table_rows(summaries: &[ExperimentSummary]) -> Vec<(String, &ExperimentSummary)> {
    let mut order: Vec<&ExperimentSummary> = summaries.iter().collect();
    order.sort_by_key(|s| s.method);
    let mut rows = Vec::with_capacity(order.len());
    let mut seen: std::collections::HashMap<_, usize> = Default::default();
    for s in order {
        let n = seen.entry(s.method).or_insert(0);
        *n += 1;
        let label = if *n == 1 {
            s.method.tag().to_string()
        } else {
            log::warn!("method '{}' appears more than once; labelling it '{}#{n}'", s.method, s.method);
            format!("{}#{n}", s.method)
        };
        rows.push((label, s));
    }
    rows
}
