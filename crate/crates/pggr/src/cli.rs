//! Command-line front end. Exit codes: 0 success, 1 run failure, 2 usage or configuration error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::ExperimentConfig;
use crate::harness::{Harness, SweepParam};
use crate::output;

#[derive(Parser, Debug)]
#[command(name = "pggr", version, about = "Rare-event estimation experiments with surrogate-assisted importance sampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Repeated runs of one method on one problem.
    Run(RunArgs),
    /// Repeated runs for each value of β or m_add.
    Sweep(SweepArgs),
    /// Merge summary files into one comparison table.
    Table(TableArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Experiment file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Base seed; overrides `experiment.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory; overrides `experiment.out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `section.key=value`, repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Param {
    Beta,
    MAdd,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_enum)]
    param: Param,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
    values: Vec<f64>,
}

#[derive(Args, Debug)]
struct TableArgs {
    /// `summary.json` files.
    #[arg(required = true, num_args = 1..)]
    summaries: Vec<PathBuf>,
    /// CSV output path.
    #[arg(long, default_value = "table.csv")]
    out: PathBuf,
}

enum Failure {
    Usage(anyhow::Error),
    Run(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Run(e.into())
    }
}

/// Parses `args` (program name first) and executes the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let outcome = match cli.command {
        Command::Run(a) => cmd_run(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Table(a) => cmd_table(&a),
    };
    match outcome {
        Ok(()) => 0,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            2
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn load(a: &RunArgs) -> Result<(ExperimentConfig, PathBuf), Failure> {
    let mut cfg = ExperimentConfig::load(&a.config, &a.overrides).map_err(|e| Failure::Usage(e.into()))?;
    if let Some(seed) = a.seed {
        cfg.experiment.seed = seed;
        cfg.run_spec().validate().map_err(|e| Failure::Usage(e.into()))?;
    }
    let out = a
        .out
        .clone()
        .or_else(|| cfg.experiment.out.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(format!("{}_{}", cfg.problem.name(), cfg.experiment.method)));
    Ok((cfg, out))
}

fn harness(jobs: Option<usize>) -> Result<Harness, Failure> {
    Harness::new(jobs).map_err(|e| Failure::Usage(e.into()))
}

fn cmd_run(a: &RunArgs) -> Result<(), Failure> {
    let (cfg, out) = load(a)?;
    let harness = harness(a.jobs)?;
    let spec = cfg.run_spec();
    log::info!(
        "{} on {}: {} runs from seed {} with {} workers",
        spec.method,
        spec.problem.name(),
        spec.n_rep,
        spec.base_seed,
        harness.workers()
    );
    let exp = harness.repeat_runs(&spec)?;
    output::write_experiment(&out, &exp)?;
    println!("{}", output::table_header());
    println!("{}", output::table_row(spec.method.tag(), &exp.summary));
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn cmd_sweep(a: &SweepArgs) -> Result<(), Failure> {
    let (cfg, out) = load(&a.run)?;
    let harness = harness(a.run.jobs)?;
    let param = match a.param {
        Param::Beta => SweepParam::Beta,
        Param::MAdd => SweepParam::MAdd,
    };
    let exps = harness.sweep(&cfg.run_spec(), param, &a.values)?;
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    println!("{:<8} {}", param.tag(), output::table_header());
    for (i, (v, e)) in a.values.iter().zip(&exps).enumerate() {
        output::write_experiment(&out.join(format!("point_{i:02}")), e)?;
        println!("{:<8} {}", v, output::table_row(cfg.experiment.method.tag(), &e.summary));
    }
    output::write_sweep_csv(&out.join("sweep.csv"), param, &a.values, &exps)?;
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn cmd_table(a: &TableArgs) -> Result<(), Failure> {
    let summaries = a
        .summaries
        .iter()
        .map(|p| output::read_summary(p))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let rows = output::table_rows(&summaries);
    let problems: std::collections::BTreeSet<&str> = summaries.iter().map(|s| s.problem.as_str()).collect();
    if problems.len() > 1 {
        log::warn!("summaries cover several problems: {problems:?}");
    }
    println!("{}", output::table_header());
    for (label, s) in &rows {
        println!("{}", output::table_row(label, s));
    }
    write_parent(&a.out)?;
    output::write_table_csv(&a.out, &rows)?;
    Ok(())
}

fn write_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}
