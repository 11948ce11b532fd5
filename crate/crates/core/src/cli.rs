//! Command-line front end. [`run`] takes the argument list and two writers
//! and returns the process exit code, so it can be driven from tests.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use crate::bench::config::{parse_json, resolve, RunConfig, DEFAULT_SEED, PRESET_SEEDS};
use crate::bench::findings::{check_records, GOOD_SOLVERS, POOR_SOLVERS};
use crate::bench::output::{default_out_dir, read_records, ReportWriter};
use crate::bench::profile::{log_tau_grid, profile_records, thresholds, Outcome};
use crate::bench::protocol::{grid_search, multistart, preset_grid, GridAxis, MultistartSummary};
use crate::bench::train::{run_training, ExperimentRecord};
use crate::error::{Error, Result};
use crate::rng::InitializerKind;
use crate::verify::{gradient_suite, oracle_suite};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUN_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Largest scalar-oracle deviation `verify` accepts.
pub const ORACLE_TOLERANCE: f64 = 1e-12;
/// Largest gradient-check relative error `verify` accepts.
pub const GRADIENT_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Parser)]
#[command(
    name = "optbench",
    version,
    about = "Train small CNNs with nine optimizers and compare them",
    after_help = "Configs are JSON. Every field can be overridden with --set dotted.key=value, \
                  applied after the file is read; unknown keys are errors.\n\
                  Exit codes: 0 success, 1 run failure, 2 usage or config error.\n\
                  The output directory defaults to $OPTBENCH_OUT, else ./optbench-out."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// More output; repeat for per-epoch traces.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// JSON config file.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Override a config field, e.g. `--set optimizer.eta=0.01`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_override)]
    pub overrides: Vec<(String, String)>,
    /// Parallel runs.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Shorthand for `--set seed=N`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one configuration.
    Train(Common),
    /// Exhaustive search over hyperparameter axes; the preset axes unless the
    /// config gives `axes`.
    GridSearch(Common),
    /// One run per (seed, initializer).
    Multistart(Common),
    /// Success-rate performance profiles from saved records.
    Profiles {
        #[command(flatten)]
        common: Common,
        /// Directory holding the records (defaults to the output directory).
        #[arg(long)]
        records: Option<PathBuf>,
        /// Number of log-spaced tau values in [1e-4, 1].
        #[arg(long, default_value_t = 50)]
        points: usize,
    },
    /// Summaries and solver-ordering checks over saved records.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Optimizer oracles and gradient checks.
    Verify {
        /// Random scalar problems per optimizer.
        #[arg(long, default_value_t = 1000)]
        problems: usize,
        /// Random networks for the gradient check.
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
}

fn parse_override(raw: &str) -> std::result::Result<(String, String), String> {
    match raw.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.to_string())),
        _ => Err(format!("expected KEY=VALUE, got `{raw}`")),
    }
}

/// Sweep definition: a run template plus axes.
#[derive(Debug, Clone)]
pub struct GridSpec {
    pub run: RunConfig,
    pub axes: Vec<GridAxis>,
}

#[derive(Debug, Clone)]
pub struct MultistartSpec {
    pub run: RunConfig,
    pub seeds: Vec<u64>,
    pub initializers: Vec<InitializerKind>,
}

fn read_tree(path: Option<&Path>) -> Result<Value> {
    match path {
        Some(p) => parse_json(&fs::read_to_string(p)?),
        None => Ok(Value::Object(Default::default())),
    }
}

/// Splits `{"run": {...}, <extra keys>}` from a bare run config. Keys outside
/// `allowed` are rejected.
fn split_wrapper(tree: Value, allowed: &[&str]) -> Result<(Value, BTreeMap<String, Value>)> {
    match tree {
        Value::Object(mut map) if map.contains_key("run") => {
            let run = map.remove("run").expect("checked");
            let mut extra = BTreeMap::new();
            for (k, v) in map {
                if !allowed.contains(&k.as_str()) {
                    return Err(Error::UnknownKey(k));
                }
                extra.insert(k, v);
            }
            Ok((run, extra))
        }
        other => Ok((other, BTreeMap::new())),
    }
}

pub fn load_run_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
    resolve(read_tree(path)?, overrides)
}

/// A bare run config, or `{"run": ..., "axes": [{"key": "eta", "values": [...]}, ...]}`.
pub fn load_grid_spec(path: Option<&Path>, overrides: &[(String, String)]) -> Result<GridSpec> {
    let (run, mut extra) = split_wrapper(read_tree(path)?, &["axes"])?;
    let run = resolve(run, overrides)?;
    let axes = match extra.remove("axes") {
        Some(v) => serde_json::from_value(v).map_err(|e| Error::invalid("axes", e.to_string()))?,
        None => preset_grid(run.algorithm())?,
    };
    Ok(GridSpec { run, axes })
}

/// A bare run config, or `{"run": ..., "seeds": [...], "initializers": [...]}`.
/// Defaults: the twelve published seeds and both initializers.
pub fn load_multistart_spec(path: Option<&Path>, overrides: &[(String, String)]) -> Result<MultistartSpec> {
    let (run, mut extra) = split_wrapper(read_tree(path)?, &["seeds", "initializers"])?;
    let run = resolve(run, overrides)?;
    let seeds = match extra.remove("seeds") {
        Some(v) => serde_json::from_value(v).map_err(|e| Error::invalid("seeds", e.to_string()))?,
        None => PRESET_SEEDS.to_vec(),
    };
    let initializers = match extra.remove("initializers") {
        Some(v) => serde_json::from_value(v).map_err(|e| Error::invalid("initializers", e.to_string()))?,
        None => vec![InitializerKind::GlorotUniform, InitializerKind::LecunNormal],
    };
    Ok(MultistartSpec {
        run,
        seeds,
        initializers,
    })
}

fn overrides_of(c: &Common) -> Vec<(String, String)> {
    let mut o = c.overrides.clone();
    if let Some(s) = c.seed {
        o.push(("seed".into(), s.to_string()));
    }
    o
}

fn out_dir(c: &Common) -> PathBuf {
    c.out.clone().unwrap_or_else(default_out_dir)
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonFinite(_) | Error::NonFiniteGradient { .. } | Error::LineSearchFailure { .. } => EXIT_RUN_FAILURE,
        _ => EXIT_USAGE,
    }
}

fn trace_lines(out: &mut dyn Write, r: &ExperimentRecord) -> std::io::Result<()> {
    writeln!(out, "  epoch 0 loss {:.6}", r.initial_loss)?;
    for e in &r.trace {
        match e.test_accuracy {
            Some(a) => writeln!(out, "  epoch {} loss {:.6} acc {a:.4}", e.epoch, e.loss)?,
            None => writeln!(out, "  epoch {} loss {:.6}", e.epoch, e.loss)?,
        }
    }
    Ok(())
}

fn record_line(r: &ExperimentRecord) -> String {
    let acc = r.test_accuracy.map(|a| format!("{a:.4}")).unwrap_or_else(|| "-".into());
    let status = if r.failed() { " FAILED" } else { "" };
    format!(
        "{} {} {} seed={} init={} f0={:.6} final={:.6} acc={acc}{status}",
        r.hash, r.problem, r.solver, r.seed, r.initializer, r.initial_loss, r.final_loss
    )
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    match dispatch(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<i32> {
    let v = cli.verbose;
    match &cli.command {
        Command::Train(c) => {
            let Some(path) = &c.config else {
                return Err(Error::invalid("--config", "train needs a config file"));
            };
            let config = load_run_config(Some(path), &overrides_of(c))?;
            let record = run_training(&config)?;
            let writer = ReportWriter::new(out_dir(c))?;
            writer.write_records(std::slice::from_ref(&record))?;
            writeln!(out, "{}", record_line(&record))?;
            if v > 0 {
                trace_lines(out, &record)?;
            }
            Ok(if record.failed() { EXIT_RUN_FAILURE } else { EXIT_OK })
        }
        Command::GridSearch(c) => {
            let spec = load_grid_spec(c.config.as_deref(), &overrides_of(c))?;
            let result = grid_search(&spec.run, &spec.axes, c.workers)?;
            let writer = ReportWriter::new(out_dir(c))?;
            writer.write_records(&result.records)?;
            writer.write_json("grid.json", &grid_summary(&spec, &result), "grid search winner and axes")?;
            if v > 0 {
                for r in &result.records {
                    writeln!(out, "{}", record_line(r))?;
                }
            }
            let best = &result.records[result.best];
            writeln!(out, "{} runs, {} failed", result.records.len(), result.records.iter().filter(|r| r.failed()).count())?;
            writeln!(out, "best {}", record_line(best))?;
            writeln!(out, "best hyperparameters {}", serde_json::to_string(&result.best_hyper)?)?;
            Ok(EXIT_OK)
        }
        Command::Multistart(c) => {
            if c.seed.is_some() {
                return Err(Error::invalid("--seed", "multistart takes its seeds from the config"));
            }
            let spec = load_multistart_spec(c.config.as_deref(), &c.overrides)?;
            let (records, summary) = multistart(&spec.run, &spec.seeds, &spec.initializers, c.workers)?;
            let writer = ReportWriter::new(out_dir(c))?;
            writer.write_records(&records)?;
            writer.write_json("multistart.json", &summary, "multistart summary")?;
            for r in &records {
                writeln!(out, "{}", record_line(r))?;
                if v > 1 {
                    trace_lines(out, r)?;
                }
            }
            write_summary(out, &summary)?;
            Ok(EXIT_OK)
        }
        Command::Profiles { common, records, points } => {
            let dir = out_dir(common);
            let records = read_records(records.as_deref().unwrap_or(&dir))?;
            let taus = log_tau_grid(*points, 1e-4, 1.0);
            let curves = profile_records(&records, &taus)?;
            let writer = ReportWriter::new(&dir)?;
            let path = writer.write_profiles(&curves)?;
            let outcomes: Vec<Outcome> = records.iter().map(Outcome::from).collect();
            for (solver, row) in thresholds(&outcomes)? {
                let cells: Vec<String> = row
                    .iter()
                    .map(|(p, t)| format!("{p}={}", t.map(|t| format!("{t:.4}")).unwrap_or_else(|| "never".into())))
                    .collect();
                writeln!(out, "{solver}: {}", cells.join(" "))?;
            }
            writeln!(out, "wrote {}", path.display())?;
            Ok(EXIT_OK)
        }
        Command::Report { common, records } => {
            let dir = out_dir(common);
            let records = read_records(records.as_deref().unwrap_or(&dir))?;
            let text = report_text(&records);
            write!(out, "{text}")?;
            ReportWriter::new(&dir)?.write_report("report.txt", &text, "per-solver summaries and ordering checks")?;
            Ok(EXIT_OK)
        }
        Command::Verify { problems, instances, seed } => verify(out, *problems, *instances, *seed),
    }
}

fn grid_summary(spec: &GridSpec, result: &crate::bench::GridResult) -> Value {
    serde_json::json!({
        "axes": spec.axes,
        "runs": result.records.len(),
        "best_hash": result.records[result.best].hash,
        "best_hyper": result.best_hyper,
        "best_accuracy": result.records[result.best].test_accuracy,
        "best_final_loss": result.records[result.best].final_loss,
    })
}

fn write_summary(out: &mut dyn Write, s: &MultistartSummary) -> std::io::Result<()> {
    let acc = |a: Option<f64>| a.map(|a| format!("{a:.4}")).unwrap_or_else(|| "-".into());
    writeln!(
        out,
        "runs={} failed={} best_loss={:.6} mean_loss={:.6} spread={:.6} best_acc={} mean_acc={}",
        s.runs,
        s.failed,
        s.best_loss,
        s.mean_loss,
        s.loss_spread,
        acc(s.best_accuracy),
        acc(s.mean_accuracy)
    )
}

/// Per-(problem, solver) summaries, then the ordering checks for each problem
/// whose records cover all eight mini-batch solvers with one run each.
pub fn report_text(records: &[ExperimentRecord]) -> String {
    let mut groups: BTreeMap<(String, String), Vec<ExperimentRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.problem.clone(), r.solver.clone())).or_default().push(r.clone());
    }
    let mut text = String::new();
    let mut sink: Vec<u8> = Vec::new();
    for ((problem, solver), rs) in &groups {
        sink.clear();
        let _ = write_summary(&mut sink, &MultistartSummary::of(rs));
        text.push_str(&format!("{problem} {solver} {}", String::from_utf8_lossy(&sink)));
    }
    let mut by_problem: BTreeMap<&str, Vec<ExperimentRecord>> = BTreeMap::new();
    for ((problem, _), rs) in &groups {
        if rs.len() == 1 {
            by_problem.entry(problem).or_default().push(rs[0].clone());
        }
    }
    for (problem, rs) in by_problem {
        let covered = GOOD_SOLVERS.iter().chain(&POOR_SOLVERS).all(|s| rs.iter().any(|r| r.solver == *s));
        if covered {
            text.push_str(&format!("ordering checks for {problem}\n{}", check_records(&rs)));
        }
    }
    text
}

fn verify(out: &mut dyn Write, problems: usize, instances: usize, seed: u64) -> Result<i32> {
    let mut ok = true;
    for r in oracle_suite(problems, 3, seed)? {
        let pass = r.max_error <= ORACLE_TOLERANCE;
        ok &= pass;
        writeln!(
            out,
            "{} oracle {:<8} {} problems, max error {:.3e}",
            if pass { "PASS" } else { "FAIL" },
            r.algorithm.name(),
            r.problems,
            r.max_error
        )?;
    }
    let checks = gradient_suite(instances, seed)?;
    let worst = checks.iter().map(|c| c.relative_error).fold(0.0, f64::max);
    let pass = worst <= GRADIENT_TOLERANCE;
    ok &= pass;
    writeln!(
        out,
        "{} gradient check: {} networks, worst relative error {worst:.3e}",
        if pass { "PASS" } else { "FAIL" },
        checks.len()
    )?;
    Ok(if ok { EXIT_OK } else { EXIT_RUN_FAILURE })
}

