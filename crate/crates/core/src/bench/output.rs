use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

use super::profile::ProfileCurve;
use super::train::{ExperimentRecord, RunStatus};

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "OPTBENCH_OUT";
pub const DEFAULT_OUT_DIR: &str = "optbench-out";

pub const INDEX_FILE: &str = "index.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PROFILES_FILE: &str = "profiles.csv";
pub const RUNS_DIR: &str = "runs";

/// Columns of the run index, in order.
pub const INDEX_COLUMNS: [&str; 11] = [
    "run_hash",
    "problem",
    "solver",
    "preset",
    "seed",
    "initializer",
    "status",
    "initial_loss",
    "final_loss",
    "accuracy",
    "seconds",
];

/// `$OPTBENCH_OUT` if set and nonempty, else `optbench-out`.
pub fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub record: String,
    pub problem: String,
    pub solver: String,
    pub seed: u64,
    pub config: Value,
}

/// Ties every file in the output directory to the config that produced it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub runs: BTreeMap<String, ManifestEntry>,
    /// Report file name to a short description.
    pub reports: BTreeMap<String, String>,
}

/// Writes run records and reports under one directory. File contents depend
/// only on the records, so replays produce identical bytes.
pub struct ReportWriter {
    dir: PathBuf,
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn pretty<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn index_row(r: &ExperimentRecord) -> String {
    let status = match &r.status {
        RunStatus::Completed => "completed",
        RunStatus::Failed { .. } => "failed",
    };
    [
        csv_field(&r.hash),
        csv_field(&r.problem),
        csv_field(&r.solver),
        csv_field(&r.preset),
        r.seed.to_string(),
        csv_field(&r.initializer),
        status.to_string(),
        r.initial_loss.to_string(),
        r.final_loss.to_string(),
        opt(r.test_accuracy),
        opt(r.seconds),
    ]
    .join(",")
}

impl ReportWriter {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(dir.join(RUNS_DIR))?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn record_path(&self, hash: &str) -> PathBuf {
        self.dir.join(RUNS_DIR).join(format!("{hash}.json"))
    }

    pub fn manifest(&self) -> Result<Manifest> {
        let path = self.dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Manifest::default());
        }
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    fn save_manifest(&self, m: &Manifest) -> Result<()> {
        fs::write(self.dir.join(MANIFEST_FILE), pretty(m)?)?;
        Ok(())
    }

    fn indexed_hashes(&self) -> Result<Vec<String>> {
        let path = self.dir.join(INDEX_FILE);
        if !path.exists() {
            return Ok(Vec::new());
        }
        Ok(fs::read_to_string(path)?
            .lines()
            .skip(1)
            .filter_map(|l| l.split(',').next().map(str::to_string))
            .collect())
    }

    /// Writes `runs/<hash>.json`, appends an index row unless the hash is
    /// already indexed, and updates the manifest.
    pub fn write_records(&self, records: &[ExperimentRecord]) -> Result<Vec<PathBuf>> {
        let mut seen = self.indexed_hashes()?;
        let index_path = self.dir.join(INDEX_FILE);
        let fresh = !index_path.exists();
        let mut index = fs::OpenOptions::new().create(true).append(true).open(&index_path)?;
        if fresh {
            writeln!(index, "{}", INDEX_COLUMNS.join(","))?;
        }
        let mut manifest = self.manifest()?;
        let mut paths = Vec::with_capacity(records.len());
        for r in records {
            let path = self.record_path(&r.hash);
            fs::write(&path, pretty(r)?)?;
            if !seen.contains(&r.hash) {
                writeln!(index, "{}", index_row(r))?;
                seen.push(r.hash.clone());
            }
            manifest.runs.insert(
                r.hash.clone(),
                ManifestEntry {
                    record: format!("{RUNS_DIR}/{}.json", r.hash),
                    problem: r.problem.clone(),
                    solver: r.solver.clone(),
                    seed: r.seed,
                    config: serde_json::to_value(&r.config)?,
                },
            );
            paths.push(path);
        }
        self.save_manifest(&manifest)?;
        Ok(paths)
    }

    /// `solver,tau,sigma` rows, solvers in curve order.
    pub fn write_profiles(&self, curves: &[ProfileCurve]) -> Result<PathBuf> {
        let mut out = String::from("solver,tau,sigma\n");
        for c in curves {
            for (tau, sigma) in &c.points {
                out.push_str(&format!("{},{tau},{sigma}\n", csv_field(&c.solver)));
            }
        }
        self.write_report(PROFILES_FILE, &out, "success-rate profile (solver,tau,sigma)")
    }

    /// Writes a JSON summary and lists it in the manifest.
    pub fn write_json<T: Serialize>(&self, name: &str, value: &T, description: &str) -> Result<PathBuf> {
        self.write_report(name, &pretty(value)?, description)
    }

    pub fn write_report(&self, name: &str, contents: &str, description: &str) -> Result<PathBuf> {
        if name.contains(['/', '\\']) || name == MANIFEST_FILE || name == INDEX_FILE {
            return Err(Error::invalid("report", format!("reserved or nested file name `{name}`")));
        }
        let path = self.dir.join(name);
        fs::write(&path, contents)?;
        let mut m = self.manifest()?;
        m.reports.insert(name.to_string(), description.to_string());
        self.save_manifest(&m)?;
        Ok(path)
    }
}

/// Reads every `*.json` record in `dir/runs`, or in `dir` itself when it has
/// no `runs` subdirectory, sorted by file name.
pub fn read_records(dir: &Path) -> Result<Vec<ExperimentRecord>> {
    let runs = dir.join(RUNS_DIR);
    let source = if runs.is_dir() { runs } else { dir.to_path_buf() };
    let mut paths: Vec<PathBuf> = fs::read_dir(&source)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| Ok(serde_json::from_str(&fs::read_to_string(p)?)?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_quoting() {
        assert_eq!(csv_field("plain"), "plain");
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("say \"x\""), "\"say \"\"x\"\"\"");
    }

    #[test]
    fn reserved_report_names() {
        let dir = tempfile::tempdir().unwrap();
        let w = ReportWriter::new(dir.path()).unwrap();
        assert!(w.write_report("manifest.json", "{}", "").is_err());
        assert!(w.write_report("../x", "", "").is_err());
        w.write_report("summary.txt", "ok\n", "note").unwrap();
        assert_eq!(w.manifest().unwrap().reports["summary.txt"], "note");
    }
}
