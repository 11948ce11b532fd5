use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::train::ExperimentRecord;

/// Relative tolerance when comparing initial losses of one problem.
const START_TOLERANCE: f64 = 1e-12;

/// What the profile needs from one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub problem: String,
    pub solver: String,
    pub initial_loss: f64,
    pub final_loss: f64,
}

impl From<&ExperimentRecord> for Outcome {
    /// Failed runs enter with their initial loss.
    fn from(r: &ExperimentRecord) -> Self {
        Self {
            problem: r.problem.clone(),
            solver: r.solver.clone(),
            initial_loss: r.initial_loss,
            final_loss: r.profile_loss(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileCurve {
    pub solver: String,
    /// `(tau, sigma)` pairs in grid order.
    pub points: Vec<(f64, f64)>,
}

impl ProfileCurve {
    pub fn sigma_at(&self, tau: f64) -> Option<f64> {
        self.points.iter().find(|(t, _)| *t == tau).map(|&(_, s)| s)
    }
}

/// `n` points spaced evenly in log scale over `[lo, hi]`, both ends exact.
pub fn log_tau_grid(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![hi],
        _ => {
            let (a, b) = (lo.log10(), hi.log10());
            (0..n)
                .map(|i| match i {
                    0 => lo,
                    i if i == n - 1 => hi,
                    i => 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64),
                })
                .collect()
        }
    }
}

/// 50 log-spaced points in `[1e-4, 1]`.
pub fn default_tau_grid() -> Vec<f64> {
    log_tau_grid(50, 1e-4, 1.0)
}

/// One problem's initial loss, best final loss, and per-solver finals.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemTable {
    pub problem: String,
    pub initial_loss: f64,
    pub best_loss: f64,
    pub finals: BTreeMap<String, f64>,
}

impl ProblemTable {
    /// `f0 - fL`, or 0 when every solver ended above the start.
    pub fn span(&self) -> f64 {
        (self.initial_loss - self.best_loss).max(0.0)
    }

    /// `f - fL <= tau (f0 - fL)`, written in differences so that an affine
    /// change of loss scale cancels exactly. When no solver improved on the
    /// start only the best ones count as solving.
    pub fn solved(&self, solver: &str, tau: f64) -> bool {
        self.finals
            .get(solver)
            .is_some_and(|f| f - self.best_loss <= tau * self.span())
    }

    /// Smallest `tau` at which `solver` counts as solved, `None` if never.
    pub fn threshold(&self, solver: &str) -> Option<f64> {
        let f = *self.finals.get(solver)?;
        let gap = f - self.best_loss;
        if gap <= 0.0 {
            return Some(0.0);
        }
        let span = self.span();
        (span > 0.0).then(|| gap / span)
    }
}

/// Groups outcomes into problems and checks that each problem has exactly
/// one outcome per solver and a single starting loss.
pub fn problem_tables(outcomes: &[Outcome]) -> Result<(Vec<String>, Vec<ProblemTable>)> {
    let solvers: BTreeSet<&str> = outcomes.iter().map(|o| o.solver.as_str()).collect();
    let mut by_problem: BTreeMap<&str, Vec<&Outcome>> = BTreeMap::new();
    for o in outcomes {
        by_problem.entry(&o.problem).or_default().push(o);
    }
    let mut tables = Vec::with_capacity(by_problem.len());
    for (problem, rows) in by_problem {
        let mut finals = BTreeMap::new();
        for o in &rows {
            if finals.insert(o.solver.clone(), o.final_loss).is_some() {
                return Err(Error::invalid(
                    "records",
                    format!("more than one record for problem `{problem}` and solver `{}`", o.solver),
                ));
            }
        }
        if let Some(s) = solvers.iter().find(|s| !finals.contains_key(**s)) {
            return Err(Error::MissingRecord {
                problem: problem.to_string(),
                solver: s.to_string(),
            });
        }
        let f0 = rows[0].initial_loss;
        if rows
            .iter()
            .any(|o| (o.initial_loss - f0).abs() > START_TOLERANCE * f0.abs().max(1.0))
        {
            return Err(Error::InconsistentStart {
                problem: problem.to_string(),
            });
        }
        let best_loss = finals.values().copied().fold(f64::INFINITY, f64::min);
        tables.push(ProblemTable {
            problem: problem.to_string(),
            initial_loss: f0,
            best_loss,
            finals,
        });
    }
    Ok((solvers.into_iter().map(String::from).collect(), tables))
}

/// Fraction of problems each solver solves at each `tau`. Curves come back
/// sorted by solver id.
pub fn success_rate_profile(outcomes: &[Outcome], taus: &[f64]) -> Result<Vec<ProfileCurve>> {
    let (solvers, tables) = problem_tables(outcomes)?;
    let count = tables.len().max(1) as f64;
    Ok(solvers
        .into_iter()
        .map(|solver| {
            let points = taus
                .iter()
                .map(|&tau| {
                    let solved = tables.iter().filter(|t| t.solved(&solver, tau)).count();
                    (tau, solved as f64 / count)
                })
                .collect();
            ProfileCurve { solver, points }
        })
        .collect())
}

/// Profile straight from experiment records.
pub fn profile_records(records: &[ExperimentRecord], taus: &[f64]) -> Result<Vec<ProfileCurve>> {
    let outcomes: Vec<Outcome> = records.iter().map(Outcome::from).collect();
    success_rate_profile(&outcomes, taus)
}

/// Per solver: `(problem, smallest solving tau)` in problem order.
pub type Thresholds = BTreeMap<String, Vec<(String, Option<f64>)>>;

pub fn thresholds(outcomes: &[Outcome]) -> Result<Thresholds> {
    let (solvers, tables) = problem_tables(outcomes)?;
    Ok(solvers
        .into_iter()
        .map(|s| {
            let row = tables.iter().map(|t| (t.problem.clone(), t.threshold(&s))).collect();
            (s, row)
        })
        .collect())
}
