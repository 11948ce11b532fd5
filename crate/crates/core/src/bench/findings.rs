use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::profile::Outcome;
use super::train::ExperimentRecord;

pub const GOOD_SOLVERS: [&str; 5] = ["adam", "adamax", "nadam", "rmsprop", "sgd"];
pub const POOR_SOLVERS: [&str; 3] = ["adadelta", "adagrad", "ftrl"];
/// The solver expected to make the least progress.
pub const SLOWEST_SOLVER: &str = "ftrl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub name: String,
    pub verdict: Verdict,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FindingsReport {
    pub assertions: Vec<Assertion>,
    /// Expected solvers with no record.
    pub missing: Vec<String>,
    /// Problems seen; more than one means the comparison is not meaningful.
    pub problems: Vec<String>,
}

impl FindingsReport {
    /// Every assertion ran and passed.
    pub fn all_passed(&self) -> bool {
        self.missing.is_empty() && self.problems.len() <= 1 && self.assertions.iter().all(|a| a.verdict == Verdict::Pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Assertion> {
        self.assertions.iter().filter(|a| a.verdict == Verdict::Fail)
    }
}

impl fmt::Display for FindingsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.problems.len() > 1 {
            writeln!(f, "FLAG records span {} problems: {}", self.problems.len(), self.problems.join(", "))?;
        }
        for m in &self.missing {
            writeln!(f, "FLAG no record for {m}")?;
        }
        for a in &self.assertions {
            let tag = match a.verdict {
                Verdict::Pass => "PASS",
                Verdict::Fail => "FAIL",
                Verdict::Skipped => "SKIP",
            };
            writeln!(f, "{tag} {}: {}", a.name, a.detail)?;
        }
        Ok(())
    }
}

fn relative_decrease(o: &Outcome) -> f64 {
    (o.initial_loss - o.final_loss) / o.initial_loss
}

/// Checks that every good solver ends strictly below every poor one and that
/// FTRL has the smallest relative decrease. Ties fail. Checks involving an
/// absent solver are skipped and the solver is listed in `missing`.
pub fn qualitative_findings_check(outcomes: &[Outcome]) -> FindingsReport {
    let problems: BTreeSet<String> = outcomes.iter().map(|o| o.problem.clone()).collect();
    let by_solver: BTreeMap<&str, &Outcome> = outcomes.iter().map(|o| (o.solver.as_str(), o)).collect();
    let missing: Vec<String> = GOOD_SOLVERS
        .iter()
        .chain(&POOR_SOLVERS)
        .filter(|s| !by_solver.contains_key(**s))
        .map(|s| s.to_string())
        .collect();

    let mut assertions = Vec::new();
    for good in GOOD_SOLVERS {
        for poor in POOR_SOLVERS {
            let name = format!("{good} below {poor}");
            let a = match (by_solver.get(good), by_solver.get(poor)) {
                (Some(g), Some(p)) => Assertion {
                    name,
                    verdict: if g.final_loss < p.final_loss { Verdict::Pass } else { Verdict::Fail },
                    detail: format!("{:.6} vs {:.6}", g.final_loss, p.final_loss),
                },
                _ => Assertion {
                    name,
                    verdict: Verdict::Skipped,
                    detail: "solver missing".into(),
                },
            };
            assertions.push(a);
        }
    }

    let name = format!("{SLOWEST_SOLVER} smallest relative decrease");
    assertions.push(match by_solver.get(SLOWEST_SOLVER) {
        None => Assertion {
            name,
            verdict: Verdict::Skipped,
            detail: "solver missing".into(),
        },
        Some(slow) => {
            let mine = relative_decrease(slow);
            let beaten: Vec<String> = by_solver
                .iter()
                .filter(|(s, _)| **s != SLOWEST_SOLVER)
                .filter(|(_, o)| relative_decrease(o) <= mine)
                .map(|(s, o)| format!("{s} {:.4}", relative_decrease(o)))
                .collect();
            Assertion {
                name,
                verdict: if beaten.is_empty() { Verdict::Pass } else { Verdict::Fail },
                detail: if beaten.is_empty() {
                    format!("{mine:.4}")
                } else {
                    format!("{mine:.4}, not above: {}", beaten.join(", "))
                },
            }
        }
    });

    FindingsReport {
        assertions,
        missing,
        problems: problems.into_iter().collect(),
    }
}

pub fn check_records(records: &[ExperimentRecord]) -> FindingsReport {
    let outcomes: Vec<Outcome> = records.iter().map(Outcome::from).collect();
    qualitative_findings_check(&outcomes)
}
