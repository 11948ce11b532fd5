use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::optim::{Algorithm, HyperParams};
use crate::rng::InitializerKind;

use super::config::{resolve, set_dotted, RunConfig};
use super::train::{run_on, ExperimentRecord, Problem};

/// Runs every config on a pool of `workers` threads. Records come back in
/// input order whatever the completion order. Configs sharing a problem
/// load its dataset once.
pub fn run_all(configs: &[RunConfig], workers: usize) -> Result<Vec<ExperimentRecord>> {
    let mut problems: Vec<(super::config::ProblemSpec, bool, Problem)> = Vec::new();
    let mut which = Vec::with_capacity(configs.len());
    for c in configs {
        c.validate()?;
        let key = (&c.problem, c.smooth());
        let idx = match problems.iter().position(|(p, s, _)| (p, *s) == key) {
            Some(i) => i,
            None => {
                problems.push((c.problem.clone(), c.smooth(), Problem::load(c)?));
                problems.len() - 1
            }
        };
        which.push(idx);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid("workers", e.to_string()))?;
    pool.install(|| {
        configs
            .par_iter()
            .zip(which.par_iter())
            .map(|(c, &i)| run_on(c, &problems[i].2))
            .collect()
    })
}

/// Summary statistics over a set of runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultistartSummary {
    pub runs: usize,
    pub failed: usize,
    pub best_loss: f64,
    pub mean_loss: f64,
    /// Max minus min final loss.
    pub loss_spread: f64,
    pub best_accuracy: Option<f64>,
    pub mean_accuracy: Option<f64>,
}

impl MultistartSummary {
    /// Failed runs count at their initial loss.
    pub fn of(records: &[ExperimentRecord]) -> Self {
        let losses: Vec<f64> = records.iter().map(ExperimentRecord::profile_loss).collect();
        let best = losses.iter().copied().fold(f64::INFINITY, f64::min);
        let worst = losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let accs: Vec<f64> = records.iter().filter_map(|r| r.test_accuracy).collect();
        Self {
            runs: records.len(),
            failed: records.iter().filter(|r| r.failed()).count(),
            best_loss: best,
            mean_loss: losses.iter().sum::<f64>() / losses.len().max(1) as f64,
            loss_spread: worst - best,
            best_accuracy: accs.iter().copied().reduce(f64::max),
            mean_accuracy: (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64),
        }
    }
}

/// One config per `(seed, initializer)`, seeds outermost.
pub fn multistart_configs(
    template: &RunConfig,
    seeds: &[u64],
    initializers: &[InitializerKind],
) -> Result<Vec<RunConfig>> {
    if seeds.is_empty() {
        return Err(Error::invalid("seeds", "multistart needs at least one seed"));
    }
    if initializers.is_empty() {
        return Err(Error::invalid("initializers", "multistart needs at least one initializer"));
    }
    let mut seen = BTreeSet::new();
    for &s in seeds {
        if !seen.insert(s) {
            return Err(Error::DuplicateSeed(s));
        }
    }
    Ok(seeds
        .iter()
        .flat_map(|&seed| {
            initializers.iter().map(move |&initializer| RunConfig {
                seed,
                initializer,
                ..template.clone()
            })
        })
        .collect())
}

pub fn multistart(
    template: &RunConfig,
    seeds: &[u64],
    initializers: &[InitializerKind],
    workers: usize,
) -> Result<(Vec<ExperimentRecord>, MultistartSummary)> {
    let configs = multistart_configs(template, seeds, initializers)?;
    let records = run_all(&configs, workers)?;
    let summary = MultistartSummary::of(&records);
    Ok((records, summary))
}

/// Values for one hyperparameter, addressed by its config key (`eta`,
/// `beta1`, `amsgrad`, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub key: String,
    pub values: Vec<Value>,
}

impl GridAxis {
    pub fn new(key: &str, values: Vec<Value>) -> Self {
        Self {
            key: key.to_string(),
            values,
        }
    }
}

fn powers(exps: &[i32]) -> Vec<Value> {
    exps.iter().map(|&i| json!(10f64.powi(-i))).collect()
}

fn reals(xs: &[f64]) -> Vec<Value> {
    xs.iter().map(|&x| json!(x)).collect()
}

fn flags() -> Vec<Value> {
    vec![json!(false), json!(true)]
}

/// The published search ranges, with the boolean switches included.
pub fn preset_grid(algorithm: Algorithm) -> Result<Vec<GridAxis>> {
    let adam_like = |with_amsgrad: bool| {
        let mut axes = vec![
            GridAxis::new("eta", powers(&[2, 3, 4])),
            GridAxis::new("beta1", reals(&[0.6, 0.9, 0.99])),
            GridAxis::new("beta2", reals(&[0.99, 0.999, 0.9999])),
            GridAxis::new("epsilon", powers(&[6, 7, 8])),
        ];
        if with_amsgrad {
            axes.push(GridAxis::new("amsgrad", flags()));
        }
        axes
    };
    Ok(match algorithm {
        Algorithm::Adam => adam_like(true),
        Algorithm::Adamax | Algorithm::Nadam => adam_like(false),
        Algorithm::Rmsprop => vec![
            GridAxis::new("eta", powers(&[2, 3, 4])),
            GridAxis::new("beta", reals(&[0.0, 0.5, 0.9])),
            GridAxis::new("epsilon", powers(&[6, 7, 8])),
            GridAxis::new("rho", reals(&[0.6, 0.9, 0.99])),
            GridAxis::new("centered", flags()),
        ],
        Algorithm::Sgd => vec![
            GridAxis::new("eta", powers(&[1, 2, 3, 4])),
            GridAxis::new("beta", reals(&[0.0, 0.5, 0.9])),
            GridAxis::new("nesterov", flags()),
        ],
        other => {
            return Err(Error::invalid(
                "grid",
                format!("no preset grid for {other}; it was not tuned"),
            ))
        }
    })
}

/// Cartesian product, last axis fastest.
pub fn grid_points(axes: &[GridAxis]) -> Result<Vec<Vec<(String, Value)>>> {
    if let Some(a) = axes.iter().find(|a| a.values.is_empty()) {
        return Err(Error::EmptyGrid(a.key.clone()));
    }
    let mut points = vec![Vec::new()];
    for axis in axes {
        points = points
            .into_iter()
            .flat_map(|p: Vec<(String, Value)>| {
                axis.values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((axis.key.clone(), v.clone()));
                    q
                })
            })
            .collect();
    }
    Ok(points)
}

/// The template with each grid point applied under `optimizer.`.
pub fn grid_configs(template: &RunConfig, axes: &[GridAxis]) -> Result<Vec<RunConfig>> {
    let base = serde_json::to_value(template)?;
    grid_points(axes)?
        .into_iter()
        .map(|point| {
            let mut tree = base.clone();
            for (k, v) in point {
                set_dotted(&mut tree, &format!("optimizer.{k}"), v)?;
            }
            resolve(tree, &[])
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridResult {
    /// Index of the winner in `records`.
    pub best: usize,
    pub best_hyper: HyperParams,
    pub records: Vec<ExperimentRecord>,
}

/// Highest test accuracy, then lower final loss, then earliest.
pub fn select_winner(records: &[ExperimentRecord]) -> Option<usize> {
    let key = |r: &ExperimentRecord| (r.test_accuracy.unwrap_or(f64::NEG_INFINITY), r.profile_loss());
    let mut best: Option<usize> = None;
    for (i, r) in records.iter().enumerate() {
        let better = match best {
            None => true,
            Some(b) => {
                let (acc, loss) = key(r);
                let (best_acc, best_loss) = key(&records[b]);
                acc > best_acc || (acc == best_acc && loss < best_loss)
            }
        };
        if better {
            best = Some(i);
        }
    }
    best
}

pub fn grid_search(template: &RunConfig, axes: &[GridAxis], workers: usize) -> Result<GridResult> {
    let configs = grid_configs(template, axes)?;
    let records = run_all(&configs, workers)?;
    let best = select_winner(&records).ok_or_else(|| Error::EmptyGrid("grid".into()))?;
    Ok(GridResult {
        best,
        best_hyper: records[best].config.optimizer.hyper,
        records,
    })
}
