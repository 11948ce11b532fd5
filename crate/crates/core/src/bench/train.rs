use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::batch::batch_indices;
use crate::data::{augment_batch, BatchPlan, Dataset};
use crate::error::{Error, Result};
use crate::nn::{ArchitectureSpec, BatchStats, Mode, NetState, Network};
use crate::optim::{Algorithm, Optimizer};
use crate::rng::Rng;
use crate::tensor::ParamSet;

use super::config::RunConfig;

/// Samples per chunk when a quantity is averaged over the training set.
const FULL_BATCH_CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state")]
pub enum RunStatus {
    Completed,
    /// The run stopped early; the trace holds the completed epochs.
    Failed { epoch: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean mini-batch loss, or the full-batch loss after an L-BFGS iteration.
    pub loss: f64,
    pub test_accuracy: Option<f64>,
}

/// Outcome of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub hash: String,
    pub problem: String,
    pub solver: String,
    pub preset: String,
    pub seed: u64,
    pub initializer: String,
    /// Training-set loss at the initial point, before any update.
    pub initial_loss: f64,
    pub trace: Vec<EpochLog>,
    /// Last logged loss, or the initial loss when nothing was logged.
    pub final_loss: f64,
    pub test_accuracy: Option<f64>,
    pub status: RunStatus,
    pub seconds: Option<f64>,
    pub config: RunConfig,
}

impl ExperimentRecord {
    pub fn failed(&self) -> bool {
        matches!(self.status, RunStatus::Failed { .. })
    }

    pub fn losses(&self) -> Vec<f64> {
        self.trace.iter().map(|e| e.loss).collect()
    }

    /// First epoch (1-based) whose loss is at most `target`.
    pub fn epochs_to_reach(&self, target: f64) -> Option<usize> {
        self.trace.iter().find(|e| e.loss <= target).map(|e| e.epoch)
    }

    /// Loss used when ranking solvers: failed runs count as no progress.
    pub fn profile_loss(&self) -> f64 {
        if self.failed() {
            self.initial_loss
        } else {
            self.final_loss
        }
    }

    /// `(f0 - f) / f0`.
    pub fn relative_decrease(&self) -> f64 {
        (self.initial_loss - self.profile_loss()) / self.initial_loss
    }
}

/// Everything a run needs besides the optimizer.
pub struct Problem {
    pub spec: ArchitectureSpec,
    pub net: Network<f64>,
    pub train: Dataset,
    pub test: Dataset,
}

impl Problem {
    pub fn load(config: &RunConfig) -> Result<Self> {
        let (train, test) = config.problem.dataset.load()?;
        Self::with_data(config, train, test)
    }

    pub fn with_data(config: &RunConfig, train: Dataset, test: Dataset) -> Result<Self> {
        let spec = config
            .problem
            .architecture
            .build(train.image_shape(), train.classes(), config.smooth())?;
        let net = Network::new(&spec)?;
        Ok(Self { spec, net, train, test })
    }
}

fn chunks(n: usize) -> Vec<Vec<usize>> {
    (0..n)
        .collect::<Vec<_>>()
        .chunks(FULL_BATCH_CHUNK)
        .map(<[usize]>::to_vec)
        .collect()
}

/// Train-mode loss over the training set with dropout off, averaged over
/// chunks of at most 1024 samples (exact full-batch for smaller sets).
pub fn training_set_loss(net: &Network<f64>, params: &ParamSet<f64>, state: &NetState<f64>, ds: &Dataset) -> Result<f64> {
    let mut total = 0.0;
    let mut rng = Rng::new(0);
    for rows in chunks(ds.len()) {
        let x = ds.images.select_rows(&rows);
        let y = ds.labels.select_rows(&rows);
        total += net.loss(params, state, &x, &y, Mode::Train, &mut rng)? * rows.len() as f64;
    }
    Ok(total / ds.len() as f64)
}

fn without_dropout(spec: &ArchitectureSpec) -> Result<Network<f64>> {
    let mut s = spec.clone();
    s.layers.iter_mut().for_each(|l| l.dropout = 0.0);
    Network::new(&s)
}

fn is_numeric_failure(e: &Error) -> bool {
    matches!(e, Error::NonFinite(_) | Error::NonFiniteGradient { .. })
}

/// Trains per the config and returns the record. Numeric blow-ups end the
/// run with a `Failed` status and keep the partial trace; other errors
/// propagate.
pub fn run_training(config: &RunConfig) -> Result<ExperimentRecord> {
    let problem = Problem::load(config)?;
    run_on(config, &problem)
}

/// Like [`run_training`] with the problem already built.
pub fn run_on(config: &RunConfig, problem: &Problem) -> Result<ExperimentRecord> {
    config.validate()?;
    let start = Instant::now();
    let net = &problem.net;
    let mut init_rng = Rng::with_stream(config.seed, 1);
    let params = net.init_params(config.initializer, &mut init_rng)?;
    let mut state = net.fresh_state();
    let plain = without_dropout(&problem.spec)?;
    let initial_loss = training_set_loss(&plain, &params, &state, &problem.train)?;

    let mut record = ExperimentRecord {
        hash: config.hash(),
        problem: config.problem.id(),
        solver: config.solver_id(),
        preset: config.optimizer.preset.name().to_string(),
        seed: config.seed,
        initializer: config.initializer.tag().to_string(),
        initial_loss,
        trace: Vec::new(),
        final_loss: initial_loss,
        test_accuracy: None,
        status: RunStatus::Completed,
        seconds: None,
        config: config.clone(),
    };

    let mut flat = params.flatten().into_data();
    let template = params;
    let mut opt = Optimizer::<f64>::new(config.algorithm(), config.optimizer.hyper, flat.len())?;
    let epochs = config.epochs();
    for epoch in 1..=epochs {
        let step = if config.algorithm() == Algorithm::Lbfgs {
            lbfgs_iteration(&mut opt, &mut flat, &template, problem, &state)
        } else {
            minibatch_epoch(config, epoch, &mut opt, &mut flat, &template, problem, &mut state)
        };
        let loss = match step {
            Ok(loss) if loss.is_finite() => loss,
            Ok(loss) => {
                record.status = RunStatus::Failed {
                    epoch,
                    reason: format!("loss became {loss}"),
                };
                break;
            }
            Err(e) if is_numeric_failure(&e) || matches!(e, Error::LineSearchFailure { .. }) => {
                record.status = RunStatus::Failed {
                    epoch,
                    reason: e.to_string(),
                };
                break;
            }
            Err(e) => return Err(e),
        };
        let params = ParamSet::unflatten(&flat, &template)?;
        if config.algorithm() == Algorithm::Lbfgs {
            overwrite_full_batch_stats(net, &params, &mut state, &problem.train)?;
        }
        let test_accuracy = if config.eval_every > 0 && epoch % config.eval_every == 0 {
            Some(net.evaluate_accuracy(&params, &state, &problem.test.images, &problem.test.labels)?)
        } else {
            None
        };
        record.trace.push(EpochLog {
            epoch,
            loss,
            test_accuracy,
        });
        record.final_loss = loss;
    }
    if !record.failed() {
        let params = ParamSet::unflatten(&flat, &template)?;
        record.test_accuracy = Some(net.evaluate_accuracy(&params, &state, &problem.test.images, &problem.test.labels)?);
    }
    if config.timing {
        record.seconds = Some(start.elapsed().as_secs_f64());
    }
    Ok(record)
}

fn minibatch_epoch(
    config: &RunConfig,
    epoch: usize,
    opt: &mut Optimizer<f64>,
    flat: &mut [f64],
    template: &ParamSet<f64>,
    problem: &Problem,
    state: &mut NetState<f64>,
) -> Result<f64> {
    let train = &problem.train;
    let plan = BatchPlan {
        batch_size: config.batch_size.min(train.len()),
        seed: config.seed,
        drop_last: false,
    };
    let groups = batch_indices(train.len(), &plan, epoch as u64)?;
    let epoch_rng = Rng::with_stream(config.seed, 2).split(epoch as u64);
    let mut total = 0.0;
    for (b, rows) in groups.iter().enumerate() {
        let mut images = train.images.select_rows(rows);
        let labels = train.labels.select_rows(rows);
        let mut batch_rng = epoch_rng.split(b as u64);
        if !config.augmentation.is_identity() {
            images = augment_batch(&images, &config.augmentation, &mut batch_rng)?;
        }
        let mut stats: Option<Vec<BatchStats<f64>>> = None;
        let mut dropout_rng = batch_rng.split(0xd209);
        let report = {
            let state_ref = &*state;
            let mut objective = |w: &[f64]| -> Result<(f64, Vec<f64>)> {
                let p = ParamSet::unflatten(w, template)?;
                let e = problem
                    .net
                    .loss_and_grad(&p, state_ref, &images, &labels, Mode::Train, &mut dropout_rng)?;
                stats = Some(e.batch_stats);
                Ok((e.loss, e.grads.flatten().into_data()))
            };
            opt.step(flat, &mut objective)?
        };
        if let Some(s) = stats {
            state.commit(&s);
        }
        total += report.loss;
    }
    Ok(total / groups.len() as f64)
}

fn lbfgs_iteration(
    opt: &mut Optimizer<f64>,
    flat: &mut [f64],
    template: &ParamSet<f64>,
    problem: &Problem,
    state: &NetState<f64>,
) -> Result<f64> {
    let x = &problem.train.images;
    let y = &problem.train.labels;
    let mut objective = |w: &[f64]| -> Result<(f64, Vec<f64>)> {
        let p = ParamSet::unflatten(w, template)?;
        match problem.net.loss_and_grad(&p, state, x, y, Mode::Train, &mut Rng::new(0)) {
            Ok(e) => Ok((e.loss, e.grads.flatten().into_data())),
            // overshooting trial points are rejected by the line search
            Err(e) if is_numeric_failure(&e) => Ok((f64::INFINITY, vec![f64::NAN; w.len()])),
            Err(e) => Err(e),
        }
    };
    let report = opt.step(flat, &mut objective)?;
    Ok(report.new_loss.unwrap_or(report.loss))
}

/// Sets the running statistics to the training set's own batch statistics.
fn overwrite_full_batch_stats(
    net: &Network<f64>,
    params: &ParamSet<f64>,
    state: &mut NetState<f64>,
    ds: &Dataset,
) -> Result<()> {
    let pass = net.forward(params, state, &ds.images, Mode::Train, &mut Rng::new(0))?;
    state.overwrite(&pass.batch_stats());
    Ok(())
}

