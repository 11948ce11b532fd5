//! Optimizers as state transitions over a flat parameter vector.
//!
//! Every stepper receives an objective that maps a point to `(loss, gradient)`.
//! Mini-batch methods call it once per step, at the current iterate or at the
//! extrapolated point for Nesterov variants; L-BFGS calls it as often as its
//! line search needs.

mod hyper;
pub mod lbfgs;
mod rules;
mod state;

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::norm2;

pub use hyper::{AdadeltaForm, Algorithm, BiasCorrection, HyperParams, LbfgsSettings, Preset};
pub use state::{OptimizerState, Slot};

/// Maps a point to its loss and gradient.
pub type Objective<'a, T> = dyn FnMut(&[T]) -> Result<(T, Vec<T>)> + 'a;

/// Diagnostics from one step.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StepReport {
    /// Loss reported by the first evaluation of the step.
    pub loss: f64,
    /// Loss at the new iterate, when the step knows it (L-BFGS).
    pub new_loss: Option<f64>,
    pub update_norm: f64,
    pub grad_norm: f64,
    pub evaluations: usize,
    pub accepted: bool,
    /// Line-search step length.
    pub step_size: Option<f64>,
    /// The accepted step met both strong-Wolfe conditions.
    pub wolfe: bool,
    /// The quasi-Newton memory was discarded during this step.
    pub memory_reset: bool,
    /// The new curvature pair failed the `yᵀs` floor and was not stored.
    pub pair_rejected: bool,
}

/// An algorithm bound to its hyperparameters and state.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    algorithm: Algorithm,
    hp: HyperParams,
    state: OptimizerState<T>,
}

/// Builds an optimizer for `dim` parameters.
pub fn make_optimizer<T: Real>(name: &str, hp: HyperParams, dim: usize) -> Result<Optimizer<T>> {
    Optimizer::new(Algorithm::parse(name)?, hp, dim)
}

/// Builds an optimizer from a named preset.
pub fn make_preset<T: Real>(name: &str, preset: &str, dim: usize) -> Result<Optimizer<T>> {
    let algorithm = Algorithm::parse(name)?;
    Optimizer::new(algorithm, HyperParams::preset(algorithm, Preset::parse(preset)?), dim)
}

impl<T: Real> Optimizer<T> {
    pub fn new(algorithm: Algorithm, hp: HyperParams, dim: usize) -> Result<Self> {
        hp.validate()?;
        Ok(Self {
            algorithm,
            hp,
            state: OptimizerState::new(algorithm, dim),
        })
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn hyper_params(&self) -> &HyperParams {
        &self.hp
    }

    pub fn state(&self) -> &OptimizerState<T> {
        &self.state
    }

    /// Replaces the state, e.g. after loading a checkpoint.
    pub fn set_state(&mut self, state: OptimizerState<T>) -> Result<()> {
        if state.algorithm() != self.algorithm || state.dim() != self.state.dim() {
            return Err(Error::Checkpoint(format!(
                "state for {} with {} parameters does not fit {} with {}",
                state.algorithm(),
                state.dim(),
                self.algorithm,
                self.state.dim()
            )));
        }
        self.state = state;
        Ok(())
    }

    /// Advances `params` by one step.
    pub fn step(&mut self, params: &mut [T], objective: &mut Objective<'_, T>) -> Result<StepReport> {
        if params.len() != self.state.dim() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.state.dim()],
                actual: vec![params.len()],
            });
        }
        if self.algorithm == Algorithm::Lbfgs {
            return lbfgs::step(params, objective, &mut self.state, &self.hp.lbfgs);
        }
        let query = rules::query_point(params, &self.state, self.algorithm, &self.hp);
        let (loss, grad) = objective(query.as_deref().unwrap_or(params))?;
        self.apply_gradient(params, &grad, query.as_deref(), loss)
    }

    /// Steps with a gradient already evaluated at `w`.
    ///
    /// Nesterov variants with history need the gradient at the extrapolated
    /// point, so they must go through [`Optimizer::step`].
    pub fn step_with_gradient(&mut self, params: &mut [T], grad: &[T]) -> Result<StepReport> {
        if self.algorithm == Algorithm::Lbfgs
            || rules::query_point(params, &self.state, self.algorithm, &self.hp).is_some()
        {
            return Err(Error::InvalidHyperParams(format!(
                "{} at step {} needs an objective, not a fixed gradient",
                self.algorithm,
                self.state.step + 1
            )));
        }
        if params.len() != self.state.dim() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.state.dim()],
                actual: vec![params.len()],
            });
        }
        self.apply_gradient(params, grad, None, T::nan())
    }

    fn apply_gradient(&mut self, params: &mut [T], grad: &[T], query: Option<&[T]>, loss: T) -> Result<StepReport> {
        if grad.len() != params.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![params.len()],
                actual: vec![grad.len()],
            });
        }
        let k = self.state.step + 1;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { step: k });
        }
        let before = params.to_vec();
        rules::apply(self.algorithm, params, grad, query, &mut self.state, &self.hp);
        self.state.step = k;
        let update: Vec<T> = params.iter().zip(&before).map(|(&a, &b)| a - b).collect();
        Ok(StepReport {
            loss: loss.as_f64(),
            update_norm: norm2(&update).as_f64(),
            grad_norm: norm2(grad).as_f64(),
            evaluations: 1,
            accepted: true,
            ..StepReport::default()
        })
    }

    pub fn save_state(&self, path: &Path) -> Result<()> {
        crate::nn::checkpoint::save(&self.state.to_params(), path)
    }

    pub fn load_state(&mut self, path: &Path) -> Result<()> {
        let params = crate::nn::checkpoint::load::<T>(path)?;
        self.set_state(OptimizerState::from_params(&params)?)
    }
}
