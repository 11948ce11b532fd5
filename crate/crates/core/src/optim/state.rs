use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::{ParamSet, Tensor};

use super::hyper::Algorithm;

/// Per-coordinate buffers, allocated on first use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    /// First moment.
    M,
    /// Second moment.
    V,
    /// Running max of `v` (AMSGrad).
    VMax,
    /// Infinity-norm accumulator (Adamax).
    U,
    /// Sum of squared gradients (Adagrad).
    Accum,
    /// Squared-update average (Adadelta).
    DeltaAccum,
    /// Mean gradient (centered RMSProp).
    MeanGrad,
    /// Momentum velocity (RMSProp).
    Velocity,
    /// FTRL linear term.
    Z,
    /// FTRL squared-gradient sum.
    N,
    /// Previous iterate, for momentum and extrapolation.
    Prev,
}

impl Slot {
    pub const ALL: [Slot; 11] = [
        Slot::M,
        Slot::V,
        Slot::VMax,
        Slot::U,
        Slot::Accum,
        Slot::DeltaAccum,
        Slot::MeanGrad,
        Slot::Velocity,
        Slot::Z,
        Slot::N,
        Slot::Prev,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Slot::M => "m",
            Slot::V => "v",
            Slot::VMax => "v_max",
            Slot::U => "u",
            Slot::Accum => "accum",
            Slot::DeltaAccum => "delta_accum",
            Slot::MeanGrad => "mean_grad",
            Slot::Velocity => "velocity",
            Slot::Z => "z",
            Slot::N => "n",
            Slot::Prev => "prev",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Optimizer memory for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    algorithm: Algorithm,
    dim: usize,
    /// Completed steps.
    pub step: u64,
    slots: [Option<Vec<T>>; 11],
    /// L-BFGS curvature pairs, oldest first.
    pub history: VecDeque<(Vec<T>, Vec<T>)>,
    /// Last L-BFGS evaluation: the point, its loss and its gradient.
    pub(crate) cached: Option<(Vec<T>, T, Vec<T>)>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(algorithm: Algorithm, dim: usize) -> Self {
        Self {
            algorithm,
            dim,
            step: 0,
            slots: Default::default(),
            history: VecDeque::new(),
            cached: None,
        }
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn slot(&self, slot: Slot) -> Option<&[T]> {
        self.slots[slot.index()].as_deref()
    }

    /// Returns the slot buffer, allocating it with zeros on first access.
    pub(crate) fn slot_mut(&mut self, slot: Slot) -> &mut Vec<T> {
        let dim = self.dim;
        self.slots[slot.index()].get_or_insert_with(|| vec![T::zero(); dim])
    }

    pub(crate) fn take_slot(&mut self, slot: Slot) -> Vec<T> {
        let dim = self.dim;
        self.slots[slot.index()].take().unwrap_or_else(|| vec![T::zero(); dim])
    }

    pub(crate) fn put_slot(&mut self, slot: Slot, data: Vec<T>) {
        self.slots[slot.index()] = Some(data);
    }

    pub(crate) fn has_slot(&self, slot: Slot) -> bool {
        self.slots[slot.index()].is_some()
    }

    pub fn allocated(&self) -> Vec<Slot> {
        Slot::ALL.iter().copied().filter(|s| self.has_slot(*s)).collect()
    }

    /// Serializes the state as named tensors for the checkpoint container.
    pub fn to_params(&self) -> ParamSet<T> {
        let mut out = ParamSet::new();
        out.push("algorithm", Tensor::scalar(T::lit(algorithm_code(self.algorithm) as f64)));
        out.push("step", Tensor::scalar(T::lit(self.step as f64)));
        out.push("dim", Tensor::scalar(T::lit(self.dim as f64)));
        for slot in Slot::ALL {
            if let Some(data) = self.slot(slot) {
                out.push(slot.name(), Tensor::from_vec(data.to_vec()));
            }
        }
        for (i, (s, y)) in self.history.iter().enumerate() {
            out.push(format!("lbfgs.s.{i}"), Tensor::from_vec(s.clone()));
            out.push(format!("lbfgs.y.{i}"), Tensor::from_vec(y.clone()));
        }
        out
    }

    pub fn from_params(params: &ParamSet<T>) -> Result<Self> {
        let scalar = |name: &str| -> Result<f64> {
            let t = params
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("optimizer state lacks `{name}`")))?;
            match t.data() {
                [x] => Ok(x.as_f64()),
                _ => Err(Error::Checkpoint(format!("`{name}` is not a scalar"))),
            }
        };
        let code = scalar("algorithm")? as usize;
        let algorithm = *Algorithm::ALL
            .get(code)
            .ok_or_else(|| Error::Checkpoint(format!("unknown algorithm code {code}")))?;
        let mut state = Self::new(algorithm, scalar("dim")? as usize);
        state.step = scalar("step")? as u64;
        for slot in Slot::ALL {
            if let Some(t) = params.get(slot.name()) {
                if t.len() != state.dim {
                    return Err(Error::Checkpoint(format!("slot `{}` has length {}", slot.name(), t.len())));
                }
                state.put_slot(slot, t.data().to_vec());
            }
        }
        let mut i = 0;
        while let (Some(s), Some(y)) = (params.get(&format!("lbfgs.s.{i}")), params.get(&format!("lbfgs.y.{i}"))) {
            state.history.push_back((s.data().to_vec(), y.data().to_vec()));
            i += 1;
        }
        Ok(state)
    }
}

fn algorithm_code(a: Algorithm) -> usize {
    Algorithm::ALL.iter().position(|x| *x == a).expect("listed")
}
