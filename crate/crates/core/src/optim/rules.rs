//! First-order update rules over flat parameter vectors.
//!
//! Each rule receives the gradient already evaluated at the point returned
//! by [`query_point`], advances the state slots it owns, and writes the new
//! iterate into `w`. The step counter is advanced by the caller.

use crate::scalar::Real;

use super::hyper::{AdadeltaForm, Algorithm, BiasCorrection, HyperParams};
use super::state::{OptimizerState, Slot};

/// Extrapolation weight for algorithms that evaluate the gradient away from `w`.
fn extrapolation(algorithm: Algorithm, hp: &HyperParams) -> Option<f64> {
    match algorithm {
        Algorithm::Sgd if hp.nesterov => Some(hp.beta),
        Algorithm::Nadam => Some(hp.beta),
        _ => None,
    }
}

/// `z = w + β (w - w_prev)`, or `None` when the gradient is taken at `w`.
pub(crate) fn query_point<T: Real>(
    w: &[T],
    state: &OptimizerState<T>,
    algorithm: Algorithm,
    hp: &HyperParams,
) -> Option<Vec<T>> {
    let beta = T::lit(extrapolation(algorithm, hp)?);
    let prev = state.slot(Slot::Prev)?;
    if beta == T::zero() {
        return None;
    }
    Some(w.iter().zip(prev).map(|(&wi, &pi)| wi + beta * (wi - pi)).collect())
}

pub(crate) fn apply<T: Real>(
    algorithm: Algorithm,
    w: &mut [T],
    g: &[T],
    query: Option<&[T]>,
    state: &mut OptimizerState<T>,
    hp: &HyperParams,
) {
    let k = state.step + 1;
    match algorithm {
        Algorithm::Sgd => sgd(w, g, query, state, hp),
        Algorithm::Adam => {
            adam(w, g, state, hp, k);
        }
        Algorithm::Adamax => adamax(w, g, state, hp, k),
        Algorithm::Nadam => nadam(w, g, query, state, hp, k),
        Algorithm::Adagrad => adagrad(w, g, state, hp),
        Algorithm::Rmsprop => rmsprop(w, g, state, hp),
        Algorithm::Adadelta => adadelta(w, g, state, hp),
        Algorithm::Ftrl => ftrl(w, g, state, hp),
        Algorithm::Lbfgs => unreachable!("L-BFGS has its own driver"),
    }
}

fn sgd<T: Real>(w: &mut [T], g: &[T], query: Option<&[T]>, state: &mut OptimizerState<T>, hp: &HyperParams) {
    let eta = T::lit(hp.learning_rate);
    let beta = T::lit(hp.beta);
    if hp.beta == 0.0 {
        for (wi, &gi) in w.iter_mut().zip(g) {
            *wi = *wi - eta * gi;
        }
        return;
    }
    let first = !state.has_slot(Slot::Prev);
    let prev = state.slot_mut(Slot::Prev);
    if first {
        prev.copy_from_slice(w);
    }
    if hp.nesterov {
        for i in 0..w.len() {
            let z = query.map_or(w[i], |q| q[i]);
            prev[i] = w[i];
            w[i] = z - eta * g[i];
        }
    } else {
        for i in 0..w.len() {
            let wi = w[i];
            w[i] = wi - eta * g[i] + beta * (wi - prev[i]);
            prev[i] = wi;
        }
    }
}

/// Advances `m` and `v` and moves `w` by the Adam step.
fn adam<T: Real>(w: &mut [T], g: &[T], state: &mut OptimizerState<T>, hp: &HyperParams, k: u64) {
    let (b1, b2) = (T::lit(hp.beta1), T::lit(hp.beta2));
    let eps = T::lit(hp.epsilon);
    let one = T::one();
    let c1 = one - T::lit(hp.beta1.powi(k as i32));
    let c2 = one - T::lit(hp.beta2.powi(k as i32));
    let eta = T::lit(hp.learning_rate);
    let mut m = state.take_slot(Slot::M);
    let mut v = state.take_slot(Slot::V);
    let mut v_max = hp.amsgrad.then(|| state.take_slot(Slot::VMax));
    for i in 0..w.len() {
        m[i] = b1 * m[i] + (one - b1) * g[i];
        v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
        let vi = match v_max.as_mut() {
            Some(vm) => {
                vm[i] = vm[i].max(v[i]);
                vm[i]
            }
            None => v[i],
        };
        let step = match hp.bias_correction {
            BiasCorrection::Literal => eta * c2 / c1 * m[i] / (eps + vi).sqrt(),
            BiasCorrection::Standard => eta * c2.sqrt() / c1 * m[i] / (vi.sqrt() + eps),
        };
        w[i] = w[i] - step;
    }
    state.put_slot(Slot::M, m);
    state.put_slot(Slot::V, v);
    if let Some(vm) = v_max {
        state.put_slot(Slot::VMax, vm);
    }
}

fn adamax<T: Real>(w: &mut [T], g: &[T], state: &mut OptimizerState<T>, hp: &HyperParams, k: u64) {
    let (b1, b2) = (T::lit(hp.beta1), T::lit(hp.beta2));
    let one = T::one();
    let scale = T::lit(hp.learning_rate) / (one - T::lit(hp.beta1.powi(k as i32)));
    let mut m = state.take_slot(Slot::M);
    let mut u = state.take_slot(Slot::U);
    for i in 0..w.len() {
        m[i] = b1 * m[i] + (one - b1) * g[i];
        u[i] = (b2 * u[i]).max(g[i].abs());
        // u = 0 only when every gradient so far was 0, and then m = 0 too
        if u[i] > T::zero() {
            w[i] = w[i] - scale * m[i] / u[i];
        }
    }
    state.put_slot(Slot::M, m);
    state.put_slot(Slot::U, u);
}

fn nadam<T: Real>(
    w: &mut [T],
    g: &[T],
    query: Option<&[T]>,
    state: &mut OptimizerState<T>,
    hp: &HyperParams,
    k: u64,
) {
    if hp.beta == 0.0 {
        adam(w, g, state, hp, k);
        return;
    }
    let prev = w.to_vec();
    if let Some(z) = query {
        w.copy_from_slice(z);
    }
    adam(w, g, state, hp, k);
    state.put_slot(Slot::Prev, prev);
}

fn adagrad<T: Real>(w: &mut [T], g: &[T], state: &mut OptimizerState<T>, hp: &HyperParams) {
    let eta = T::lit(hp.learning_rate);
    let eps = T::lit(hp.epsilon);
    let acc = state.slot_mut(Slot::Accum);
    for i in 0..w.len() {
        acc[i] = acc[i] + g[i] * g[i];
        w[i] = w[i] - eta * g[i] / (eps + acc[i]).sqrt();
    }
}

fn rmsprop<T: Real>(w: &mut [T], g: &[T], state: &mut OptimizerState<T>, hp: &HyperParams) {
    let eta = T::lit(hp.learning_rate);
    let eps = T::lit(hp.epsilon);
    let rho = T::lit(hp.rho);
    let beta = T::lit(hp.beta);
    let one = T::one();
    let mut v = state.take_slot(Slot::V);
    let mut mg = hp.centered.then(|| state.take_slot(Slot::MeanGrad));
    let mut vel = (hp.beta > 0.0).then(|| state.take_slot(Slot::Velocity));
    for i in 0..w.len() {
        v[i] = rho * v[i] + (one - rho) * g[i] * g[i];
        let mut denom = eps + v[i];
        if let Some(mg) = mg.as_mut() {
            mg[i] = rho * mg[i] + (one - rho) * g[i];
            denom = denom - mg[i] * mg[i];
        }
        let step = eta * g[i] / denom.sqrt();
        match vel.as_mut() {
            Some(vel) => {
                vel[i] = beta * vel[i] + step;
                w[i] = w[i] - vel[i];
            }
            None => w[i] = w[i] - step,
        }
    }
    state.put_slot(Slot::V, v);
    if let Some(mg) = mg {
        state.put_slot(Slot::MeanGrad, mg);
    }
    if let Some(vel) = vel {
        state.put_slot(Slot::Velocity, vel);
    }
}

/// The accumulator tracks the unscaled step `Δ`; `η` scales only the move,
/// so `η = 1` is the bare rule.
fn adadelta<T: Real>(w: &mut [T], g: &[T], state: &mut OptimizerState<T>, hp: &HyperParams) {
    let eta = T::lit(hp.learning_rate);
    let eps = T::lit(hp.epsilon);
    let rho = T::lit(hp.rho);
    let one = T::one();
    let quarter = T::lit(-0.25);
    let mut v = state.take_slot(Slot::V);
    let mut d = state.take_slot(Slot::DeltaAccum);
    for i in 0..w.len() {
        v[i] = rho * v[i] + (one - rho) * g[i] * g[i];
        let scale = match hp.adadelta_form {
            AdadeltaForm::RmsRatio => (eps + d[i]).sqrt() / (eps + v[i]).sqrt(),
            AdadeltaForm::StrictLiteral => (eps + d[i]).sqrt() * (eps + v[i]).powf(quarter),
        };
        let delta = -scale * g[i];
        d[i] = rho * d[i] + (one - rho) * delta * delta;
        w[i] = w[i] + eta * delta;
    }
    state.put_slot(Slot::V, v);
    state.put_slot(Slot::DeltaAccum, d);
}

/// Per-coordinate FTRL-proximal with `1/η_k = (β + sqrt(n_k)) / η`.
///
/// Coordinates whose squared-gradient sum is still zero have seen no
/// information and keep their value.
fn ftrl<T: Real>(w: &mut [T], g: &[T], state: &mut OptimizerState<T>, hp: &HyperParams) {
    let eta = T::lit(hp.learning_rate);
    let beta = T::lit(hp.beta);
    let lambda = T::lit(hp.lambda);
    let mut z = state.take_slot(Slot::Z);
    let mut n = state.take_slot(Slot::N);
    for i in 0..w.len() {
        let n_new = n[i] + g[i] * g[i];
        let sigma = (n_new.sqrt() - n[i].sqrt()) / eta;
        z[i] = z[i] + g[i] - sigma * w[i];
        n[i] = n_new;
        if n_new == T::zero() {
            continue;
        }
        w[i] = if z[i].abs() <= lambda {
            T::zero()
        } else {
            -(z[i] - z[i].signum() * lambda) * eta / (beta + n_new.sqrt())
        };
    }
    state.put_slot(Slot::Z, z);
    state.put_slot(Slot::N, n);
}
