//! Limited-memory BFGS with a strong-Wolfe line search.

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::{dot, norm2};

use super::hyper::LbfgsSettings;
use super::state::OptimizerState;
use super::{Objective, StepReport};

/// `-H g` by the two-loop recursion over `history` (oldest first).
///
/// With no history `H = I`; otherwise the initial matrix is `γ I` with
/// `γ = sᵀy / yᵀy` from the newest pair.
pub fn two_loop<T: Real>(history: &std::collections::VecDeque<(Vec<T>, Vec<T>)>, g: &[T]) -> Vec<T> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y) in history.iter().rev() {
        let rho = T::one() / dot(y, s);
        let a = rho * dot(s, &q);
        for (qi, &yi) in q.iter_mut().zip(y) {
            *qi = *qi - a * yi;
        }
        alphas.push((rho, a));
    }
    if let Some((s, y)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|qi| *qi = *qi * gamma);
    }
    for ((s, y), (rho, a)) in history.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, &si) in q.iter_mut().zip(s) {
            *qi = *qi + (a - b) * si;
        }
    }
    q.iter_mut().for_each(|qi| *qi = -*qi);
    q
}

struct Probe<T> {
    alpha: T,
    f: T,
    dphi: T,
    x: Vec<T>,
    g: Vec<T>,
}

impl<T: Real> Probe<T> {
    fn finite(&self) -> bool {
        self.f.is_finite() && self.dphi.is_finite()
    }
}

struct Search<'a, T> {
    x0: &'a [T],
    f0: T,
    dphi0: T,
    d: &'a [T],
    settings: &'a LbfgsSettings,
    evals: usize,
}

impl<T: Real> Search<'_, T> {
    fn probe(&mut self, alpha: T, objective: &mut Objective<'_, T>) -> Result<Probe<T>> {
        let x: Vec<T> = self.x0.iter().zip(self.d).map(|(&xi, &di)| xi + alpha * di).collect();
        let (f, g) = objective(&x)?;
        self.evals += 1;
        if g.len() != x.len() {
            return Err(Error::LengthMismatch {
                expected: x.len(),
                actual: g.len(),
            });
        }
        let dphi = dot(&g, self.d);
        Ok(Probe { alpha, f, dphi, x, g })
    }

    fn armijo(&self, p: &Probe<T>) -> bool {
        p.finite() && p.f <= self.f0 + T::lit(self.settings.c1) * p.alpha * self.dphi0
    }

    fn curvature(&self, p: &Probe<T>) -> bool {
        p.dphi.abs() <= -T::lit(self.settings.c2) * self.dphi0
    }

    fn exhausted(&self) -> bool {
        self.evals >= self.settings.max_evals
    }

    /// Returns a point with sufficient decrease, and whether it also meets
    /// the curvature condition. `None` if no decrease was found.
    fn run(&mut self, objective: &mut Objective<'_, T>) -> Result<Option<(Probe<T>, bool)>> {
        let mut prev = Probe {
            alpha: T::zero(),
            f: self.f0,
            dphi: self.dphi0,
            x: self.x0.to_vec(),
            g: Vec::new(),
        };
        let mut alpha = T::one();
        let mut first = true;
        loop {
            let p = self.probe(alpha, objective)?;
            if !self.armijo(&p) || (!first && p.f >= prev.f) {
                return self.zoom(prev, p, objective);
            }
            if self.curvature(&p) {
                return Ok(Some((p, true)));
            }
            if p.dphi >= T::zero() {
                return self.zoom(p, prev, objective);
            }
            if self.exhausted() {
                return Ok(Some((p, false)));
            }
            alpha = alpha * T::lit(2.0);
            prev = p;
            first = false;
        }
    }

    fn zoom(
        &mut self,
        mut lo: Probe<T>,
        mut hi: Probe<T>,
        objective: &mut Objective<'_, T>,
    ) -> Result<Option<(Probe<T>, bool)>> {
        loop {
            if self.exhausted() || (hi.alpha - lo.alpha).abs() <= T::epsilon() * lo.alpha.abs().max(T::one()) {
                let found = lo.alpha > T::zero();
                return Ok(found.then_some((lo, false)));
            }
            let alpha = interpolate(&lo, &hi);
            let p = self.probe(alpha, objective)?;
            if !self.armijo(&p) || p.f >= lo.f {
                hi = p;
                continue;
            }
            if self.curvature(&p) {
                return Ok(Some((p, true)));
            }
            if p.dphi * (hi.alpha - lo.alpha) >= T::zero() {
                hi = std::mem::replace(&mut lo, p);
            } else {
                lo = p;
            }
        }
    }
}

/// Safeguarded cubic minimizer between two probes, falling back to bisection.
fn interpolate<T: Real>(a: &Probe<T>, b: &Probe<T>) -> T {
    let (lo, hi) = if a.alpha < b.alpha { (a.alpha, b.alpha) } else { (b.alpha, a.alpha) };
    let width = hi - lo;
    let guard = T::lit(0.1) * width;
    let mid = lo + T::lit(0.5) * width;
    if !(a.finite() && b.finite()) {
        return mid;
    }
    let three = T::lit(3.0);
    let d1 = a.dphi + b.dphi - three * (a.f - b.f) / (a.alpha - b.alpha);
    let disc = d1 * d1 - a.dphi * b.dphi;
    if disc < T::zero() {
        return mid;
    }
    let d2 = (b.alpha - a.alpha).signum() * disc.sqrt();
    let t = b.alpha - (b.alpha - a.alpha) * (b.dphi + d2 - d1) / (b.dphi - a.dphi + T::lit(2.0) * d2);
    if !t.is_finite() {
        return mid;
    }
    t.max(lo + guard).min(hi - guard)
}

pub(crate) fn step<T: Real>(
    x: &mut [T],
    objective: &mut Objective<'_, T>,
    state: &mut OptimizerState<T>,
    settings: &LbfgsSettings,
) -> Result<StepReport> {
    let mut evals = 0;
    let (f0, g0) = match state.cached.take() {
        Some((cx, f, g)) if cx.as_slice() == &*x => (f, g),
        _ => {
            let (f, g) = objective(x)?;
            evals += 1;
            (f, g)
        }
    };
    if g0.len() != x.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            actual: g0.len(),
        });
    }
    let k = state.step + 1;
    if !f0.is_finite() || g0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteGradient { step: k });
    }
    let grad_norm = norm2(&g0).as_f64();
    state.step = k;
    if grad_norm <= settings.grad_tol {
        state.cached = Some((x.to_vec(), f0, g0));
        return Ok(StepReport {
            loss: f0.as_f64(),
            new_loss: Some(f0.as_f64()),
            grad_norm,
            evaluations: evals,
            accepted: true,
            ..StepReport::default()
        });
    }

    let mut d = two_loop(&state.history, &g0);
    let mut reset = false;
    // negated so that a NaN slope also resets
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(dot(&g0, &d) < T::zero()) {
        state.history.clear();
        d = g0.iter().map(|&v| -v).collect();
        reset = true;
    }
    let found = loop {
        let dphi0 = dot(&g0, &d);
        let mut search = Search {
            x0: x,
            f0,
            dphi0,
            d: &d,
            settings,
            evals: 0,
        };
        let result = search.run(objective)?;
        evals += search.evals;
        match result {
            Some(found) => break found,
            None if !state.history.is_empty() => {
                state.history.clear();
                d = g0.iter().map(|&v| -v).collect();
                reset = true;
            }
            None => return Err(Error::LineSearchFailure { evaluations: evals }),
        }
    };
    let (probe, wolfe) = found;

    let s: Vec<T> = probe.x.iter().zip(x.iter()).map(|(&a, &b)| a - b).collect();
    let y: Vec<T> = probe.g.iter().zip(&g0).map(|(&a, &b)| a - b).collect();
    let curvature = dot(&y, &s);
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    let pair_rejected = !(curvature.as_f64() > settings.curvature_floor);
    if !pair_rejected {
        if state.history.len() == settings.history {
            state.history.pop_front();
        }
        state.history.push_back((s.clone(), y));
    }
    x.copy_from_slice(&probe.x);
    state.cached = Some((probe.x, probe.f, probe.g));
    Ok(StepReport {
        loss: f0.as_f64(),
        new_loss: Some(probe.f.as_f64()),
        update_norm: norm2(&s).as_f64(),
        grad_norm,
        evaluations: evals,
        accepted: true,
        step_size: Some(probe.alpha.as_f64()),
        wolfe,
        memory_reset: reset,
        pair_rejected,
    })
}

#[cfg(test)]
mod tests {
    use std::collections::VecDeque;

    use super::*;

    #[test]
    fn scalar_inverse_hessian() {
        // s = 0.5, y = 0.25 gives H = s/y = 2
        let mut h = VecDeque::new();
        h.push_back((vec![0.5f64], vec![0.25]));
        let d = two_loop(&h, &[1.0]);
        assert!((d[0] + 2.0).abs() < 1e-15);
    }

    #[test]
    fn empty_history_is_steepest_descent() {
        let d = two_loop(&VecDeque::<(Vec<f64>, Vec<f64>)>::new(), &[1.0, -2.0]);
        assert_eq!(d, vec![-1.0, 2.0]);
    }

    #[test]
    fn interpolation_stays_inside() {
        let a = Probe {
            alpha: 0.0,
            f: 1.0,
            dphi: -1.0,
            x: vec![],
            g: vec![],
        };
        let b = Probe {
            alpha: 1.0,
            f: 2.0,
            dphi: 3.0,
            x: vec![],
            g: vec![],
        };
        let t: f64 = interpolate(&a, &b);
        assert!((0.1..=0.9).contains(&t));
    }
}
