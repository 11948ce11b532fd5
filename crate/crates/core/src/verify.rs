//! Standalone scalar references for every optimizer and finite-difference
//! gradient checks for the network.
//!
//! The references restate each update rule on a single `f64` coordinate
//! without touching the optimizer module's internals, so agreement between
//! the two is evidence for both.

use serde::Serialize;

use crate::error::Result;
use crate::nn::{ArchitectureSpec, BaselineParams, Mode, NetState, Network};
use crate::optim::{AdadeltaForm, Algorithm, BiasCorrection, HyperParams, Optimizer};
use crate::rng::{InitializerKind, Rng};
use crate::tensor::{ParamSet, Tensor};

/// `f(w) = a/2 (w - c)^2` started from `w0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarProblem {
    pub a: f64,
    pub c: f64,
    pub w0: f64,
}

impl ScalarProblem {
    pub fn loss(&self, w: f64) -> f64 {
        0.5 * self.a * (w - self.c) * (w - self.c)
    }

    pub fn grad(&self, w: f64) -> f64 {
        self.a * (w - self.c)
    }
}

/// Iterates `w_1..=w_steps` of the scalar reference rule.
pub fn reference_trajectory(algorithm: Algorithm, hp: &HyperParams, p: &ScalarProblem, steps: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(steps);
    let mut w = p.w0;
    let mut prev = p.w0;
    // moment, second moment, max second moment, infinity norm, sums
    let (mut m, mut v, mut vmax, mut u) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let (mut g2sum, mut dacc, mut mg, mut vel) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let (mut z, mut n) = (0.0f64, 0.0f64);
    let mut lbfgs_ratio: Option<f64> = None;
    for k in 1..=steps {
        let kf = k as i32;
        let next = match algorithm {
            Algorithm::Sgd => {
                if hp.nesterov {
                    let zk = w + hp.beta * (w - prev);
                    zk - hp.learning_rate * p.grad(zk)
                } else {
                    w - hp.learning_rate * p.grad(w) + hp.beta * (w - prev)
                }
            }
            Algorithm::Adam | Algorithm::Nadam => {
                let from = if algorithm == Algorithm::Nadam {
                    w + hp.beta * (w - prev)
                } else {
                    w
                };
                let g = p.grad(from);
                m = hp.beta1 * m + (1.0 - hp.beta1) * g;
                v = hp.beta2 * v + (1.0 - hp.beta2) * g * g;
                vmax = vmax.max(v);
                let vh = if hp.amsgrad { vmax } else { v };
                let b1k = 1.0 - hp.beta1.powi(kf);
                let b2k = 1.0 - hp.beta2.powi(kf);
                let step = match hp.bias_correction {
                    BiasCorrection::Literal => hp.learning_rate * (b2k / b1k) * m / (hp.epsilon + vh).sqrt(),
                    BiasCorrection::Standard => hp.learning_rate * b2k.sqrt() / b1k * m / (vh.sqrt() + hp.epsilon),
                };
                from - step
            }
            Algorithm::Adamax => {
                let g = p.grad(w);
                m = hp.beta1 * m + (1.0 - hp.beta1) * g;
                u = (hp.beta2 * u).max(g.abs());
                if u == 0.0 {
                    w
                } else {
                    w - hp.learning_rate / (1.0 - hp.beta1.powi(kf)) * m / u
                }
            }
            Algorithm::Adagrad => {
                let g = p.grad(w);
                g2sum += g * g;
                w - hp.learning_rate * g / (hp.epsilon + g2sum).sqrt()
            }
            Algorithm::Rmsprop => {
                let g = p.grad(w);
                v = hp.rho * v + (1.0 - hp.rho) * g * g;
                let mut denom = hp.epsilon + v;
                if hp.centered {
                    mg = hp.rho * mg + (1.0 - hp.rho) * g;
                    denom -= mg * mg;
                }
                let step = hp.learning_rate * g / denom.sqrt();
                if hp.beta > 0.0 {
                    vel = hp.beta * vel + step;
                    w - vel
                } else {
                    w - step
                }
            }
            Algorithm::Adadelta => {
                let g = p.grad(w);
                v = hp.rho * v + (1.0 - hp.rho) * g * g;
                let precond = match hp.adadelta_form {
                    AdadeltaForm::RmsRatio => ((hp.epsilon + dacc) / (hp.epsilon + v)).sqrt(),
                    AdadeltaForm::StrictLiteral => (hp.epsilon + dacc).sqrt() / (hp.epsilon + v).sqrt().sqrt(),
                };
                let delta = -precond * g;
                dacc = hp.rho * dacc + (1.0 - hp.rho) * delta * delta;
                w + hp.learning_rate * delta
            }
            Algorithm::Ftrl => {
                let g = p.grad(w);
                let n_next = n + g * g;
                z += g - (n_next.sqrt() - n.sqrt()) / hp.learning_rate * w;
                n = n_next;
                if n == 0.0 {
                    w
                } else if z.abs() <= hp.lambda {
                    0.0
                } else {
                    let eta_k = hp.learning_rate / (hp.beta + n.sqrt());
                    -eta_k * (z - z.signum() * hp.lambda)
                }
            }
            Algorithm::Lbfgs => {
                // on a 1-D quadratic the inverse-Hessian estimate is the last secant ratio
                let g = p.grad(w);
                if g.abs() <= hp.lbfgs.grad_tol {
                    w
                } else {
                    let h = lbfgs_ratio.unwrap_or(1.0);
                    let next = w - h * g;
                    let (s, y) = (next - w, p.grad(next) - g);
                    if s * y > hp.lbfgs.curvature_floor {
                        lbfgs_ratio = Some(s / y);
                    }
                    next
                }
            }
        };
        prev = w;
        w = next;
        out.push(w);
    }
    out
}

/// Runs the real optimizer on the scalar problem.
pub fn optimizer_trajectory(algorithm: Algorithm, hp: &HyperParams, p: &ScalarProblem, steps: usize) -> Result<Vec<f64>> {
    let mut opt = Optimizer::<f64>::new(algorithm, *hp, 1)?;
    let mut w = [p.w0];
    let mut out = Vec::with_capacity(steps);
    let problem = *p;
    let mut objective = move |x: &[f64]| Ok((problem.loss(x[0]), vec![problem.grad(x[0])]));
    for _ in 0..steps {
        opt.step(&mut w, &mut objective)?;
        out.push(w[0]);
    }
    Ok(out)
}

fn log_uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    rng.uniform_range(lo.ln(), hi.ln()).exp()
}

/// Draws a random valid hyperparameter set and a scalar problem.
pub fn random_case(algorithm: Algorithm, rng: &mut Rng) -> (HyperParams, ScalarProblem) {
    let mut hp = HyperParams {
        learning_rate: log_uniform(rng, 1e-4, 0.5),
        beta: rng.uniform_range(0.0, 0.95),
        beta1: rng.uniform_range(0.0, 0.99),
        beta2: rng.uniform_range(0.9, 0.9999),
        epsilon: log_uniform(rng, 1e-8, 1e-3),
        rho: rng.uniform_range(0.5, 0.99),
        lambda: if rng.bernoulli(0.5) { 0.0 } else { rng.uniform_range(0.0, 0.5) },
        amsgrad: rng.bernoulli(0.5),
        nesterov: rng.bernoulli(0.5),
        centered: rng.bernoulli(0.5),
        bias_correction: if rng.bernoulli(0.5) {
            BiasCorrection::Literal
        } else {
            BiasCorrection::Standard
        },
        adadelta_form: if rng.bernoulli(0.5) {
            AdadeltaForm::RmsRatio
        } else {
            AdadeltaForm::StrictLiteral
        },
        ..HyperParams::default()
    };
    if algorithm == Algorithm::Lbfgs {
        hp = HyperParams::default();
    }
    let a = rng.uniform_range(0.2, 1.8);
    let c = rng.uniform_range(-2.0, 2.0);
    let mut w0 = rng.uniform_range(-2.0, 2.0);
    if (w0 - c).abs() < 0.1 {
        w0 = c + 0.1f64.copysign(w0 - c);
    }
    (hp, ScalarProblem { a, c, w0 })
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub algorithm: Algorithm,
    pub problems: usize,
    pub steps: usize,
    /// Largest `|w_opt - w_ref| / max(1, |w_ref|)` over all problems and steps.
    pub max_error: f64,
}

/// Compares each optimizer against its scalar reference on `problems`
/// random cases.
pub fn oracle_suite(problems: usize, steps: usize, seed: u64) -> Result<Vec<OracleReport>> {
    let mut reports = Vec::new();
    for (i, algorithm) in Algorithm::ALL.into_iter().enumerate() {
        let mut rng = Rng::with_stream(seed, i as u64);
        let mut max_error = 0.0f64;
        for _ in 0..problems {
            let (hp, p) = random_case(algorithm, &mut rng);
            let got = optimizer_trajectory(algorithm, &hp, &p, steps)?;
            let want = reference_trajectory(algorithm, &hp, &p, steps);
            for (g, w) in got.iter().zip(&want) {
                let err = (g - w).abs() / w.abs().max(1.0);
                max_error = if err.is_nan() { f64::INFINITY } else { max_error.max(err) };
            }
        }
        reports.push(OracleReport {
            algorithm,
            problems,
            steps,
            max_error,
        });
    }
    Ok(reports)
}

#[derive(Debug, Clone, Serialize)]
pub struct GradientCheck {
    pub params: usize,
    /// `‖analytic - numeric‖ / max(‖analytic‖, ‖numeric‖)`.
    pub relative_error: f64,
}

/// Small smooth network: SiLU, mean pooling, no dropout.
pub fn random_smooth_spec(rng: &mut Rng) -> ArchitectureSpec {
    let blocks = 1 + rng.below(2);
    let side = 6 + rng.below(5) + 4 * (blocks - 1);
    let mut spec = ArchitectureSpec::baseline(BaselineParams {
        input: [1 + rng.below(2), side, side],
        classes: 3 + rng.below(2),
        channels: (0..blocks).map(|_| 2 + rng.below(3)).collect(),
        fcb_units: 4 + rng.below(5),
        kernel: 2 + rng.below(2),
        stride: 1,
        pool: crate::nn::PoolMode::Mean,
        pool_size: 2,
        activation: crate::nn::Activation::Silu,
        dropout: 0.0,
    });
    spec.name = "gradcheck".into();
    spec
}

fn central_difference(
    net: &Network<f64>,
    params: &ParamSet<f64>,
    state: &NetState<f64>,
    x: &Tensor<f64>,
    y: &Tensor<f64>,
    mode: Mode,
    h: f64,
) -> Result<Vec<f64>> {
    let flat = params.flatten().into_data();
    let mut probe = params.clone();
    let mut out = Vec::with_capacity(flat.len());
    let mut rng = Rng::new(0);
    let mut shifted = flat.clone();
    for i in 0..flat.len() {
        shifted[i] = flat[i] + h;
        probe.assign_flat(&shifted)?;
        let up = net.loss(&probe, state, x, y, mode, &mut rng)?;
        shifted[i] = flat[i] - h;
        probe.assign_flat(&shifted)?;
        let down = net.loss(&probe, state, x, y, mode, &mut rng)?;
        shifted[i] = flat[i];
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// Analytic versus central-difference gradient on one random smooth network.
pub fn gradient_check(rng: &mut Rng, mode: Mode) -> Result<GradientCheck> {
    let spec = random_smooth_spec(rng);
    let net = Network::<f64>::new(&spec)?;
    let mut params = net.init_params(InitializerKind::GlorotUniform, rng)?;
    // perturb γ and β away from their identity initialization
    for e in params.iter_mut() {
        if e.name.ends_with("bn_gamma") || e.name.ends_with("bn_beta") {
            for v in e.tensor.data_mut() {
                *v += rng.uniform_range(-0.3, 0.3);
            }
        }
    }
    let mut state = net.fresh_state();
    for bn in state.batchnorm.iter_mut() {
        for m in bn.running_mean.iter_mut() {
            *m = rng.uniform_range(-0.5, 0.5);
        }
        for v in bn.running_var.iter_mut() {
            *v = rng.uniform_range(0.5, 2.0);
        }
    }
    let batch = 2 + rng.below(2);
    let [c, h, w] = spec.input;
    let x = Tensor::new(vec![batch, c, h, w], (0..batch * c * h * w).map(|_| rng.normal()).collect())?;
    let mut y = Tensor::zeros(&[batch, spec.classes]);
    for b in 0..batch {
        let class = rng.below(spec.classes);
        y.row_mut(b)[class] = 1.0;
    }
    let eval = net.loss_and_grad(&params, &state, &x, &y, mode, &mut Rng::new(0))?;
    let analytic = eval.grads.flatten().into_data();
    let numeric = central_difference(&net, &params, &state, &x, &y, mode, 1e-5)?;
    let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    Ok(GradientCheck {
        params: analytic.len(),
        relative_error: diff / na.max(nn).max(f64::MIN_POSITIVE),
    })
}

/// Runs `instances` eval-mode gradient checks.
pub fn gradient_suite(instances: usize, seed: u64) -> Result<Vec<GradientCheck>> {
    let mut rng = Rng::new(seed);
    (0..instances).map(|_| gradient_check(&mut rng, Mode::Eval)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_agrees_on_a_few_cases() {
        for r in oracle_suite(50, 3, 7).unwrap() {
            assert!(r.max_error <= 1e-12, "{:?}", r);
        }
    }

    #[test]
    fn lbfgs_reference_hits_minimum() {
        let p = ScalarProblem { a: 1.3, c: 0.4, w0: -1.0 };
        let t = reference_trajectory(Algorithm::Lbfgs, &HyperParams::default(), &p, 3);
        assert!((t[1] - 0.4).abs() < 1e-14);
    }

    #[test]
    fn gradient_checks_pass_in_both_modes() {
        let mut rng = Rng::new(3);
        for mode in [Mode::Eval, Mode::Train, Mode::Eval] {
            let r = gradient_check(&mut rng, mode).unwrap();
            assert!(r.params <= 5000, "{r:?}");
            assert!(r.relative_error <= 1e-5, "{r:?}");
        }
    }
}
