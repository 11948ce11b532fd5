//! Per-channel batch normalization with learnable scale and shift.

use crate::error::{Error, Result};
use crate::nn::ops::Mode;
use crate::scalar::Real;
use crate::tensor::Tensor;

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.99;

/// Running statistics for one normalization layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<T> {
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub eps: f64,
}

impl<T: Real> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: BN_MOMENTUM,
            eps: BN_EPSILON,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    /// Folds one batch's statistics into the running averages.
    pub fn commit(&mut self, stats: &BatchStats<T>) {
        let m = T::lit(self.momentum);
        let one_m = T::one() - m;
        for (r, &b) in self.running_mean.iter_mut().zip(&stats.mean) {
            *r = m * *r + one_m * b;
        }
        for (r, &b) in self.running_var.iter_mut().zip(&stats.var) {
            *r = m * *r + one_m * b;
        }
    }

    /// Replaces the running statistics outright (used after full-batch training).
    pub fn overwrite(&mut self, stats: &BatchStats<T>) {
        self.running_mean.clone_from(&stats.mean);
        self.running_var.clone_from(&stats.var);
    }
}

/// Biased per-channel mean and variance of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    pub x_hat: Vec<T>,
    pub inv_std: Vec<T>,
    pub mode: Mode,
    /// Present in train mode.
    pub stats: Option<BatchStats<T>>,
}

fn layout(shape: &[usize], channels: usize) -> Result<(usize, usize)> {
    if shape.len() < 2 || shape[1] != channels {
        return Err(Error::ShapeMismatch {
            expected: vec![0, channels],
            actual: shape.to_vec(),
        });
    }
    Ok((shape[0], shape[2..].iter().product()))
}

/// Normalizes `(B, C, ...)` without touching the running statistics.
pub fn batchnorm_forward<T: Real>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    state: &BatchNormState<T>,
    mode: Mode,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let channels = state.channels();
    let (batch, spatial) = layout(x.shape(), channels)?;
    if gamma.len() != channels || beta.len() != channels {
        return Err(Error::LengthMismatch {
            expected: channels,
            actual: gamma.len().min(beta.len()),
        });
    }
    let eps = T::lit(state.eps);
    let xd = x.data();
    let (mean, var, stats) = match mode {
        Mode::Train => {
            if batch < 2 {
                return Err(Error::DegenerateBatch(batch));
            }
            let count = T::lit((batch * spatial) as f64);
            let mut mean = vec![T::zero(); channels];
            let mut var = vec![T::zero(); channels];
            for b in 0..batch {
                for (c, m) in mean.iter_mut().enumerate() {
                    let off = (b * channels + c) * spatial;
                    *m = *m + xd[off..off + spatial].iter().copied().sum::<T>();
                }
            }
            mean.iter_mut().for_each(|m| *m = *m / count);
            for b in 0..batch {
                for (c, v) in var.iter_mut().enumerate() {
                    let off = (b * channels + c) * spatial;
                    let mu = mean[c];
                    *v = *v
                        + xd[off..off + spatial]
                            .iter()
                            .map(|&e| (e - mu) * (e - mu))
                            .sum::<T>();
                }
            }
            var.iter_mut().for_each(|v| *v = *v / count);
            let stats = BatchStats {
                mean: mean.clone(),
                var: var.clone(),
            };
            (mean, var, Some(stats))
        }
        Mode::Eval => (state.running_mean.clone(), state.running_var.clone(), None),
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut x_hat = vec![T::zero(); xd.len()];
    let mut y = vec![T::zero(); xd.len()];
    for b in 0..batch {
        for c in 0..channels {
            let off = (b * channels + c) * spatial;
            let (mu, is, g, bt) = (mean[c], inv_std[c], gamma[c], beta[c]);
            for k in off..off + spatial {
                let h = (xd[k] - mu) * is;
                x_hat[k] = h;
                y[k] = g * h + bt;
            }
        }
    }
    let out = Tensor::new(x.shape().to_vec(), y)?;
    Ok((
        out,
        BatchNormCache {
            x_hat,
            inv_std,
            mode,
            stats,
        },
    ))
}

/// Normalizes and, in train mode, updates the running statistics.
pub fn batchnorm<T: Real>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    state: &mut BatchNormState<T>,
    mode: Mode,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let (y, cache) = batchnorm_forward(x, gamma, beta, state, mode)?;
    if let Some(stats) = &cache.stats {
        state.commit(stats);
    }
    Ok((y, cache))
}

pub struct BatchNormGrads<T> {
    pub x: Tensor<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

pub fn batchnorm_backward<T: Real>(
    grad_out: &Tensor<T>,
    gamma: &[T],
    cache: &BatchNormCache<T>,
) -> Result<BatchNormGrads<T>> {
    let channels = gamma.len();
    let (batch, spatial) = layout(grad_out.shape(), channels)?;
    let gd = grad_out.data();
    let mut d_gamma = vec![T::zero(); channels];
    let mut d_beta = vec![T::zero(); channels];
    for b in 0..batch {
        for c in 0..channels {
            let off = (b * channels + c) * spatial;
            let span = off..off + spatial;
            for (&g, &xh) in gd[span.clone()].iter().zip(&cache.x_hat[span]) {
                d_beta[c] = d_beta[c] + g;
                d_gamma[c] = d_gamma[c] + g * xh;
            }
        }
    }
    let mut dx = vec![T::zero(); gd.len()];
    match cache.mode {
        Mode::Eval => {
            for b in 0..batch {
                for (c, (&g, &inv)) in gamma.iter().zip(&cache.inv_std).enumerate() {
                    let off = (b * channels + c) * spatial;
                    let scale = g * inv;
                    for (d, &up) in dx[off..off + spatial].iter_mut().zip(&gd[off..off + spatial]) {
                        *d = scale * up;
                    }
                }
            }
        }
        Mode::Train => {
            let count = T::lit((batch * spatial) as f64);
            for b in 0..batch {
                for c in 0..channels {
                    let off = (b * channels + c) * spatial;
                    let scale = gamma[c] * cache.inv_std[c];
                    let mean_dy = d_beta[c] / count;
                    let mean_dy_xhat = d_gamma[c] / count;
                    for k in off..off + spatial {
                        dx[k] = scale * (gd[k] - mean_dy - cache.x_hat[k] * mean_dy_xhat);
                    }
                }
            }
        }
    }
    Ok(BatchNormGrads {
        x: Tensor::new(grad_out.shape().to_vec(), dx)?,
        gamma: d_gamma,
        beta: d_beta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = Rng::new(seed);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| 3.0 * rng.normal() + 1.5).collect()).unwrap()
    }

    #[test]
    fn standardized_batch_is_near_fixed_point() {
        let x = Tensor::new(vec![4, 1], vec![-1.0, 1.0, -1.0, 1.0]).unwrap();
        let mut st = BatchNormState::new(1);
        let (y, _) = batchnorm(&x, &[1.0], &[0.0], &mut st, Mode::Train).unwrap();
        let factor = 1.0 / (1.0f64 + BN_EPSILON).sqrt();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b * factor).abs() < 1e-15);
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn constant_channel_collapses_to_shift() {
        let x = Tensor::full(&[3, 2, 2, 2], 4.2f64);
        let mut st = BatchNormState::new(2);
        let (y, _) = batchnorm(&x, &[1.0, 2.0], &[0.3, -0.7], &mut st, Mode::Train).unwrap();
        for b in 0..3 {
            for k in 0..4 {
                assert!((y.data()[b * 8 + k] - 0.3).abs() < 1e-12);
                assert!((y.data()[b * 8 + 4 + k] + 0.7).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn random_batch_moments() {
        // eps shrinks the variance by var/(var+eps); spread 5 keeps that under 1e-6
        let x = random(&[8, 3, 5, 5], 17).map(|v| 5.0 * v / 3.0);
        let mut st = BatchNormState::new(3);
        let (y, _) = batchnorm(&x, &[1.0; 3], &[0.0; 3], &mut st, Mode::Train).unwrap();
        for c in 0..3 {
            let vals: Vec<f64> = (0..8)
                .flat_map(|b| y.data()[(b * 3 + c) * 25..(b * 3 + c + 1) * 25].to_vec())
                .collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn running_stats_move_only_in_train_mode() {
        let x = random(&[4, 2, 3, 3], 3);
        let mut st = BatchNormState::new(2);
        let before = st.clone();
        batchnorm(&x, &[1.0; 2], &[0.0; 2], &mut st, Mode::Eval).unwrap();
        assert_eq!(st, before);
        batchnorm(&x, &[1.0; 2], &[0.0; 2], &mut st, Mode::Train).unwrap();
        assert_ne!(st.running_mean, before.running_mean);
    }

    #[test]
    fn degenerate_batch_rejected() {
        let x = random(&[1, 2, 3, 3], 3);
        let mut st = BatchNormState::new(2);
        assert!(matches!(
            batchnorm(&x, &[1.0; 2], &[0.0; 2], &mut st, Mode::Train),
            Err(Error::DegenerateBatch(1))
        ));
        assert!(batchnorm(&x, &[1.0; 2], &[0.0; 2], &mut st, Mode::Eval).is_ok());
    }

    #[test]
    fn backward_matches_finite_differences_in_both_modes() {
        let x = random(&[3, 2, 2, 2], 8);
        let up = random(&[3, 2, 2, 2], 9);
        let gamma = [0.7, 1.3];
        let beta = [0.1, -0.2];
        let mut st = BatchNormState::new(2);
        st.running_mean = vec![0.5, 1.0];
        st.running_var = vec![2.0, 0.5];
        for mode in [Mode::Train, Mode::Eval] {
            let f = |x: &Tensor<f64>, g: &[f64]| {
                let (y, _) = batchnorm_forward(x, g, &beta, &st, mode).unwrap();
                y.data().iter().zip(up.data()).map(|(a, b)| a * b).sum::<f64>()
            };
            let (_, cache) = batchnorm_forward(&x, &gamma, &beta, &st, mode).unwrap();
            let grads = batchnorm_backward(&up, &gamma, &cache).unwrap();
            let h = 1e-5;
            for i in 0..x.len() {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp.data_mut()[i] += h;
                xm.data_mut()[i] -= h;
                let fd = (f(&xp, &gamma) - f(&xm, &gamma)) / (2.0 * h);
                assert!((fd - grads.x.data()[i]).abs() < 1e-7 * fd.abs().max(1.0), "{mode:?} x[{i}]");
            }
            for c in 0..2 {
                let (mut gp, mut gm) = (gamma, gamma);
                gp[c] += h;
                gm[c] -= h;
                let fd = (f(&x, &gp) - f(&x, &gm)) / (2.0 * h);
                assert!((fd - grads.gamma[c]).abs() < 1e-7 * fd.abs().max(1.0));
            }
        }
    }
}
