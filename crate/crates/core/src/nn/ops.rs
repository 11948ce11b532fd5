//! Elementwise activations, pooling, dropout, dense layers, softmax and the
//! categorical cross-entropy objective.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Smallest probability passed to `ln` in the cross-entropy.
pub const CCE_LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Silu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    Max,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Train,
    Eval,
}

#[inline]
fn sigmoid<T: Real>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}

impl Activation {
    #[inline]
    pub fn apply<T: Real>(self, z: T) -> T {
        match self {
            Activation::Relu => z.max(T::zero()),
            Activation::Silu => z * sigmoid(z),
        }
    }

    /// Derivative at `z`; ReLU uses the subgradient 0 at the kink.
    #[inline]
    pub fn derivative<T: Real>(self, z: T) -> T {
        match self {
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Silu => {
                let s = sigmoid(z);
                s * (T::one() + z * (T::one() - s))
            }
        }
    }

    pub fn forward<T: Real>(self, x: &Tensor<T>) -> Tensor<T> {
        x.map(|z| self.apply(z))
    }

    /// Multiplies `grad_out` by the derivative evaluated at the pre-activation `z`.
    pub fn backward<T: Real>(self, z: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        if z.shape() != grad_out.shape() {
            return Err(Error::ShapeMismatch {
                expected: z.shape().to_vec(),
                actual: grad_out.shape().to_vec(),
            });
        }
        let data = z
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(&zi, &gi)| gi * self.derivative(zi))
            .collect();
        Tensor::new(z.shape().to_vec(), data)
    }
}

/// Result of a pooling pass; `argmax` is populated for max pooling and holds
/// flat input indices.
#[derive(Debug, Clone)]
pub struct Pooled<T> {
    pub output: Tensor<T>,
    pub argmax: Vec<usize>,
}

/// Non-overlapping `p x p` pooling over the last two axes of a 3-D `(C,H,W)`
/// or 4-D `(B,C,H,W)` tensor. Trailing rows and columns that do not fill a
/// window are dropped. Ties in max pooling go to the first maximal element in
/// row-major window order.
pub fn pool_forward<T: Real>(x: &Tensor<T>, mode: PoolMode, p: usize) -> Result<Pooled<T>> {
    if p < 1 {
        return Err(Error::BadPoolSize(p));
    }
    let shape = x.shape();
    if shape.len() < 3 {
        return Err(Error::BadShape(shape.to_vec()));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let (oh, ow) = (h / p, w / p);
    if oh == 0 || ow == 0 {
        return Err(Error::BadShape(shape.to_vec()));
    }
    let planes: usize = shape[..shape.len() - 2].iter().product();
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut argmax = Vec::new();
    let inv = T::one() / T::lit((p * p) as f64);
    let xd = x.data();
    for plane in 0..planes {
        let base = plane * h * w;
        for i in 0..oh {
            for j in 0..ow {
                match mode {
                    PoolMode::Max => {
                        let mut best = base + i * p * w + j * p;
                        for a in 0..p {
                            for b in 0..p {
                                let idx = base + (i * p + a) * w + j * p + b;
                                if xd[idx] > xd[best] {
                                    best = idx;
                                }
                            }
                        }
                        out.push(xd[best]);
                        argmax.push(best);
                    }
                    PoolMode::Mean => {
                        let mut acc = T::zero();
                        for a in 0..p {
                            for b in 0..p {
                                acc = acc + xd[base + (i * p + a) * w + j * p + b];
                            }
                        }
                        out.push(acc * inv);
                    }
                }
            }
        }
    }
    let mut out_shape = shape.to_vec();
    let n = out_shape.len();
    out_shape[n - 2] = oh;
    out_shape[n - 1] = ow;
    Ok(Pooled {
        output: Tensor::new(out_shape, out)?,
        argmax,
    })
}

pub fn pool_backward<T: Real>(
    input_shape: &[usize],
    pooled: &Pooled<T>,
    grad_out: &Tensor<T>,
    mode: PoolMode,
    p: usize,
) -> Result<Tensor<T>> {
    if grad_out.shape() != pooled.output.shape() {
        return Err(Error::ShapeMismatch {
            expected: pooled.output.shape().to_vec(),
            actual: grad_out.shape().to_vec(),
        });
    }
    let mut gx = Tensor::zeros(input_shape);
    let g = gx.data_mut();
    match mode {
        PoolMode::Max => {
            for (&idx, &go) in pooled.argmax.iter().zip(grad_out.data()) {
                g[idx] = g[idx] + go;
            }
        }
        PoolMode::Mean => {
            let n = input_shape.len();
            let (h, w) = (input_shape[n - 2], input_shape[n - 1]);
            let os = grad_out.shape();
            let (oh, ow) = (os[n - 2], os[n - 1]);
            let planes: usize = input_shape[..n - 2].iter().product();
            let inv = T::one() / T::lit((p * p) as f64);
            let gd = grad_out.data();
            for plane in 0..planes {
                for i in 0..oh {
                    for j in 0..ow {
                        let share = gd[(plane * oh + i) * ow + j] * inv;
                        for a in 0..p {
                            for b in 0..p {
                                g[plane * h * w + (i * p + a) * w + j * p + b] = share;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(gx)
}

/// Inverted dropout. Returns the output and the per-element multiplier
/// (0 or `1/(1-rate)`), or `None` when the layer is an identity.
pub fn dropout<T: Real>(
    x: &Tensor<T>,
    rate: f64,
    rng: &mut Rng,
    mode: Mode,
) -> Result<(Tensor<T>, Option<Vec<T>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::BadRate(rate));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let scale = T::lit(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..x.len())
        .map(|_| if rng.bernoulli(rate) { T::zero() } else { scale })
        .collect();
    let data = x.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
    Ok((Tensor::new(x.shape().to_vec(), data)?, Some(mask)))
}

/// Pre-activation of a dense layer: `x W + b` for `x: (B, in)`, `W: (in, out)`.
pub fn dense_linear<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let batch = x.shape()[0];
    let fan_in = x.row_len();
    if w.shape().len() != 2 || w.shape()[0] != fan_in || b.len() != w.shape()[1] {
        return Err(Error::ShapeMismatch {
            expected: vec![fan_in, b.len()],
            actual: w.shape().to_vec(),
        });
    }
    let out = w.shape()[1];
    let mut z = Vec::with_capacity(batch * out);
    let wd = w.data();
    for r in 0..batch {
        let mut row = b.data().to_vec();
        for (i, &xv) in x.row(r).iter().enumerate() {
            if xv == T::zero() {
                continue;
            }
            for (o, &wv) in row.iter_mut().zip(&wd[i * out..(i + 1) * out]) {
                *o = *o + xv * wv;
            }
        }
        z.extend(row);
    }
    Tensor::new(vec![batch, out], z)
}

/// `sigma(W^T x + b)` for each row of `x`.
pub fn dense_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    activation: Activation,
) -> Result<Tensor<T>> {
    Ok(activation.forward(&dense_linear(x, w, b)?))
}

pub struct DenseGrads<T> {
    pub x: Tensor<T>,
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

/// Backward of [`dense_linear`] given the gradient with respect to its output.
pub fn dense_linear_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad_z: &Tensor<T>,
) -> Result<DenseGrads<T>> {
    let batch = x.shape()[0];
    let fan_in = x.row_len();
    let out = w.shape()[1];
    if grad_z.shape() != [batch, out] {
        return Err(Error::ShapeMismatch {
            expected: vec![batch, out],
            actual: grad_z.shape().to_vec(),
        });
    }
    let wd = w.data();
    let mut gw = vec![T::zero(); fan_in * out];
    let mut gb = vec![T::zero(); out];
    let mut gx = vec![T::zero(); batch * fan_in];
    for r in 0..batch {
        let gz = grad_z.row(r);
        for (o, &g) in gb.iter_mut().zip(gz) {
            *o = *o + g;
        }
        for (i, &xv) in x.row(r).iter().enumerate() {
            let wrow = &wd[i * out..(i + 1) * out];
            let mut acc = T::zero();
            for ((gwv, &g), &wv) in gw[i * out..(i + 1) * out].iter_mut().zip(gz).zip(wrow) {
                *gwv = *gwv + xv * g;
                acc = acc + g * wv;
            }
            gx[r * fan_in + i] = acc;
        }
    }
    Ok(DenseGrads {
        x: Tensor::new(x.shape().to_vec(), gx)?,
        w: Tensor::new(w.shape().to_vec(), gw)?,
        b: Tensor::new(vec![out], gb)?,
    })
}

/// Row-wise softmax with max-shift stabilization. A 1-D input is one row.
pub fn softmax<T: Real>(z: &Tensor<T>) -> Result<Tensor<T>> {
    if !z.all_finite() {
        return Err(Error::NonFinite("softmax logits"));
    }
    let cols = *z.shape().last().unwrap();
    let mut out = Vec::with_capacity(z.len());
    for row in z.data().chunks(cols) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let e: Vec<T> = row.iter().map(|&v| (v - m).exp()).collect();
        let s: T = e.iter().copied().sum();
        out.extend(e.into_iter().map(|v| v / s));
    }
    Tensor::new(z.shape().to_vec(), out)
}

fn target_class<T: Real>(row: &[T], index: usize) -> Result<usize> {
    let mut hot = None;
    for (i, &v) in row.iter().enumerate() {
        if v == T::one() {
            if hot.is_some() {
                return Err(Error::BadTarget { row: index });
            }
            hot = Some(i);
        } else if v != T::zero() {
            return Err(Error::BadTarget { row: index });
        }
    }
    hot.ok_or(Error::BadTarget { row: index })
}

/// Class indices of one-hot target rows.
pub fn target_classes<T: Real>(targets: &Tensor<T>) -> Result<Vec<usize>> {
    (0..targets.shape()[0])
        .map(|r| target_class(targets.row(r), r))
        .collect()
}

/// `-(1/P) sum_j sum_i y_ij ln(max(yhat_ij, 1e-12))`.
pub fn cce_loss<T: Real>(predictions: &Tensor<T>, targets: &Tensor<T>) -> Result<T> {
    if predictions.shape() != targets.shape() || predictions.shape().len() != 2 {
        return Err(Error::ShapeMismatch {
            expected: targets.shape().to_vec(),
            actual: predictions.shape().to_vec(),
        });
    }
    let classes = target_classes(targets)?;
    let floor = T::lit(CCE_LOG_FLOOR);
    let p = T::lit(classes.len() as f64);
    let total: T = classes
        .iter()
        .enumerate()
        .map(|(r, &c)| -predictions.row(r)[c].max(floor).ln())
        .sum();
    let loss = total / p;
    if !loss.is_finite() {
        return Err(Error::NonFinite("cross-entropy"));
    }
    Ok(loss)
}

/// Gradient of the cross-entropy with respect to the softmax logits:
/// `(yhat - y) / P`.
pub fn cce_softmax_backward<T: Real>(predictions: &Tensor<T>, targets: &Tensor<T>) -> Result<Tensor<T>> {
    let p = T::lit(predictions.shape()[0] as f64);
    let diff = predictions.sub(targets)?;
    Ok(diff.map(|v| v / p))
}

/// Fraction of rows whose argmax prediction matches the target class. Ties
/// resolve to the lowest class index.
pub fn accuracy<T: Real>(predictions: &Tensor<T>, targets: &Tensor<T>) -> Result<f64> {
    let rows = predictions.shape()[0];
    if rows == 0 {
        return Err(Error::EmptyDataset);
    }
    let truth = target_classes(targets)?;
    let hits = (0..rows)
        .filter(|&r| argmax(predictions.row(r)) == truth[r])
        .count();
    Ok(hits as f64 / rows as f64)
}

pub fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn activation_values() {
        assert_eq!(Activation::Relu.apply(-2.0f64), 0.0);
        assert_eq!(Activation::Relu.apply(3.0f64), 3.0);
        assert_eq!(Activation::Silu.apply(0.0f64), 0.0);
        let expected = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((Activation::Silu.apply(1.0f64) - expected).abs() < 1e-15);
        assert!((expected - 0.731_058_578_630_004_9).abs() < 1e-15);
    }

    #[test]
    fn silu_derivative_matches_difference() {
        for &z in &[-3.0f64, -0.5, 0.0, 0.7, 4.0] {
            let h = 1e-6;
            let fd = (Activation::Silu.apply(z + h) - Activation::Silu.apply(z - h)) / (2.0 * h);
            assert!((fd - Activation::Silu.derivative(z)).abs() < 1e-8);
        }
    }

    #[test]
    fn pool_window_values() {
        let x = t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(pool_forward(&x, PoolMode::Max, 2).unwrap().output.data(), &[4.0]);
        assert_eq!(pool_forward(&x, PoolMode::Mean, 2).unwrap().output.data(), &[2.5]);
        assert!(matches!(pool_forward(&x, PoolMode::Max, 0), Err(Error::BadPoolSize(0))));
    }

    #[test]
    fn max_pool_ramp_matches_window_scan() {
        let data: Vec<f64> = (0..16).map(|v| ((v * 7) % 16) as f64).collect();
        let x = t(&[1, 4, 4], &data);
        let got = pool_forward(&x, PoolMode::Max, 2).unwrap().output;
        let mut expected = Vec::new();
        for bi in 0..2 {
            for bj in 0..2 {
                let mut m = f64::MIN;
                for a in 0..2 {
                    for b in 0..2 {
                        m = m.max(data[(bi * 2 + a) * 4 + bj * 2 + b]);
                    }
                }
                expected.push(m);
            }
        }
        assert_eq!(got.data(), expected.as_slice());
    }

    #[test]
    fn pool_truncates_remainder() {
        let x = t(&[1, 3, 3], &[1.0, 2.0, 9.0, 3.0, 4.0, 9.0, 9.0, 9.0, 9.0]);
        let out = pool_forward(&x, PoolMode::Mean, 2).unwrap().output;
        assert_eq!(out.shape(), &[1, 1, 1]);
        assert_eq!(out.data(), &[2.5]);
    }

    #[test]
    fn max_pool_backward_tie_goes_first() {
        let x = t(&[1, 2, 2], &[5.0, 5.0, 5.0, 1.0]);
        let pooled = pool_forward(&x, PoolMode::Max, 2).unwrap();
        let g = pool_backward(x.shape(), &pooled, &t(&[1, 1, 1], &[1.0]), PoolMode::Max, 2).unwrap();
        assert_eq!(g.data(), &[1.0, 0.0, 0.0, 0.0]);
        let pooled = pool_forward(&x, PoolMode::Mean, 2).unwrap();
        let g = pool_backward(x.shape(), &pooled, &t(&[1, 1, 1], &[1.0]), PoolMode::Mean, 2).unwrap();
        assert_eq!(g.data(), &[0.25; 4]);
    }

    #[test]
    fn dropout_modes() {
        let x = t(&[4], &[1.0, 2.0, 3.0, 4.0]);
        let mut rng = Rng::new(1);
        assert_eq!(dropout(&x, 0.0, &mut rng, Mode::Train).unwrap().0, x);
        assert_eq!(dropout(&x, 0.7, &mut rng, Mode::Eval).unwrap().0, x);
        assert!(matches!(dropout(&x, 1.0, &mut rng, Mode::Train), Err(Error::BadRate(_))));
        assert!(matches!(dropout(&x, -0.1, &mut rng, Mode::Train), Err(Error::BadRate(_))));
    }

    #[test]
    fn dropout_keep_frequency() {
        let x = Tensor::<f64>::ones(&[100_000]);
        let (y, _) = dropout(&x, 0.5, &mut Rng::new(99), Mode::Train).unwrap();
        let kept = y.data().iter().filter(|&&v| v != 0.0).count() as f64 / 1e5;
        assert!((kept - 0.5).abs() < 0.01);
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn dense_examples() {
        let x = t(&[1, 3], &[1.0, 0.5, 2.0]);
        let eye = t(&[3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let zero_b = Tensor::zeros(&[3]);
        assert_eq!(dense_forward(&x, &eye, &zero_b, Activation::Relu).unwrap().data(), x.data());
        let y = dense_forward(&t(&[1, 1], &[3.0]), &t(&[1, 1], &[2.0]), &t(&[1], &[1.0]), Activation::Relu)
            .unwrap();
        assert_eq!(y.data(), &[7.0]);
        let z = dense_forward(&x, &Tensor::zeros(&[3, 3]), &zero_b, Activation::Relu).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        assert!(matches!(
            dense_forward(&x, &Tensor::zeros(&[2, 3]), &zero_b, Activation::Relu),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn softmax_examples() {
        let s = softmax(&t(&[4], &[0.3; 4])).unwrap();
        assert!(s.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let s = softmax(&t(&[2], &[0.0, 3.0f64.ln()])).unwrap();
        assert!((s.data()[0] - 0.25).abs() < 1e-15 && (s.data()[1] - 0.75).abs() < 1e-15);
        let a = softmax(&t(&[3], &[1.0, -2.0, 0.5])).unwrap();
        let b = softmax(&t(&[3], &[101.0, 98.0, 100.5])).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(matches!(softmax(&t(&[2], &[f64::NAN, 0.0])), Err(Error::NonFinite(_))));
    }

    #[test]
    fn cce_examples() {
        let y = t(&[1, 2], &[1.0, 0.0]);
        assert_eq!(cce_loss(&t(&[1, 2], &[1.0, 0.0]), &y).unwrap(), 0.0);
        assert!((cce_loss(&t(&[1, 2], &[0.5, 0.5]), &y).unwrap() - std::f64::consts::LN_2).abs() < 1e-10);
        let mut target = vec![0.0; 21];
        target[4] = 1.0;
        let l = cce_loss(&t(&[1, 21], &[1.0 / 21.0; 21]), &t(&[1, 21], &target)).unwrap();
        assert!((l - 3.044_522_437_7).abs() < 1e-10);
        assert!(matches!(
            cce_loss(&t(&[1, 2], &[0.5, 0.5]), &t(&[1, 2], &[1.0, 1.0])),
            Err(Error::BadTarget { row: 0 })
        ));
        // Underflowed probability stays finite through the log floor.
        let l = cce_loss(&t(&[1, 2], &[0.0, 1.0]), &y).unwrap();
        assert!((l - 1e-12f64.ln().abs()).abs() < 1e-9);
    }

    #[test]
    fn accuracy_cases() {
        let y = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(accuracy(&y, &y).unwrap(), 1.0);
        // constant predictor with a tie -> class 0 everywhere
        let constant = t(&[2, 2], &[0.5, 0.5, 0.5, 0.5]);
        assert_eq!(accuracy(&constant, &y).unwrap(), 0.5);
    }
}
