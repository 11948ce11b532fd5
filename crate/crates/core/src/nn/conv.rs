//! Valid (unpadded) strided 2-D convolution without bias.
//!
//! Output cell `(i, j)` of map `k` is `sum_c sum_{a,b} w[k,c,a,b] * x[c, i*s + a, j*s + b]`
//! with 0-based window anchoring. Each output extent is `floor((m - n + 1) / s)`.

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    /// `(d_out, d_in, n, n)`
    pub kernels: Tensor<T>,
    pub stride: usize,
}

/// Output extent along one spatial axis.
pub fn conv_out_extent(m: usize, n: usize, stride: usize) -> Option<usize> {
    if stride == 0 || n == 0 || m < n {
        return None;
    }
    let out = (m - n + 1) / stride;
    (out >= 1).then_some(out)
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub n: usize,
    pub s: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(c_in: usize, h: usize, w: usize, kernel_shape: &[usize], s: usize) -> Result<Self> {
        if kernel_shape.len() != 4 || kernel_shape[2] != kernel_shape[3] {
            return Err(Error::BadShape(kernel_shape.to_vec()));
        }
        if kernel_shape[1] != c_in {
            return Err(Error::ShapeMismatch {
                expected: vec![kernel_shape[0], c_in, kernel_shape[2], kernel_shape[3]],
                actual: kernel_shape.to_vec(),
            });
        }
        let n = kernel_shape[2];
        let (oh, ow) = match (conv_out_extent(h, n, s), conv_out_extent(w, n, s)) {
            (Some(oh), Some(ow)) => (oh, ow),
            _ => return Err(Error::BadShape(vec![c_in, h, w])),
        };
        Ok(Self {
            c_in,
            h,
            w,
            c_out: kernel_shape[0],
            n,
            s,
            oh,
            ow,
        })
    }

    pub fn in_len(&self) -> usize {
        self.c_in * self.h * self.w
    }

    pub fn out_len(&self) -> usize {
        self.c_out * self.oh * self.ow
    }
}

/// One sample: `out` is overwritten.
pub(crate) fn forward_sample<T: Real>(g: &ConvGeom, x: &[T], k: &[T], out: &mut [T]) {
    let ConvGeom {
        c_in,
        h,
        w,
        c_out,
        n,
        s,
        oh,
        ow,
    } = *g;
    out.iter_mut().for_each(|v| *v = T::zero());
    for ko in 0..c_out {
        let out_k = &mut out[ko * oh * ow..(ko + 1) * oh * ow];
        for ci in 0..c_in {
            let x_c = &x[ci * h * w..(ci + 1) * h * w];
            for a in 0..n {
                for b in 0..n {
                    let wv = k[((ko * c_in + ci) * n + a) * n + b];
                    for i in 0..oh {
                        let row = &x_c[(i * s + a) * w..];
                        let orow = &mut out_k[i * ow..(i + 1) * ow];
                        if s == 1 {
                            let src = &row[b..b + ow];
                            for (o, &xv) in orow.iter_mut().zip(src) {
                                *o = *o + wv * xv;
                            }
                        } else {
                            for (j, o) in orow.iter_mut().enumerate() {
                                *o = *o + wv * row[j * s + b];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// One sample: accumulates into `grad_k` and (when given) overwrites `grad_x`.
pub(crate) fn backward_sample<T: Real>(
    g: &ConvGeom,
    grad_out: &[T],
    x: &[T],
    k: &[T],
    grad_k: &mut [T],
    mut grad_x: Option<&mut [T]>,
) {
    let ConvGeom {
        c_in,
        h,
        w,
        c_out,
        n,
        s,
        oh,
        ow,
    } = *g;
    if let Some(gx) = grad_x.as_deref_mut() {
        gx.iter_mut().for_each(|v| *v = T::zero());
    }
    for ko in 0..c_out {
        let go_k = &grad_out[ko * oh * ow..(ko + 1) * oh * ow];
        for ci in 0..c_in {
            let x_c = &x[ci * h * w..(ci + 1) * h * w];
            for a in 0..n {
                for b in 0..n {
                    let widx = ((ko * c_in + ci) * n + a) * n + b;
                    let mut acc = T::zero();
                    for i in 0..oh {
                        let row = &x_c[(i * s + a) * w..];
                        let grow = &go_k[i * ow..(i + 1) * ow];
                        if s == 1 {
                            for (&gv, &xv) in grow.iter().zip(&row[b..b + ow]) {
                                acc = acc + gv * xv;
                            }
                        } else {
                            for (j, &gv) in grow.iter().enumerate() {
                                acc = acc + gv * row[j * s + b];
                            }
                        }
                    }
                    grad_k[widx] = grad_k[widx] + acc;
                    if let Some(gx) = grad_x.as_deref_mut() {
                        let wv = k[widx];
                        let gx_c = &mut gx[ci * h * w..(ci + 1) * h * w];
                        for i in 0..oh {
                            let grow = &go_k[i * ow..(i + 1) * ow];
                            let xrow = &mut gx_c[(i * s + a) * w..];
                            if s == 1 {
                                for (xv, &gv) in xrow[b..b + ow].iter_mut().zip(grow) {
                                    *xv = *xv + wv * gv;
                                }
                            } else {
                                for (j, &gv) in grow.iter().enumerate() {
                                    let t = &mut xrow[j * s + b];
                                    *t = *t + wv * gv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Convolves a single `(d_in, m, m')` input.
pub fn conv2d_forward<T: Real>(x: &Tensor<T>, params: &ConvParams<T>) -> Result<Tensor<T>> {
    let [c, h, w] = three_axes(x)?;
    let g = ConvGeom::new(c, h, w, params.kernels.shape(), params.stride)?;
    let mut out = vec![T::zero(); g.out_len()];
    forward_sample(&g, x.data(), params.kernels.data(), &mut out);
    Tensor::new(vec![g.c_out, g.oh, g.ow], out)
}

/// Adjoint of [`conv2d_forward`]: returns `(grad_x, grad_kernels)`.
pub fn conv2d_backward<T: Real>(
    grad_out: &Tensor<T>,
    x: &Tensor<T>,
    params: &ConvParams<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let [c, h, w] = three_axes(x)?;
    let g = ConvGeom::new(c, h, w, params.kernels.shape(), params.stride)?;
    if grad_out.shape() != [g.c_out, g.oh, g.ow] {
        return Err(Error::ShapeMismatch {
            expected: vec![g.c_out, g.oh, g.ow],
            actual: grad_out.shape().to_vec(),
        });
    }
    let mut gx = vec![T::zero(); g.in_len()];
    let mut gk = vec![T::zero(); params.kernels.len()];
    backward_sample(
        &g,
        grad_out.data(),
        x.data(),
        params.kernels.data(),
        &mut gk,
        Some(&mut gx),
    );
    Ok((
        Tensor::new(x.shape().to_vec(), gx)?,
        Tensor::new(params.kernels.shape().to_vec(), gk)?,
    ))
}

fn three_axes<T: Real>(x: &Tensor<T>) -> Result<[usize; 3]> {
    match *x.shape() {
        [c, h, w] => Ok([c, h, w]),
        _ => Err(Error::BadShape(x.shape().to_vec())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn params(shape: Vec<usize>, data: Vec<f64>, stride: usize) -> ConvParams<f64> {
        ConvParams {
            kernels: Tensor::new(shape, data).unwrap(),
            stride,
        }
    }

    /// Brute-force window scan straight from the definition.
    fn window_oracle(x: &Tensor<f64>, k: &Tensor<f64>, s: usize) -> Vec<f64> {
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (d, n) = (k.shape()[0], k.shape()[2]);
        let (oh, ow) = ((h - n + 1) / s, (w - n + 1) / s);
        let mut out = Vec::new();
        for ko in 0..d {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for a in 0..n {
                            for b in 0..n {
                                acc += k.data()[((ko * c + ci) * n + a) * n + b]
                                    * x.data()[(ci * h + i * s + a) * w + j * s + b];
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
        out
    }

    #[test]
    fn ones_kernel_window_sums() {
        let x = Tensor::new(vec![1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let p = params(vec![1, 1, 2, 2], vec![1.0; 4], 1);
        let y = conv2d_forward(&x, &p).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert_eq!(y.data(), &[12.0, 16.0, 24.0, 28.0]);
    }

    #[test]
    fn identity_kernel() {
        let x = Tensor::new(vec![1, 3, 4], (0..12).map(f64::from).collect()).unwrap();
        let y = conv2d_forward(&x, &params(vec![1, 1, 1, 1], vec![1.0], 1)).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn channel_sum_linearity() {
        let mut rng = Rng::new(3);
        let single: Vec<f64> = (0..25).map(|_| rng.normal()).collect();
        let k: Vec<f64> = (0..9).map(|_| rng.normal()).collect();
        let y1 = conv2d_forward(
            &Tensor::new(vec![1, 5, 5], single.clone()).unwrap(),
            &params(vec![1, 1, 3, 3], k.clone(), 1),
        )
        .unwrap();
        let x2 = [single.clone(), single].concat();
        let y2 = conv2d_forward(
            &Tensor::new(vec![2, 5, 5], x2).unwrap(),
            &params(vec![1, 2, 3, 3], [k.clone(), k].concat(), 1),
        )
        .unwrap();
        for (a, b) in y1.data().iter().zip(y2.data()) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_window_oracle_with_stride() {
        let mut rng = Rng::new(11);
        for &(c, m, d, n, s) in &[(2, 7, 3, 3, 2), (3, 9, 2, 2, 3), (1, 6, 1, 3, 1)] {
            let x = Tensor::new(vec![c, m, m], (0..c * m * m).map(|_| rng.normal()).collect()).unwrap();
            let k = Tensor::new(vec![d, c, n, n], (0..d * c * n * n).map(|_| rng.normal()).collect())
                .unwrap();
            let y = conv2d_forward(&x, &ConvParams { kernels: k.clone(), stride: s }).unwrap();
            let oracle = window_oracle(&x, &k, s);
            assert_eq!(y.len(), oracle.len());
            for (a, b) in y.data().iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn channel_mismatch_errors() {
        let x = Tensor::<f64>::zeros(&[2, 4, 4]);
        let p = params(vec![1, 3, 2, 2], vec![0.0; 12], 1);
        assert!(matches!(conv2d_forward(&x, &p), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let x = Tensor::new(vec![1, 4, 4], (0..16).map(f64::from).collect()).unwrap();
        let p = params(vec![2, 1, 2, 2], vec![0.5; 8], 1);
        let (gx, gk) = conv2d_backward(&Tensor::zeros(&[2, 3, 3]), &x, &p).unwrap();
        assert!(gx.data().iter().all(|&v| v == 0.0));
        assert!(gk.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_kernel_gradient_is_input() {
        let x = Tensor::new(vec![1, 1, 1], vec![3.5]).unwrap();
        let p = params(vec![1, 1, 1, 1], vec![2.0], 1);
        let (gx, gk) = conv2d_backward(&Tensor::ones(&[1, 1, 1]), &x, &p).unwrap();
        assert_eq!(gk.data(), &[3.5]);
        assert_eq!(gx.data(), &[2.0]);
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = Rng::new(2024);
        let h = 1e-5;
        for &s in &[1usize, 2] {
            let x = Tensor::new(vec![1, 4, 4], (0..16).map(|_| rng.normal()).collect()).unwrap();
            let k = Tensor::new(vec![1, 1, 2, 2], (0..4).map(|_| rng.normal()).collect()).unwrap();
            let p = ConvParams { kernels: k.clone(), stride: s };
            let out = conv2d_forward(&x, &p).unwrap();
            let up = Tensor::new(out.shape().to_vec(), (0..out.len()).map(|_| rng.normal()).collect())
                .unwrap();
            let objective = |x: &Tensor<f64>, k: &Tensor<f64>| {
                let y = conv2d_forward(x, &ConvParams { kernels: k.clone(), stride: s }).unwrap();
                y.data().iter().zip(up.data()).map(|(a, b)| a * b).sum::<f64>()
            };
            let (gx, gk) = conv2d_backward(&up, &x, &p).unwrap();
            for i in 0..x.len() {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp.data_mut()[i] += h;
                xm.data_mut()[i] -= h;
                let fd = (objective(&xp, &k) - objective(&xm, &k)) / (2.0 * h);
                assert!((fd - gx.data()[i]).abs() <= 1e-6 * fd.abs().max(1.0));
            }
            for i in 0..k.len() {
                let (mut kp, mut km) = (k.clone(), k.clone());
                kp.data_mut()[i] += h;
                km.data_mut()[i] -= h;
                let fd = (objective(&x, &kp) - objective(&x, &km)) / (2.0 * h);
                assert!((fd - gk.data()[i]).abs() <= 1e-6 * fd.abs().max(1.0));
            }
        }
    }
}
