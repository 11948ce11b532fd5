//! Compiled evaluator for an [`ArchitectureSpec`]: parameter layout, forward
//! pass, and reverse-mode gradients of the cross-entropy objective.

use crate::error::{Error, Result};
use crate::nn::arch::{ArchitectureSpec, BlockKind};
use crate::nn::batchnorm::{
    batchnorm_backward, batchnorm_forward, BatchNormCache, BatchNormState, BatchStats,
};
use crate::nn::conv::{backward_sample, forward_sample, ConvGeom};
use crate::nn::ops::{
    accuracy, cce_loss, cce_softmax_backward, dense_linear, dense_linear_backward, dropout,
    pool_backward, pool_forward, softmax, Activation, Mode, PoolMode, Pooled,
};
use crate::rng::{init_tensor, InitializerKind, Rng};
use crate::scalar::Real;
use crate::tensor::{ParamSet, Tensor};

#[derive(Debug, Clone)]
enum Layer {
    Conv {
        geom: ConvGeom,
        kernel: usize,
        /// `(gamma, beta, running-stat slot)`
        bn: Option<(usize, usize, usize)>,
        activation: Activation,
        pool: Option<(PoolMode, usize)>,
        dropout: f64,
    },
    Dense {
        weight: usize,
        bias: usize,
        activation: Activation,
        dropout: f64,
    },
    Classify {
        weight: usize,
        bias: usize,
    },
}

/// Running batch-normalization statistics, one entry per normalized block.
#[derive(Debug, Clone, PartialEq)]
pub struct NetState<T> {
    pub batchnorm: Vec<BatchNormState<T>>,
}

impl<T: Real> NetState<T> {
    pub fn commit(&mut self, stats: &[BatchStats<T>]) {
        for (s, b) in self.batchnorm.iter_mut().zip(stats) {
            s.commit(b);
        }
    }

    pub fn overwrite(&mut self, stats: &[BatchStats<T>]) {
        for (s, b) in self.batchnorm.iter_mut().zip(stats) {
            s.overwrite(b);
        }
    }
}

enum Cache<T> {
    Conv {
        input: Tensor<T>,
        pre: Tensor<T>,
        pooled: Option<(Vec<usize>, Pooled<T>)>,
        bn: Option<BatchNormCache<T>>,
        mask: Option<Vec<T>>,
    },
    Dense {
        input: Tensor<T>,
        pre: Tensor<T>,
        mask: Option<Vec<T>>,
    },
    Classify {
        input: Tensor<T>,
    },
}

/// Output of a forward pass together with everything backward needs.
pub struct ForwardPass<T> {
    pub probabilities: Tensor<T>,
    caches: Vec<Cache<T>>,
}

impl<T: Real> ForwardPass<T> {
    /// Batch statistics of every normalization layer (train mode only).
    pub fn batch_stats(&self) -> Vec<BatchStats<T>> {
        self.caches
            .iter()
            .filter_map(|c| match c {
                Cache::Conv { bn: Some(bn), .. } => bn.stats.clone(),
                _ => None,
            })
            .collect()
    }
}

/// Loss, gradient, and the batch statistics observed while computing them.
#[derive(Debug, Clone)]
pub struct Evaluation<T> {
    pub loss: T,
    pub grads: ParamSet<T>,
    pub batch_stats: Vec<BatchStats<T>>,
}

#[derive(Debug, Clone)]
pub struct Network<T> {
    spec: ArchitectureSpec,
    layers: Vec<Layer>,
    template: ParamSet<T>,
    bn_channels: Vec<usize>,
}

impl<T: Real> Network<T> {
    pub fn new(spec: &ArchitectureSpec) -> Result<Self> {
        spec.validate()?;
        let mut template = ParamSet::new();
        let mut layers = Vec::new();
        let mut bn_channels = Vec::new();
        let [mut c, mut h, mut w] = spec.input;
        let mut flat = 0usize;
        let (mut conv_i, mut fcb_i) = (0usize, 0usize);
        for l in &spec.layers {
            match l.kind {
                BlockKind::Cdb | BlockKind::Cb => {
                    conv_i += 1;
                    let kshape = [l.channels, c, l.kernel, l.kernel];
                    let geom = ConvGeom::new(c, h, w, &kshape, l.stride)?;
                    let kernel = template.len();
                    template.push(format!("conv{conv_i}.kernel"), Tensor::zeros(&kshape));
                    let bn = if l.batchnorm {
                        let g = template.len();
                        template.push(format!("conv{conv_i}.bn_gamma"), Tensor::ones(&[l.channels]));
                        template.push(format!("conv{conv_i}.bn_beta"), Tensor::zeros(&[l.channels]));
                        bn_channels.push(l.channels);
                        Some((g, g + 1, bn_channels.len() - 1))
                    } else {
                        None
                    };
                    let pool = match l.kind {
                        BlockKind::Cdb => l.pool.map(|m| (m, l.pool_size)),
                        _ => None,
                    };
                    c = l.channels;
                    h = geom.oh;
                    w = geom.ow;
                    if let Some((_, p)) = pool {
                        h /= p;
                        w /= p;
                    }
                    flat = c * h * w;
                    layers.push(Layer::Conv {
                        geom,
                        kernel,
                        bn,
                        activation: l.activation,
                        pool,
                        dropout: l.dropout,
                    });
                }
                BlockKind::Fcb | BlockKind::Classify => {
                    if flat == 0 {
                        flat = c * h * w;
                    }
                    let prefix = if l.kind == BlockKind::Fcb {
                        fcb_i += 1;
                        format!("fcb{fcb_i}")
                    } else {
                        "classify".to_string()
                    };
                    let weight = template.len();
                    template.push(format!("{prefix}.weight"), Tensor::zeros(&[flat, l.channels]));
                    template.push(format!("{prefix}.bias"), Tensor::zeros(&[l.channels]));
                    layers.push(if l.kind == BlockKind::Fcb {
                        Layer::Dense {
                            weight,
                            bias: weight + 1,
                            activation: l.activation,
                            dropout: l.dropout,
                        }
                    } else {
                        Layer::Classify {
                            weight,
                            bias: weight + 1,
                        }
                    });
                    flat = l.channels;
                }
            }
        }
        Ok(Self {
            spec: spec.clone(),
            layers,
            template,
            bn_channels,
        })
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    /// Parameter layout with zero weights, unit scales, and zero shifts.
    pub fn template(&self) -> &ParamSet<T> {
        &self.template
    }

    pub fn param_count(&self) -> usize {
        self.template.numel()
    }

    pub fn fresh_state(&self) -> NetState<T> {
        NetState {
            batchnorm: self.bn_channels.iter().map(|&c| BatchNormState::new(c)).collect(),
        }
    }

    /// Samples kernels and dense weights from `kind`; biases and shifts start
    /// at zero, normalization scales at one.
    pub fn init_params(&self, kind: InitializerKind, rng: &mut Rng) -> Result<ParamSet<T>> {
        let mut params = self.template.clone();
        for e in params.iter_mut() {
            if e.name.ends_with(".kernel") || e.name.ends_with(".weight") {
                e.tensor = init_tensor(e.tensor.shape(), kind, rng)?;
            }
        }
        Ok(params)
    }

    fn check_params(&self, params: &ParamSet<T>) -> Result<()> {
        if params.len() != self.template.len() {
            return Err(Error::LengthMismatch {
                expected: self.template.len(),
                actual: params.len(),
            });
        }
        for (a, b) in params.iter().zip(self.template.iter()) {
            if a.tensor.shape() != b.tensor.shape() {
                return Err(Error::ShapeMismatch {
                    expected: b.tensor.shape().to_vec(),
                    actual: a.tensor.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    /// Runs the network on a `(B, C, H, W)` batch. `rng` drives dropout masks
    /// in train mode.
    pub fn forward(
        &self,
        params: &ParamSet<T>,
        state: &NetState<T>,
        x: &Tensor<T>,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<ForwardPass<T>> {
        self.check_params(params)?;
        let [c, h, w] = self.spec.input;
        if x.shape().len() != 4 || x.shape()[1..] != [c, h, w] {
            return Err(Error::ShapeMismatch {
                expected: vec![x.shape()[0], c, h, w],
                actual: x.shape().to_vec(),
            });
        }
        let batch = x.shape()[0];
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            match *layer {
                Layer::Conv {
                    geom,
                    kernel,
                    bn,
                    activation,
                    pool,
                    dropout: rate,
                } => {
                    let k = params.at(kernel).data();
                    let mut pre = vec![T::zero(); batch * geom.out_len()];
                    for b in 0..batch {
                        forward_sample(
                            &geom,
                            cur.row(b),
                            k,
                            &mut pre[b * geom.out_len()..(b + 1) * geom.out_len()],
                        );
                    }
                    let pre = Tensor::new(vec![batch, geom.c_out, geom.oh, geom.ow], pre)?;
                    let act = activation.forward(&pre);
                    let (after_pool, pooled) = match pool {
                        Some((mode_p, p)) => {
                            let shape = act.shape().to_vec();
                            let pooled = pool_forward(&act, mode_p, p)?;
                            (pooled.output.clone(), Some((shape, pooled)))
                        }
                        None => (act, None),
                    };
                    let (normed, bn_cache) = match bn {
                        Some((g, be, slot)) => {
                            let (y, cache) = batchnorm_forward(
                                &after_pool,
                                params.at(g).data(),
                                params.at(be).data(),
                                &state.batchnorm[slot],
                                mode,
                            )?;
                            (y, Some(cache))
                        }
                        None => (after_pool, None),
                    };
                    let (out, mask) = dropout(&normed, rate, rng, mode)?;
                    caches.push(Cache::Conv {
                        input: std::mem::replace(&mut cur, out),
                        pre,
                        pooled,
                        bn: bn_cache,
                        mask,
                    });
                }
                Layer::Dense {
                    weight,
                    bias,
                    activation,
                    dropout: rate,
                } => {
                    let input = flatten_batch(cur)?;
                    let pre = dense_linear(&input, params.at(weight), params.at(bias))?;
                    let act = activation.forward(&pre);
                    let (out, mask) = dropout(&act, rate, rng, mode)?;
                    caches.push(Cache::Dense { input, pre, mask });
                    cur = out;
                }
                Layer::Classify { weight, bias } => {
                    let input = flatten_batch(cur)?;
                    let logits = dense_linear(&input, params.at(weight), params.at(bias))?;
                    cur = softmax(&logits)?;
                    caches.push(Cache::Classify { input });
                }
            }
        }
        Ok(ForwardPass {
            probabilities: cur,
            caches,
        })
    }

    /// Gradient of the mean cross-entropy with respect to every parameter.
    pub fn backward(
        &self,
        params: &ParamSet<T>,
        pass: &ForwardPass<T>,
        targets: &Tensor<T>,
    ) -> Result<ParamSet<T>> {
        let mut grads = self.template.zeros_like();
        let mut upstream = cce_softmax_backward(&pass.probabilities, targets)?;
        for (idx, (layer, cache)) in self.layers.iter().zip(&pass.caches).enumerate().rev() {
            match (layer, cache) {
                (Layer::Classify { weight, bias }, Cache::Classify { input }) => {
                    let g = dense_linear_backward(input, params.at(*weight), &upstream)?;
                    *grads.at_mut(*weight) = g.w;
                    *grads.at_mut(*bias) = g.b;
                    upstream = g.x;
                }
                (
                    Layer::Dense {
                        weight,
                        bias,
                        activation,
                        ..
                    },
                    Cache::Dense { input, pre, mask },
                ) => {
                    let up = apply_mask(take(&mut upstream).reshape(pre.shape())?, mask.as_deref());
                    let gz = activation.backward(pre, &up)?;
                    let g = dense_linear_backward(input, params.at(*weight), &gz)?;
                    *grads.at_mut(*weight) = g.w;
                    *grads.at_mut(*bias) = g.b;
                    upstream = g.x;
                }
                (
                    Layer::Conv {
                        geom,
                        kernel,
                        bn,
                        activation,
                        pool,
                        ..
                    },
                    Cache::Conv {
                        input,
                        pre,
                        pooled,
                        bn: bn_cache,
                        mask,
                    },
                ) => {
                    let batch = input.shape()[0];
                    let out_shape = match pooled {
                        Some((_, p)) => p.output.shape().to_vec(),
                        None => pre.shape().to_vec(),
                    };
                    let mut up = apply_mask(take(&mut upstream).reshape(&out_shape)?, mask.as_deref());
                    if let (Some((g, be, _)), Some(c)) = (bn, bn_cache) {
                        let gb = batchnorm_backward(&up, params.at(*g).data(), c)?;
                        grads.at_mut(*g).data_mut().copy_from_slice(&gb.gamma);
                        grads.at_mut(*be).data_mut().copy_from_slice(&gb.beta);
                        up = gb.x;
                    }
                    if let (Some((mode_p, p)), Some((shape, pl))) = (pool, pooled) {
                        up = pool_backward(shape, pl, &up, *mode_p, *p)?;
                    }
                    let gz = activation.backward(pre, &up)?;
                    let first = idx == 0;
                    let k = params.at(*kernel).data();
                    let mut gk = vec![T::zero(); k.len()];
                    let mut gx = if first {
                        Vec::new()
                    } else {
                        vec![T::zero(); batch * geom.in_len()]
                    };
                    for b in 0..batch {
                        let gx_b = if first {
                            None
                        } else {
                            Some(&mut gx[b * geom.in_len()..(b + 1) * geom.in_len()])
                        };
                        backward_sample(geom, gz.row(b), input.row(b), k, &mut gk, gx_b);
                    }
                    grads.at_mut(*kernel).data_mut().copy_from_slice(&gk);
                    if !first {
                        upstream = Tensor::new(input.shape().to_vec(), gx)?;
                    }
                }
                _ => unreachable!("layer and cache kinds are pushed in lockstep"),
            }
        }
        Ok(grads)
    }

    /// Mean cross-entropy and its gradient on one batch.
    pub fn loss_and_grad(
        &self,
        params: &ParamSet<T>,
        state: &NetState<T>,
        x: &Tensor<T>,
        targets: &Tensor<T>,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<Evaluation<T>> {
        let pass = self.forward(params, state, x, mode, rng)?;
        let loss = cce_loss(&pass.probabilities, targets)?;
        let grads = self.backward(params, &pass, targets)?;
        for e in grads.iter() {
            e.tensor.ensure_finite("gradient")?;
        }
        Ok(Evaluation {
            loss,
            grads,
            batch_stats: pass.batch_stats(),
        })
    }

    pub fn loss(
        &self,
        params: &ParamSet<T>,
        state: &NetState<T>,
        x: &Tensor<T>,
        targets: &Tensor<T>,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<T> {
        let pass = self.forward(params, state, x, mode, rng)?;
        cce_loss(&pass.probabilities, targets)
    }

    /// Eval-mode class probabilities, computed in chunks of `chunk` samples.
    pub fn predict(
        &self,
        params: &ParamSet<T>,
        state: &NetState<T>,
        x: &Tensor<T>,
        chunk: usize,
    ) -> Result<Tensor<T>> {
        let total = x.shape()[0];
        let mut out = Vec::with_capacity(total * self.spec.classes);
        let mut rng = Rng::new(0);
        let chunk = chunk.max(1);
        let mut start = 0;
        while start < total {
            let end = (start + chunk).min(total);
            let rows: Vec<usize> = (start..end).collect();
            let pass = self.forward(params, state, &x.select_rows(&rows), Mode::Eval, &mut rng)?;
            out.extend_from_slice(pass.probabilities.data());
            start = end;
        }
        Tensor::new(vec![total, self.spec.classes], out)
    }

    /// Eval-mode accuracy over a labelled set.
    pub fn evaluate_accuracy(
        &self,
        params: &ParamSet<T>,
        state: &NetState<T>,
        images: &Tensor<T>,
        labels: &Tensor<T>,
    ) -> Result<f64> {
        if images.shape()[0] == 0 {
            return Err(Error::EmptyDataset);
        }
        let probs = self.predict(params, state, images, 256)?;
        accuracy(&probs, labels)
    }
}

fn take<T: Real>(t: &mut Tensor<T>) -> Tensor<T> {
    std::mem::replace(t, Tensor::scalar(T::zero()))
}

fn flatten_batch<T: Real>(x: Tensor<T>) -> Result<Tensor<T>> {
    let b = x.shape()[0];
    let n = x.row_len();
    x.reshape(&[b, n])
}

fn apply_mask<T: Real>(mut t: Tensor<T>, mask: Option<&[T]>) -> Tensor<T> {
    if let Some(m) = mask {
        for (v, &k) in t.data_mut().iter_mut().zip(m) {
            *v = *v * k;
        }
    }
    t
}

/// Builds the evaluator, samples initial parameters, and creates fresh
/// normalization state.
pub fn build_architecture<T: Real>(
    spec: &ArchitectureSpec,
    init: InitializerKind,
    rng: &mut Rng,
) -> Result<(ParamSet<T>, Network<T>, NetState<T>)> {
    let net = Network::new(spec)?;
    let params = net.init_params(init, rng)?;
    let state = net.fresh_state();
    Ok((params, net, state))
}
