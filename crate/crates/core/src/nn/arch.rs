//! Architecture descriptions for the synthetic network family.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::conv::conv_out_extent;
use crate::nn::ops::{Activation, PoolMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    /// Convolution, activation, pooling, batch normalization.
    Cdb,
    /// Convolution, activation, batch normalization.
    Cb,
    /// Dense layer with activation.
    Fcb,
    /// Dense layer followed by softmax.
    Classify,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Baseline,
    Wide,
    Deep,
    DeepWide,
    Custom,
}

fn default_activation() -> Activation {
    Activation::Relu
}
fn default_pool_size() -> usize {
    2
}
fn default_kernel() -> usize {
    3
}
fn default_stride() -> usize {
    1
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub kind: BlockKind,
    /// Output channels for convolutional blocks, units for dense blocks,
    /// class count for the classifier.
    pub channels: usize,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default)]
    pub pool: Option<PoolMode>,
    #[serde(default = "default_pool_size")]
    pub pool_size: usize,
    #[serde(default = "default_kernel")]
    pub kernel: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default = "default_true")]
    pub batchnorm: bool,
    #[serde(default)]
    pub dropout: f64,
}

impl LayerSpec {
    pub fn is_conv(&self) -> bool {
        matches!(self.kind, BlockKind::Cdb | BlockKind::Cb)
    }
}

/// Knobs for [`ArchitectureSpec::baseline`].
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineParams {
    pub input: [usize; 3],
    pub classes: usize,
    pub channels: Vec<usize>,
    pub fcb_units: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pool: PoolMode,
    pub pool_size: usize,
    pub activation: Activation,
    pub dropout: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureSpec {
    pub name: String,
    pub variant: Variant,
    /// `[channels, height, width]`
    pub input: [usize; 3],
    pub classes: usize,
    pub layers: Vec<LayerSpec>,
}

impl ArchitectureSpec {
    /// CDB cascade, one FCB, and the classifier.
    pub fn baseline(p: BaselineParams) -> Self {
        let mut layers: Vec<LayerSpec> = p
            .channels
            .iter()
            .map(|&d| LayerSpec {
                kind: BlockKind::Cdb,
                channels: d,
                activation: p.activation,
                pool: Some(p.pool),
                pool_size: p.pool_size,
                kernel: p.kernel,
                stride: p.stride,
                batchnorm: true,
                dropout: 0.0,
            })
            .collect();
        layers.push(LayerSpec {
            kind: BlockKind::Fcb,
            channels: p.fcb_units,
            activation: p.activation,
            pool: None,
            pool_size: p.pool_size,
            kernel: p.kernel,
            stride: 1,
            batchnorm: false,
            dropout: p.dropout,
        });
        layers.push(LayerSpec {
            kind: BlockKind::Classify,
            channels: p.classes,
            activation: p.activation,
            pool: None,
            pool_size: p.pool_size,
            kernel: p.kernel,
            stride: 1,
            batchnorm: false,
            dropout: 0.0,
        });
        Self {
            name: "baseline".into(),
            variant: Variant::Baseline,
            input: p.input,
            classes: p.classes,
            layers,
        }
    }

    /// Desk-scale baseline: three CDBs with 8/16/32 channels on 3x32x32
    /// inputs, a 64-unit FCB, and 8 classes.
    pub fn baseline_mini() -> Self {
        let mut spec = Self::baseline(BaselineParams {
            input: [3, 32, 32],
            classes: 8,
            channels: vec![8, 16, 32],
            fcb_units: 64,
            kernel: 3,
            stride: 1,
            pool: PoolMode::Max,
            pool_size: 2,
            activation: Activation::Relu,
            dropout: 0.0,
        });
        spec.name = "baseline-mini".into();
        spec
    }

    /// Five CDBs (16..256 channels), a 512-unit FCB.
    pub fn full_baseline(height: usize, width: usize, classes: usize) -> Self {
        Self::baseline(BaselineParams {
            input: [3, height, width],
            classes,
            channels: vec![16, 32, 64, 128, 256],
            fcb_units: 512,
            kernel: 3,
            stride: 1,
            pool: PoolMode::Max,
            pool_size: 2,
            activation: Activation::Relu,
            dropout: 0.0,
        })
    }

    /// Doubles the output channels of every convolution.
    pub fn wide(&self) -> Self {
        let mut out = self.clone();
        for l in out.layers.iter_mut().filter(|l| l.is_conv()) {
            l.channels *= 2;
        }
        out.variant = match self.variant {
            Variant::Deep | Variant::DeepWide => Variant::DeepWide,
            Variant::Custom => Variant::Custom,
            _ => Variant::Wide,
        };
        out.name = format!("{}+wide", self.name);
        out
    }

    /// Stacks a CB with the same channels after every CDB.
    pub fn deep(&self) -> Self {
        let mut out = self.clone();
        out.layers.clear();
        for l in &self.layers {
            out.layers.push(l.clone());
            if l.kind == BlockKind::Cdb {
                out.layers.push(LayerSpec {
                    kind: BlockKind::Cb,
                    pool: None,
                    stride: 1,
                    dropout: 0.0,
                    ..l.clone()
                });
            }
        }
        out.variant = match self.variant {
            Variant::Wide | Variant::DeepWide => Variant::DeepWide,
            Variant::Custom => Variant::Custom,
            _ => Variant::Deep,
        };
        out.name = format!("{}+deep", self.name);
        out
    }

    pub fn deep_wide(&self) -> Self {
        self.deep().wide()
    }

    /// SiLU activations, mean pooling, and no dropout anywhere.
    pub fn smooth(&self) -> Self {
        let mut out = self.clone();
        for l in &mut out.layers {
            l.activation = Activation::Silu;
            if l.pool.is_some() {
                l.pool = Some(PoolMode::Mean);
            }
            l.dropout = 0.0;
        }
        out
    }

    pub fn is_smooth(&self) -> bool {
        self.layers.iter().all(|l| {
            l.dropout == 0.0
                && (l.kind == BlockKind::Classify || l.activation == Activation::Silu)
                && l.pool.is_none_or(|p| p == PoolMode::Mean)
        })
    }

    pub fn conv_channels(&self) -> Vec<usize> {
        self.layers
            .iter()
            .filter(|l| l.is_conv())
            .map(|l| l.channels)
            .collect()
    }

    pub fn count(&self, kind: BlockKind) -> usize {
        self.layers.iter().filter(|l| l.kind == kind).count()
    }

    /// `[C, H, W]` after every convolutional block, checking every block keeps
    /// a positive spatial extent.
    pub fn derived_shapes(&self) -> Result<Vec<[usize; 3]>> {
        let [_, mut h, mut w] = self.input;
        let mut shapes = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            if !l.is_conv() {
                continue;
            }
            let oh = conv_out_extent(h, l.kernel, l.stride);
            let ow = conv_out_extent(w, l.kernel, l.stride);
            let (mut oh, mut ow) = match (oh, ow) {
                (Some(a), Some(b)) => (a, b),
                _ => return Err(Error::ShapeUnderflow { block: i }),
            };
            if l.kind == BlockKind::Cdb {
                if l.pool_size == 0 {
                    return Err(Error::BadPoolSize(0));
                }
                oh /= l.pool_size;
                ow /= l.pool_size;
                if oh == 0 || ow == 0 {
                    return Err(Error::ShapeUnderflow { block: i });
                }
            }
            let c = l.channels;
            h = oh;
            w = ow;
            shapes.push([c, h, w]);
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| Err(Error::invalid("architecture", reason.to_string()));
        if self.input.contains(&0) {
            return Err(Error::BadShape(self.input.to_vec()));
        }
        if self.classes < 2 {
            return bad("at least two classes are required");
        }
        match self.layers.last() {
            Some(l) if l.kind == BlockKind::Classify && l.channels == self.classes => {}
            _ => return bad("the last block must be a classifier with `classes` outputs"),
        }
        let mut seen_dense = false;
        for (i, l) in self.layers.iter().enumerate() {
            if l.channels == 0 {
                return bad("blocks need at least one output channel");
            }
            if !(0.0..1.0).contains(&l.dropout) {
                return Err(Error::BadRate(l.dropout));
            }
            match l.kind {
                BlockKind::Cdb if l.pool.is_none() => return bad("CDB blocks must pool"),
                BlockKind::Cb if l.pool.is_some() => return bad("CB blocks do not pool"),
                BlockKind::Cdb | BlockKind::Cb if seen_dense => {
                    return bad("convolutional blocks must precede dense blocks")
                }
                BlockKind::Classify if i + 1 != self.layers.len() => {
                    return bad("the classifier must be the last block")
                }
                BlockKind::Fcb | BlockKind::Classify => seen_dense = true,
                _ => {}
            }
            if l.is_conv() && (l.stride == 0 || l.kernel == 0) {
                return bad("kernel and stride must be positive");
            }
        }
        self.derived_shapes()?;
        Ok(())
    }
}
