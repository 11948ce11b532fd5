//! Deterministic texture classification sets.
//!
//! Even classes are stripes, odd classes are checkerboards. Class `c` uses
//! orientation `π k / ceil(N/2)` with `k = c / 2`, a period of 6 or 8
//! pixels, and a per-class color tint. Each sample draws its own phase pair;
//! Gaussian noise is added last and the result clamped to `[0, 1]`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::{Dataset, Split};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub per_class: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    /// Standard deviation of the additive pixel noise.
    pub noise: f64,
    /// Fraction of each class that goes to the training split.
    pub train_fraction: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 8,
            per_class: 64,
            height: 32,
            width: 32,
            seed: 1699806,
            noise: 0.05,
            train_fraction: 0.8,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.per_class == 0 || self.height < 8 || self.width < 8 {
            return Err(Error::BadShape(vec![self.classes, self.per_class, self.height, self.width]));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::invalid("noise", "must be a nonnegative number"));
        }
        Ok(())
    }

    /// Manifest JSON describing the set.
    pub fn manifest(&self) -> String {
        serde_json::to_string(self).expect("plain struct")
    }
}

/// Per-sample texture parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextureParams {
    pub class: usize,
    /// Phases in radians along and across the texture direction.
    pub phase: [f64; 2],
}

/// Sample parameters in dataset order (class-major).
pub fn texture_params(spec: &SyntheticSpec) -> Vec<TextureParams> {
    let mut rng = Rng::with_stream(spec.seed, 0x7e47);
    let mut out = Vec::with_capacity(spec.classes * spec.per_class);
    for class in 0..spec.classes {
        for _ in 0..spec.per_class {
            let phase = [rng.uniform_range(0.0, 2.0 * PI), rng.uniform_range(0.0, 2.0 * PI)];
            out.push(TextureParams { class, phase });
        }
    }
    out
}

/// Noise-free rendering of one sample into `out` (`3 * H * W` values).
pub fn render_texture(spec: &SyntheticSpec, p: &TextureParams, out: &mut [f64]) {
    let (h, w) = (spec.height, spec.width);
    let half = spec.classes.div_ceil(2);
    let k = p.class / 2;
    let theta = PI * k as f64 / half as f64;
    let period = if k.is_multiple_of(2) { 6.0 } else { 8.0 };
    let freq = 2.0 * PI / period;
    let (ct, st) = (theta.cos(), theta.sin());
    let hue = 2.0 * PI * p.class as f64 / spec.classes as f64;
    let tint = [
        0.7 + 0.3 * hue.cos(),
        0.7 + 0.3 * (hue + 2.0 * PI / 3.0).cos(),
        0.7 + 0.3 * (hue + 4.0 * PI / 3.0).cos(),
    ];
    let checker = p.class % 2 == 1;
    for y in 0..h {
        for x in 0..w {
            let (xf, yf) = (x as f64, y as f64);
            let u = freq * (xf * ct + yf * st) + p.phase[0];
            let s = if checker {
                let v = freq * (-xf * st + yf * ct) + p.phase[1];
                u.sin() * v.sin()
            } else {
                u.sin()
            };
            for (ch, t) in tint.iter().enumerate() {
                out[(ch * h + y) * w + x] = 0.5 + 0.4 * t * s;
            }
        }
    }
}

/// Full labelled set, `classes * per_class` samples in class-major order.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let params = texture_params(spec);
    let plane = 3 * spec.height * spec.width;
    let mut data = vec![0.0; params.len() * plane];
    let mut noise = Rng::with_stream(spec.seed, 0x0015e);
    for (i, p) in params.iter().enumerate() {
        let out = &mut data[i * plane..(i + 1) * plane];
        render_texture(spec, p, out);
        if spec.noise > 0.0 {
            for v in out.iter_mut() {
                *v += spec.noise * noise.normal();
            }
        }
        for v in out.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
    }
    let images = Tensor::new(vec![params.len(), 3, spec.height, spec.width], data)?;
    let classes: Vec<usize> = params.iter().map(|p| p.class).collect();
    let labels = Dataset::one_hot(&classes, spec.classes)?;
    Dataset::new(images, labels, Split::Full, format!("synthetic:{}", spec.manifest()))
}
