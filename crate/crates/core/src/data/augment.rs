use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Random per-sample transformations.
///
/// Applied in order: flips, quarter-turn rotation, contrast about the
/// per-channel mean, brightness shift, Gaussian noise, clamp to `[0, 1]`.
/// Ranges are `[lo, hi]` and sampled uniformly; equal ends force a value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationSpec {
    pub flip_horizontal: f64,
    pub flip_vertical: f64,
    /// Rotate by a uniformly drawn number of quarter turns (square images).
    pub rotate_quarter: bool,
    pub brightness: [f64; 2],
    pub contrast: [f64; 2],
    pub noise_std: f64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self {
            flip_horizontal: 0.0,
            flip_vertical: 0.0,
            rotate_quarter: false,
            brightness: [0.0, 0.0],
            contrast: [1.0, 1.0],
            noise_std: 0.0,
        }
    }
}

impl AugmentationSpec {
    /// Moderate settings used for augmented runs.
    pub fn standard() -> Self {
        Self {
            flip_horizontal: 0.5,
            flip_vertical: 0.5,
            rotate_quarter: true,
            brightness: [-0.1, 0.1],
            contrast: [0.8, 1.2],
            noise_std: 0.02,
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |k: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::invalid(k, format!("{p} is not a probability")))
            }
        };
        prob("flip_horizontal", self.flip_horizontal)?;
        prob("flip_vertical", self.flip_vertical)?;
        let [b0, b1] = self.brightness;
        if !(-1.0 <= b0 && b0 <= b1 && b1 <= 1.0) {
            return Err(Error::invalid("brightness", "needs -1 <= lo <= hi <= 1"));
        }
        let [c0, c1] = self.contrast;
        if !(0.0 <= c0 && c0 <= c1 && c1 <= 4.0) {
            return Err(Error::invalid("contrast", "needs 0 <= lo <= hi <= 4"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std <= 1.0) {
            return Err(Error::invalid("noise_std", "needs 0 <= noise_std <= 1"));
        }
        Ok(())
    }
}

fn draw(rng: &mut Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.uniform_range(lo, hi)
    }
}

/// Transforms every sample of a `(B, C, H, W)` batch independently.
pub fn augment_batch(batch: &Tensor<f64>, spec: &AugmentationSpec, rng: &mut Rng) -> Result<Tensor<f64>> {
    spec.validate()?;
    if spec.is_identity() {
        return Ok(batch.clone());
    }
    let shape = batch.shape();
    if shape.len() != 4 {
        return Err(Error::BadShape(shape.to_vec()));
    }
    let (c, h, w) = (shape[1], shape[2], shape[3]);
    let mut out = batch.clone();
    let mut scratch = vec![0.0; h * w];
    for b in 0..shape[0] {
        let sample = out.row_mut(b);
        let hflip = spec.flip_horizontal > 0.0 && rng.bernoulli(spec.flip_horizontal);
        let vflip = spec.flip_vertical > 0.0 && rng.bernoulli(spec.flip_vertical);
        let turns = if spec.rotate_quarter {
            if h == w {
                rng.below(4)
            } else {
                2 * rng.below(2)
            }
        } else {
            0
        };
        let contrast = draw(rng, spec.contrast);
        let brightness = draw(rng, spec.brightness);
        for plane in sample.chunks_exact_mut(h * w) {
            scratch.copy_from_slice(plane);
            for y in 0..h {
                for x in 0..w {
                    let (mut sy, mut sx) = (y, x);
                    if hflip {
                        sx = w - 1 - sx;
                    }
                    if vflip {
                        sy = h - 1 - sy;
                    }
                    // the output at (y, x) reads the source rotated back by `turns`
                    let (ry, rx) = match turns {
                        1 => (sx, w - 1 - sy),
                        2 => (h - 1 - sy, w - 1 - sx),
                        3 => (h - 1 - sx, sy),
                        _ => (sy, sx),
                    };
                    plane[y * w + x] = scratch[ry * w + rx];
                }
            }
            if contrast != 1.0 {
                let mean = plane.iter().sum::<f64>() / plane.len() as f64;
                plane.iter_mut().for_each(|v| *v = mean + contrast * (*v - mean));
            }
            if brightness != 0.0 {
                plane.iter_mut().for_each(|v| *v += brightness);
            }
        }
        if spec.noise_std > 0.0 {
            for v in sample.iter_mut() {
                *v += spec.noise_std * rng.normal();
            }
        }
        debug_assert_eq!(sample.len(), c * h * w);
        sample.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(b: usize, h: usize, w: usize) -> Tensor<f64> {
        let n = b * 3 * h * w;
        Tensor::new(vec![b, 3, h, w], (0..n).map(|i| i as f64 / n as f64).collect()).unwrap()
    }

    #[test]
    fn identity_spec() {
        let x = ramp(2, 4, 4);
        assert_eq!(augment_batch(&x, &AugmentationSpec::default(), &mut Rng::new(1)).unwrap(), x);
    }

    #[test]
    fn double_flip_is_identity() {
        let spec = AugmentationSpec {
            flip_horizontal: 1.0,
            ..Default::default()
        };
        let x = ramp(2, 3, 5);
        let once = augment_batch(&x, &spec, &mut Rng::new(1)).unwrap();
        assert_ne!(once, x);
        assert_eq!(once.data()[0], x.data()[4]);
        let twice = augment_batch(&once, &spec, &mut Rng::new(2)).unwrap();
        assert_eq!(twice, x);
    }

    #[test]
    fn brightness_shift() {
        let spec = AugmentationSpec {
            brightness: [0.1, 0.1],
            ..Default::default()
        };
        let x = Tensor::full(&[1, 3, 4, 4], 0.5);
        let y = augment_batch(&x, &spec, &mut Rng::new(1)).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.6).abs() < 1e-15));
    }

    #[test]
    fn rotation_permutes_pixels() {
        let x = ramp(1, 4, 4);
        let spec = AugmentationSpec {
            rotate_quarter: true,
            ..Default::default()
        };
        let mut rng = Rng::new(5);
        for _ in 0..8 {
            let y = augment_batch(&x, &spec, &mut rng).unwrap();
            let mut a = x.data().to_vec();
            let mut b = y.data().to_vec();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn standard_spec_keeps_range_and_is_deterministic() {
        let x = ramp(3, 8, 8);
        let spec = AugmentationSpec::standard();
        let a = augment_batch(&x, &spec, &mut Rng::new(9)).unwrap();
        let b = augment_batch(&x, &spec, &mut Rng::new(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), x.shape());
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
