//! Seeded random streams and weight initializers.
//!
//! Every stream is a ChaCha8 generator keyed by `(seed, stream)`. The seed
//! expands to the 256-bit key through `SeedableRng::seed_from_u64` (PCG32
//! expansion) and the stream id selects the ChaCha nonce. Child streams are
//! derived with SplitMix64 from the parent's stream id and a caller tag, so a
//! child never depends on how many values the parent has already produced.

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream identified by `tag`.
    pub fn split(&self, tag: u64) -> Self {
        Self::with_stream(self.seed, splitmix64(self.stream ^ splitmix64(tag)))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut self.inner);
        idx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitializerKind {
    GlorotUniform,
    LecunNormal,
}

impl InitializerKind {
    pub fn tag(self) -> &'static str {
        match self {
            InitializerKind::GlorotUniform => "GU",
            InitializerKind::LecunNormal => "LN",
        }
    }
}

/// `(fan_in, fan_out)` for a weight shape.
///
/// One axis: both fans equal the extent. Two axes are a dense `[in, out]`
/// matrix. Three or more axes are `[out, in, k...]` convolution kernels whose
/// trailing axes form the receptive field.
pub fn fans(shape: &[usize]) -> Result<(usize, usize)> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::BadShape(shape.to_vec()));
    }
    Ok(match shape.len() {
        1 => (shape[0], shape[0]),
        2 => (shape[0], shape[1]),
        _ => {
            let field: usize = shape[2..].iter().product();
            (shape[1] * field, shape[0] * field)
        }
    })
}

pub fn init_tensor<T: Real>(shape: &[usize], kind: InitializerKind, rng: &mut Rng) -> Result<Tensor<T>> {
    let (fan_in, fan_out) = fans(shape)?;
    let n: usize = shape.iter().product();
    let data: Vec<T> = match kind {
        InitializerKind::GlorotUniform => {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..n).map(|_| T::lit(rng.uniform_range(-a, a))).collect()
        }
        InitializerKind::LecunNormal => {
            let std = (1.0 / fan_in as f64).sqrt();
            (0..n).map(|_| T::lit(std * rng.normal())).collect()
        }
    };
    Tensor::new(shape.to_vec(), data)
}
