//! Dense row-major tensors and named parameter collections.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Elementwise binary operation applied by [`Tensor::map_binary`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryOp {
    #[inline]
    fn apply<T: Real>(self, a: T, b: T) -> T {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => a / b,
        }
    }
}

/// Dense n-dimensional array stored row-major.
///
/// `data.len()` always equals the product of `shape`. Images use `[C, H, W]`
/// order and batches prepend a sample axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::BadShape(shape));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::LengthMismatch {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn zeros_like(other: &Self) -> Self {
        Self::zeros(&other.shape)
    }

    pub fn ones_like(other: &Self) -> Self {
        Self::ones(&other.shape)
    }

    pub fn from_vec(data: Vec<T>) -> Self {
        Self {
            shape: vec![data.len().max(1)],
            data: if data.is_empty() { vec![T::zero()] } else { data },
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.contains(&0) {
            return Err(Error::ShapeMismatch {
                expected: self.shape,
                actual: shape.to_vec(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Applies `op` index by index; the result must be finite everywhere.
    pub fn map_binary(&self, other: &Self, op: BinaryOp) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                expected: self.shape.clone(),
                actual: other.shape.clone(),
            });
        }
        let data: Vec<T> = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| op.apply(a, b))
            .collect();
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("tensor elementwise op"));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.map_binary(other, BinaryOp::Add)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.map_binary(other, BinaryOp::Sub)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.map_binary(other, BinaryOp::Mul)
    }

    pub fn div(&self, other: &Self) -> Result<Self> {
        self.map_binary(other, BinaryOp::Div)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn norm(&self) -> T {
        norm2(&self.data)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn ensure_finite(&self, what: &'static str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what))
        }
    }

    /// Size of one slice along the leading axis.
    pub fn row_len(&self) -> usize {
        self.data.len() / self.shape[0]
    }

    pub fn row(&self, i: usize) -> &[T] {
        let n = self.row_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let n = self.row_len();
        &mut self.data[i * n..(i + 1) * n]
    }

    /// Gathers rows along the leading axis in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let n = self.row_len();
        let mut data = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        let mut shape = self.shape.clone();
        shape[0] = rows.len();
        Self { shape, data }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| U::lit(x.as_f64())).collect(),
        }
    }
}

pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub(crate) fn norm2<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor<T> {
    pub name: String,
    pub tensor: Tensor<T>,
}

/// Ordered collection of named parameter tensors.
///
/// The flattened view concatenates tensors in insertion order, which is the
/// layout full-batch methods and the optimizer slots share.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet<T> {
    entries: Vec<NamedTensor<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<T>) {
        let name = name.into();
        debug_assert!(self.get(&name).is_none(), "duplicate parameter {name}");
        self.entries.push(NamedTensor { name, tensor });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &NamedTensor<T>> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut NamedTensor<T>> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| &e.tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries
            .iter_mut()
            .find(|e| e.name == name)
            .map(|e| &mut e.tensor)
    }

    pub fn at(&self, i: usize) -> &Tensor<T> {
        &self.entries[i].tensor
    }

    pub fn at_mut(&mut self, i: usize) -> &mut Tensor<T> {
        &mut self.entries[i].tensor
    }

    /// Total number of scalars across all tensors.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|e| NamedTensor {
                    name: e.name.clone(),
                    tensor: Tensor::zeros_like(&e.tensor),
                })
                .collect(),
        }
    }

    pub fn flatten(&self) -> Tensor<T> {
        let mut flat = Vec::with_capacity(self.numel());
        for e in &self.entries {
            flat.extend_from_slice(e.tensor.data());
        }
        Tensor::from_vec(flat)
    }

    pub fn flatten_into(&self, out: &mut Vec<T>) {
        out.clear();
        for e in &self.entries {
            out.extend_from_slice(e.tensor.data());
        }
    }

    /// Rebuilds a parameter set with the template's names and shapes from a
    /// flat buffer.
    pub fn unflatten(flat: &[T], template: &Self) -> Result<Self> {
        let mut out = template.clone();
        out.assign_flat(flat)?;
        Ok(out)
    }

    /// Overwrites every tensor from a flat buffer laid out like [`Self::flatten`].
    pub fn assign_flat(&mut self, flat: &[T]) -> Result<()> {
        let expected = self.numel();
        if flat.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: flat.len(),
            });
        }
        let mut offset = 0;
        for e in &mut self.entries {
            let n = e.tensor.len();
            e.tensor.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}

pub fn flatten_params<T: Real>(params: &ParamSet<T>) -> Tensor<T> {
    params.flatten()
}

pub fn unflatten_params<T: Real>(flat: &Tensor<T>, template: &ParamSet<T>) -> Result<ParamSet<T>> {
    ParamSet::unflatten(flat.data(), template)
}
