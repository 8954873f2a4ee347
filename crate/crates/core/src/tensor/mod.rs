//! Dense row-major tensors.
//!
//! A [`Tensor`] owns a flat `Vec` of scalars plus an explicit shape. Four
//! dimensional activations are laid out NCHW. The element type is generic
//! over [`Scalar`] so the same layer code runs in `f32` for training and in
//! `f64` for finite-difference gradient checks.

mod gemm;
mod scalar;

pub use gemm::{matmul, Transpose};
pub(crate) use gemm::gemm;
pub use scalar::{DType, Scalar};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Extents of an NCHW batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::ZeroExtent(vec![n, c, h, w]));
        }
        Ok(Shape4 { n, c, h, w })
    }

    pub fn hw(&self) -> usize {
        self.h * self.w
    }

    pub fn chw(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn len(&self) -> usize {
        self.n * self.chw()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_vec(&self) -> Vec<usize> {
        vec![self.n, self.c, self.h, self.w]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

/// Builds a tensor holding a copy of `values` in row-major order.
pub fn tensor_from<T: Scalar>(shape: &[usize], values: &[T]) -> Result<Tensor<T>> {
    Tensor::from_vec(shape, values.to_vec())
}

fn check_extents(shape: &[usize]) -> Result<usize> {
    if shape.contains(&0) {
        return Err(Error::ZeroExtent(shape.to_vec()));
    }
    Ok(shape.iter().product())
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let expected = check_extents(shape)?;
        if expected != data.len() {
            return Err(Error::Construction {
                shape: shape.to_vec(),
                expected,
                actual: data.len(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Panics if any extent is zero.
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let len = check_extents(shape).expect("tensor extents must be positive");
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Row-major strides derived from the shape.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.shape.len()];
        for k in (0..self.shape.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * self.shape[k + 1];
        }
        strides
    }

    /// Flat offset of a multi-index, or `None` when it is out of bounds.
    pub fn offset(&self, index: &[usize]) -> Option<usize> {
        if index.len() != self.shape.len() {
            return None;
        }
        let mut off = 0;
        for ((&i, &d), s) in index.iter().zip(&self.shape).zip(self.strides()) {
            if i >= d {
                return None;
            }
            off += i * s;
        }
        Some(off)
    }

    pub fn get(&self, index: &[usize]) -> Option<T> {
        self.offset(index).map(|o| self.data[o])
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Tensor::from_vec(shape, self.data)
    }

    pub fn dims4(&self) -> Result<Shape4> {
        match *self.shape.as_slice() {
            [n, c, h, w] => Shape4::new(n, c, h, w),
            _ => Err(Error::shape(
                "dims4",
                format!("expected a rank-4 NCHW tensor, got shape {:?}", self.shape),
            )),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    /// Errors on the first NaN or infinite element.
    pub fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::InvalidArgument(format!(
                "non-finite value {} at flat index {i}",
                self.data[i]
            ))),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::from_f64(v.to_f64().unwrap()).unwrap()).collect(),
        }
    }

    pub fn reduce(&self, axis: usize, kind: ReduceKind) -> Result<Reduction<T>> {
        reduce(self, axis, kind)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    Argmax,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Reduction<T> {
    Values(Tensor<T>),
    Indices(Vec<usize>),
}

impl<T> Reduction<T> {
    pub fn into_values(self) -> Option<Tensor<T>> {
        match self {
            Reduction::Values(t) => Some(t),
            Reduction::Indices(_) => None,
        }
    }

    pub fn into_indices(self) -> Option<Vec<usize>> {
        match self {
            Reduction::Indices(i) => Some(i),
            Reduction::Values(_) => None,
        }
    }
}

/// Reduces along `axis`. Sums accumulate in index order; argmax keeps the
/// lowest index among equal maxima.
pub fn reduce<T: Scalar>(t: &Tensor<T>, axis: usize, kind: ReduceKind) -> Result<Reduction<T>> {
    let rank = t.rank();
    if axis >= rank {
        return Err(Error::Axis { axis, rank });
    }
    let outer: usize = t.shape[..axis].iter().product();
    let len = t.shape[axis];
    let inner: usize = t.shape[axis + 1..].iter().product();
    let mut out_shape = t.shape.clone();
    out_shape.remove(axis);

    match kind {
        ReduceKind::Sum | ReduceKind::Mean => {
            let mut out = vec![T::zero(); outer * inner];
            for o in 0..outer {
                let base = o * len * inner;
                let dst = &mut out[o * inner..(o + 1) * inner];
                for k in 0..len {
                    let src = &t.data[base + k * inner..base + (k + 1) * inner];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d = *d + s;
                    }
                }
            }
            if kind == ReduceKind::Mean {
                let n = T::from_usize(len).unwrap();
                out.iter_mut().for_each(|v| *v = *v / n);
            }
            Ok(Reduction::Values(Tensor {
                shape: out_shape,
                data: out,
            }))
        }
        ReduceKind::Argmax => {
            let mut out = vec![0usize; outer * inner];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| t.data[o * len * inner + k * inner + i];
                    let mut best = 0;
                    for k in 1..len {
                        if at(k) > at(best) {
                            best = k;
                        }
                    }
                    out[o * inner + i] = best;
                }
            }
            Ok(Reduction::Indices(out))
        }
    }
}

/// Index of the first maximum of a slice.
pub fn argmax<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (k, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = k;
        }
    }
    best
}
