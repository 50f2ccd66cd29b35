//! Dense tensor containers.
//!
//! [`Tensor`] holds parameters (any rank, row-major). [`Tensor4`] is the
//! batch/channel/height/width layout used by the reference oracles, and
//! [`FeatureMap`] is the channels-last layout the training backend runs on.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major tensor of arbitrary rank.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} needs {numel} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Raw little-endian byte serialization of the elements.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        T::write_le(&self.data, &mut out);
        out
    }

    /// SHA-256 of the little-endian element bytes, hex encoded.
    pub fn digest(&self) -> String {
        digest_values(&self.data)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
        }
    }
}

/// SHA-256 over the little-endian serialization of `values`.
pub fn digest_values<T: Scalar>(values: &[T]) -> String {
    let mut bytes = Vec::new();
    T::write_le(values, &mut bytes);
    hex::encode(Sha256::digest(&bytes))
}

/// Shape of an `N × C × H × W` tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }
}

/// Batch-major, channels-first tensor (`N × C × H × W`).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T> {
    pub shape: Shape4,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn new(shape: Shape4, data: Vec<T>) -> Result<Self> {
        if shape.n == 0 || shape.c == 0 || shape.h == 0 || shape.w == 0 {
            return Err(Error::ShapeMismatch(format!(
                "tensor dimensions must be positive, got {shape:?}"
            )));
        }
        if shape.numel() != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} needs {} elements, got {}",
                shape.numel(),
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape4) -> Self {
        Self {
            shape,
            data: vec![T::zero(); shape.numel()],
        }
    }

    pub fn from_fn(shape: Shape4, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Self { shape, data }
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + y) * self.shape.w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.index(n, c, y, x)]
    }

    pub fn to_feature_map(&self) -> FeatureMap<T> {
        let s = self.shape;
        let mut out = FeatureMap::zeros(s.n, s.h, s.w, s.c);
        for n in 0..s.n {
            for c in 0..s.c {
                for y in 0..s.h {
                    for x in 0..s.w {
                        let v = self.at(n, c, y, x);
                        let idx = out.index(n, y, x, c);
                        out.data[idx] = v;
                    }
                }
            }
        }
        out
    }

    pub fn cast<U: Scalar>(&self) -> Tensor4<U> {
        Tensor4 {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
        }
    }

    /// Largest absolute elementwise difference, computed in `f64`.
    pub fn max_abs_diff<U: Scalar>(&self, other: &Tensor4<U>) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff on different shapes");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.to_f64_lossy() - b.to_f64_lossy()).abs())
            .fold(0.0, f64::max)
    }
}

/// Channels-last activation tensor (`N × H × W × C`) used by the backend.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn zeros(n: usize, h: usize, w: usize, c: usize) -> Self {
        Self {
            n,
            h,
            w,
            c,
            data: vec![T::zero(); n * h * w * c],
        }
    }

    pub fn from_vec(n: usize, h: usize, w: usize, c: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), n * h * w * c, "feature map size");
        Self { n, h, w, c, data }
    }

    /// Number of spatial positions across the batch.
    #[inline]
    pub fn rows(&self) -> usize {
        self.n * self.h * self.w
    }

    #[inline]
    pub fn index(&self, n: usize, y: usize, x: usize, c: usize) -> usize {
        ((n * self.h + y) * self.w + x) * self.c + c
    }

    pub fn to_tensor4(&self) -> Tensor4<T> {
        Tensor4::from_fn(Shape4::new(self.n, self.c, self.h, self.w), |n, c, y, x| {
            self.data[self.index(n, y, x, c)]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_conversion_roundtrips() {
        let t = Tensor4::from_fn(Shape4::new(2, 3, 4, 5), |n, c, y, x| {
            (n * 1000 + c * 100 + y * 10 + x) as f64
        });
        let fm = t.to_feature_map();
        assert_eq!(fm.data[fm.index(1, 2, 3, 1)], 1123.0);
        assert_eq!(fm.to_tensor4(), t);
    }

    #[test]
    fn digest_depends_on_bits() {
        let a = Tensor::new(vec![2], vec![0.0f32, 1.0]).unwrap();
        let b = Tensor::new(vec![2], vec![-0.0f32, 1.0]).unwrap();
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest(), a.clone().digest());
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::new(vec![2, 2], vec![0.0f32; 3]).is_err());
        assert!(Tensor4::<f32>::new(Shape4::new(1, 0, 1, 1), vec![]).is_err());
    }
}
