//! Dense tensors, deterministic RNG, convolutions, and image metrics.
//!
//! Tensors are immutable values once returned from an operation; every
//! reduction runs in sequential, index-ascending order so results are
//! bitwise reproducible across runs and thread counts.

mod conv;
mod io;
mod metrics;
mod rng;

pub use conv::{conv2d, conv2d_adjoint, conv2d_kernel_grad, conv_out_len, Padding};
pub use io::{read_png_gray, read_raw_image, write_png_gray, write_raw_image};
pub use metrics::psnr;
pub use rng::{sample_gaussian, Rng, RNG_ALGORITHM};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major n-dimensional array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch {
                context: "Tensor::new",
                expected: vec![n],
                got: vec![data.len()],
                axis: 0,
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn ones(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::one(); n],
        }
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn from_vec(data: Vec<T>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Reinterpret with a new shape of identical element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::ShapeMismatch {
                context: "reshape",
                expected: shape.to_vec(),
                got: self.shape.clone(),
                axis: 0,
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    fn check_same_shape(&self, other: &Self, context: &'static str) -> Result<()> {
        if self.shape != other.shape {
            let axis = self
                .shape
                .iter()
                .zip(other.shape.iter())
                .position(|(a, b)| a != b)
                .unwrap_or(self.shape.len().min(other.shape.len()));
            return Err(Error::ShapeMismatch {
                context,
                expected: self.shape.clone(),
                got: other.shape.clone(),
                axis,
            });
        }
        Ok(())
    }

    /// Inner product, accumulated in index-ascending order.
    pub fn dot(&self, other: &Self) -> Result<T> {
        self.check_same_shape(other, "dot")?;
        let mut acc = T::zero();
        for i in 0..self.data.len() {
            acc += self.data[i] * other.data[i];
        }
        Ok(acc)
    }

    /// `self + a * x`, elementwise.
    pub fn axpy(&self, a: T, x: &Self) -> Result<Self> {
        self.check_same_shape(x, "axpy")?;
        let data = self
            .data
            .iter()
            .zip(x.data.iter())
            .map(|(&s, &v)| s + a * v)
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "add")?;
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| a + b)
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "sub")?;
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| a - b)
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "mul")?;
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| a * b)
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn scale(&self, a: T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| a * v).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Sum of all entries, index-ascending.
    pub fn sum(&self) -> T {
        let mut acc = T::zero();
        for &v in &self.data {
            acc += v;
        }
        acc
    }

    /// Largest entry; `None` on empty tensors.
    pub fn max(&self) -> Option<T> {
        self.data
            .iter()
            .copied()
            .fold(None, |m, v| Some(m.map_or(v, |m: T| m.max(v))))
    }

    pub fn norm_sq(&self) -> T {
        let mut acc = T::zero();
        for &v in &self.data {
            acc += v * v;
        }
        acc
    }

    pub fn norm(&self) -> T {
        self.norm_sq().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Convert elements to another precision.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

/// A 2-d grayscale image with pixels nominally in `[0, 1]`.
///
/// Values may leave `[0, 1]` during optimization; the range contract is
/// per-dataset and enforced only at file I/O boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    tensor: Tensor<T>,
}

impl<T: Scalar> Image<T> {
    pub fn new(tensor: Tensor<T>) -> Result<Self> {
        if tensor.shape().len() != 2 {
            return Err(Error::ShapeMismatch {
                context: "Image::new",
                expected: vec![2],
                got: vec![tensor.shape().len()],
                axis: 0,
            });
        }
        Ok(Image { tensor })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Image {
            tensor: Tensor {
                shape: vec![height, width],
                data,
            },
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Image {
            tensor: Tensor::zeros(&[height, width]),
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.tensor.shape()[0]
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.tensor.shape()[1]
    }

    #[inline]
    pub fn tensor(&self) -> &Tensor<T> {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.tensor
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.tensor.data[r * self.width() + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        let w = self.width();
        self.tensor.data[r * w + c] = v;
    }

    pub fn cast<U: Scalar>(&self) -> Image<U> {
        Image {
            tensor: self.tensor.cast(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_hand_value() {
        let a = Tensor::from_vec(vec![1.0f64, 2.0]);
        let b = Tensor::from_vec(vec![3.0f64, 4.0]);
        assert_eq!(a.dot(&b).unwrap(), 11.0);
    }

    #[test]
    fn sum_of_zeros_is_zero() {
        let z = Tensor::<f64>::zeros(&[7, 3]);
        assert_eq!(z.sum(), 0.0);
    }

    #[test]
    fn axpy_matches_scalar_loop() {
        let mut r = Rng::new(7);
        let x = sample_gaussian::<f64>(&mut r, &[23], 1.0);
        let y = sample_gaussian::<f64>(&mut r, &[23], 1.0);
        let got = y.axpy(2.0, &x).unwrap();
        for i in 0..23 {
            assert_eq!(got.data()[i], y.data()[i] + 2.0 * x.data()[i]);
        }
    }

    #[test]
    fn shape_mismatch_names_axis() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[2, 4]);
        match a.add(&b) {
            Err(Error::ShapeMismatch { axis, .. }) => assert_eq!(axis, 1),
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn image_must_be_two_dimensional() {
        assert!(Image::new(Tensor::<f64>::zeros(&[4])).is_err());
        assert!(Image::new(Tensor::<f64>::zeros(&[2, 2])).is_ok());
    }
}
