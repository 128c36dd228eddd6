//! Spectral norm of stacked convolution operators via power iteration.

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{conv2d, conv2d_adjoint, Padding, Rng, Tensor};

/// A composition of convolution layers acting as one linear operator
/// (no bias, no activation).
#[derive(Debug, Clone)]
pub struct ConvChain<T: Scalar> {
    /// Per-layer kernels `[c_out, c_in, k, k]`; layer i's `c_in` must match
    /// layer i-1's `c_out`.
    pub kernels: Vec<Tensor<T>>,
    pub padding: Padding,
    pub stride: usize,
}

impl<T: Scalar> ConvChain<T> {
    pub fn new(kernels: Vec<Tensor<T>>, padding: Padding) -> Self {
        ConvChain {
            kernels,
            padding,
            stride: 1,
        }
    }

    pub fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut v = x.clone();
        for k in &self.kernels {
            v = conv2d(&v, k, self.padding, self.stride)?;
        }
        Ok(v)
    }

    pub fn adjoint(&self, y: &Tensor<T>, in_h: usize, in_w: usize) -> Result<Tensor<T>> {
        // spatial sizes per layer going forward
        let mut sizes = vec![(in_h, in_w)];
        {
            let mut x = Tensor::<T>::zeros(&[self.kernels[0].shape()[1], in_h, in_w]);
            for k in &self.kernels {
                x = conv2d(&x, k, self.padding, self.stride)?;
                sizes.push((x.shape()[1], x.shape()[2]));
            }
        }
        let mut v = y.clone();
        for (i, k) in self.kernels.iter().enumerate().rev() {
            let (h, w) = sizes[i];
            v = conv2d_adjoint(&v, k, self.padding, self.stride, h, w)?;
        }
        Ok(v)
    }
}

/// Largest singular value of the stacked operator, estimated by power
/// iteration on `W^T W`. The estimate carries no gradient; callers treat
/// it as a constant when normalizing kernels.
///
/// Returns the estimate together with the final iteration vector so that
/// training loops can warm-start the next call.
pub fn spectral_norm<T: Scalar>(
    chain: &ConvChain<T>,
    input_hw: (usize, usize),
    iterations: usize,
    rng: &mut Rng,
    warm_start: Option<&Tensor<T>>,
) -> Result<(T, Tensor<T>)> {
    assert!(iterations >= 1, "spectral_norm: iterations must be >= 1");
    let c_in = chain.kernels[0].shape()[1];
    let shape = [c_in, input_hw.0, input_hw.1];
    let mut v = match warm_start {
        Some(w) if w.shape() == shape => w.clone(),
        _ => crate::tensor::sample_gaussian(rng, &shape, 1.0),
    };
    let n0 = v.norm();
    if n0 == T::zero() {
        v = Tensor::ones(&shape);
    }
    let nv = v.norm();
    v = v.scale(T::one() / nv);

    let mut sigma = T::zero();
    for _ in 0..iterations {
        let w = chain.apply(&v)?;
        sigma = w.norm();
        if sigma == T::zero() {
            return Ok((T::zero(), v));
        }
        let back = chain.adjoint(&w, input_hw.0, input_hw.1)?;
        let nb = back.norm();
        if nb == T::zero() {
            return Ok((T::zero(), v));
        }
        v = back.scale(T::one() / nb);
    }
    Ok((sigma, v))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_operator_has_unit_norm() {
        let k = Tensor::new(vec![1, 1, 1, 1], vec![1.0f64]).unwrap();
        let chain = ConvChain::new(vec![k], Padding::Zero(0));
        let mut rng = Rng::new(1);
        let (s, _) = spectral_norm(&chain, (8, 8), 50, &mut rng, None).unwrap();
        assert!((s - 1.0).abs() < 1e-6);
    }

    #[test]
    fn scalar_kernel_norm_is_its_magnitude() {
        let k = Tensor::new(vec![1, 1, 1, 1], vec![3.0f64]).unwrap();
        let chain = ConvChain::new(vec![k], Padding::Zero(0));
        let mut rng = Rng::new(2);
        let (s, _) = spectral_norm(&chain, (6, 6), 50, &mut rng, None).unwrap();
        assert!((s - 3.0).abs() < 1e-6);
    }

    #[test]
    fn zero_operator_returns_zero() {
        let k = Tensor::<f64>::zeros(&[2, 1, 3, 3]);
        let chain = ConvChain::new(vec![k], Padding::Zero(1));
        let mut rng = Rng::new(3);
        let (s, _) = spectral_norm(&chain, (8, 8), 10, &mut rng, None).unwrap();
        assert_eq!(s, 0.0);
    }
}
