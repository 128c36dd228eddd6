//! Image quality metrics.

use super::Image;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Peak signal-to-noise ratio in decibels:
/// `10 * log10(n_pix * r^2 / ||estimate - truth||^2)`.
///
/// Returns `+inf` when the images are exactly equal.
pub fn psnr<T: Scalar>(estimate: &Image<T>, truth: &Image<T>, range: T) -> Result<T> {
    if range <= T::zero() {
        return Err(Error::Parameter("psnr: range must be positive".into()));
    }
    if estimate.tensor().shape() != truth.tensor().shape() {
        return Err(Error::ShapeMismatch {
            context: "psnr",
            expected: truth.tensor().shape().to_vec(),
            got: estimate.tensor().shape().to_vec(),
            axis: 0,
        });
    }
    let err = estimate.tensor().sub(truth.tensor())?.norm_sq();
    if err == T::zero() {
        return Ok(T::infinity());
    }
    let n = T::of(estimate.tensor().len() as f64);
    Ok(T::of(10.0) * (n * range * range / err).log10())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn identical_images_give_infinity() {
        let a = Image::new(Tensor::from_vec(vec![0.3f64, 0.7]).reshape(&[1, 2]).unwrap()).unwrap();
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn half_off_two_by_two() {
        let truth = Image::new(Tensor::<f64>::ones(&[2, 2])).unwrap();
        let est = Image::new(Tensor::<f64>::full(&[2, 2], 0.5)).unwrap();
        let p = psnr(&est, &truth, 1.0).unwrap();
        // 10*log10(4 * 1 / 1) = 6.0206
        assert!((p - 10.0 * 4.0f64.log10()).abs() < 1e-12);
        assert!((p - 6.0206).abs() < 1e-4);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = Image::<f64>::zeros(2, 2);
        let b = Image::<f64>::zeros(2, 3);
        assert!(psnr(&a, &b, 1.0).is_err());
    }
}
