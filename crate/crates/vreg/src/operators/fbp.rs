//! Filtered back projection: Ram-Lak filtering per angle followed by
//! backprojection through the exact adjoint.

use super::radon::{radon_adjoint, CtGeometry, Sinogram};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Image, Tensor};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// Apply the ramp filter to every detector row of the sinogram.
///
/// Rows are zero-padded to the next power of two at least twice the
/// detector count; the filter response is `|nu|` in cycles per sample with
/// no apodization window.
pub fn ramp_filter<T: Scalar>(s: &Sinogram<T>, geom: &CtGeometry) -> Result<Sinogram<T>> {
    if s.shape() != geom.sinogram_shape() {
        return Err(Error::ShapeMismatch {
            context: "ramp_filter",
            expected: geom.sinogram_shape().to_vec(),
            got: s.shape().to_vec(),
            axis: 0,
        });
    }
    let d = geom.n_detectors;
    let len = (2 * d).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);

    let mut out = vec![T::zero(); s.len()];
    let mut buf = vec![Complex::new(0.0, 0.0); len];
    for a in 0..geom.n_angles {
        for (k, slot) in buf.iter_mut().enumerate() {
            *slot = if k < d {
                Complex::new(s.data()[a * d + k].as_f64(), 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fwd.process(&mut buf);
        for (k, slot) in buf.iter_mut().enumerate() {
            let freq = if k <= len / 2 { k } else { len - k } as f64 / len as f64;
            *slot *= freq;
        }
        inv.process(&mut buf);
        // rustfft's inverse is unnormalized
        let norm = 1.0 / len as f64;
        for k in 0..d {
            out[a * d + k] = T::of(buf[k].re * norm);
        }
    }
    Tensor::new(vec![geom.n_angles, d], out)
}

/// Filtered back projection, the classical pseudo-inverse of the scan.
pub fn fbp<T: Scalar>(s: &Sinogram<T>, geom: &CtGeometry) -> Result<Image<T>> {
    let filtered = ramp_filter(s, geom)?;
    let back = radon_adjoint(&filtered, geom)?;
    // adjoint carries one factor of ray_scale, the data another; the
    // angular quadrature contributes pi / n_angles
    let c = std::f64::consts::PI / (geom.n_angles as f64 * geom.ray_scale * geom.ray_scale);
    Ok(Image::new(back.into_tensor().scale(T::of(c)))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::radon::radon_apply;

    fn disk_phantom(n: usize) -> Image<f64> {
        let c = (n as f64 - 1.0) / 2.0;
        let r = n as f64 * 0.3;
        Image::from_fn(n, n, |i, j| {
            let d = ((i as f64 - c).powi(2) + (j as f64 - c).powi(2)).sqrt();
            if d < r {
                1.0
            } else {
                0.0
            }
        })
    }

    #[test]
    fn zero_sinogram_reconstructs_zero() {
        let geom = CtGeometry::sparse_view(32);
        let s = Tensor::<f64>::zeros(&geom.sinogram_shape());
        let x = fbp(&s, &geom).unwrap();
        assert!(x.tensor().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn disk_round_trip_error_is_small() {
        let n = 64;
        let geom = CtGeometry::sparse_view(n);
        let x = disk_phantom(n);
        let s = radon_apply(&x, &geom).unwrap();
        let rec = fbp(&s, &geom).unwrap();
        let err = rec.tensor().sub(x.tensor()).unwrap().norm() / x.tensor().norm();
        assert!(err < 0.25, "relative reconstruction error {err}");
    }

    #[test]
    fn error_decreases_with_more_angles() {
        let n = 64;
        let x = disk_phantom(n);
        let mut errs = Vec::new();
        for n_angles in [30, 60, 120] {
            let geom = CtGeometry::new(n, n_angles);
            let s = radon_apply(&x, &geom).unwrap();
            let rec = fbp(&s, &geom).unwrap();
            errs.push(rec.tensor().sub(x.tensor()).unwrap().norm() / x.tensor().norm());
        }
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "errors {errs:?}");
    }

    #[test]
    fn geometry_mismatch_rejected() {
        let geom = CtGeometry::sparse_view(32);
        let s = Tensor::<f64>::zeros(&[10, 10]);
        assert!(fbp(&s, &geom).is_err());
    }
}
