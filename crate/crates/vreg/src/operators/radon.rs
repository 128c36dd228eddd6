//! Parallel-beam X-ray transform on a unit pixel grid.
//!
//! Ray-driven discretization: for angle `phi` and detector offset `t`, the
//! ray `{ t*omega + s*omega_perp }` with `omega = (cos phi, sin phi)` is
//! sampled at unit steps; each sample reads the image by bilinear
//! interpolation on pixel centers. The adjoint scatters the identical
//! weights, so `apply` and `adjoint` are exact transposes of each other.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Image, Tensor};

/// Geometry of the parallel-beam scan.
#[derive(Debug, Clone, PartialEq)]
pub struct CtGeometry {
    /// Square image side length.
    pub image_size: usize,
    /// Equispaced angles in `[0, pi)`.
    pub n_angles: usize,
    /// Detector bins, `ceil(sqrt(2) * image_size)` by default.
    pub n_detectors: usize,
    /// Multiplier applied to every line integral. The default emulates the
    /// reference measurement range proportionally at reduced resolution
    /// (a [0,1] phantom of side 362 would peak near 400).
    pub ray_scale: f64,
}

/// Default line-integral scale: 400 / (362 * sqrt(2)).
pub const DEFAULT_RAY_SCALE: f64 = 400.0 / (362.0 * std::f64::consts::SQRT_2);

impl CtGeometry {
    pub fn new(image_size: usize, n_angles: usize) -> Self {
        let n_detectors = ((image_size as f64) * std::f64::consts::SQRT_2).ceil() as usize;
        CtGeometry {
            image_size,
            n_angles,
            n_detectors,
            ray_scale: DEFAULT_RAY_SCALE,
        }
    }

    /// The paper-style sparse-view setup: 60 equispaced angles.
    pub fn sparse_view(image_size: usize) -> Self {
        CtGeometry::new(image_size, 60)
    }

    pub fn angle(&self, a: usize) -> f64 {
        a as f64 * std::f64::consts::PI / self.n_angles as f64
    }

    /// Detector bin center offset from the rotation center.
    pub fn detector_offset(&self, j: usize) -> f64 {
        j as f64 - (self.n_detectors as f64 - 1.0) / 2.0
    }

    pub fn sinogram_shape(&self) -> [usize; 2] {
        [self.n_angles, self.n_detectors]
    }
}

/// Row-major `[n_angles, n_detectors]` measurement tensor.
pub type Sinogram<T> = Tensor<T>;

#[inline]
fn for_each_sample<T: Scalar>(
    geom: &CtGeometry,
    a: usize,
    j: usize,
    mut visit: impl FnMut(usize, usize, T),
) {
    let n = geom.image_size;
    let half = (n as f64 - 1.0) / 2.0;
    let phi = geom.angle(a);
    let (sin_p, cos_p) = phi.sin_cos();
    let t = geom.detector_offset(j);
    // samples span the image diagonal
    let n_samples = geom.n_detectors;
    let s0 = -((n_samples as f64 - 1.0) / 2.0);
    for k in 0..n_samples {
        let s = s0 + k as f64;
        // omega = (cos, sin), omega_perp = (-sin, cos)
        let x = t * cos_p - s * sin_p;
        let y = t * sin_p + s * cos_p;
        // pixel coordinates: column = x + half, row = y + half
        let c = x + half;
        let r = y + half;
        let c0 = c.floor();
        let r0 = r.floor();
        let fc = c - c0;
        let fr = r - r0;
        let (c0i, r0i) = (c0 as isize, r0 as isize);
        for (dr, dc, w) in [
            (0isize, 0isize, (1.0 - fr) * (1.0 - fc)),
            (0, 1, (1.0 - fr) * fc),
            (1, 0, fr * (1.0 - fc)),
            (1, 1, fr * fc),
        ] {
            let rr = r0i + dr;
            let cc = c0i + dc;
            if rr < 0 || cc < 0 || rr >= n as isize || cc >= n as isize {
                continue;
            }
            if w == 0.0 {
                continue;
            }
            visit(rr as usize, cc as usize, T::of(w));
        }
    }
}

fn check_square<T: Scalar>(x: &Image<T>, geom: &CtGeometry) -> Result<()> {
    if x.height() != x.width() || x.height() != geom.image_size {
        return Err(Error::ShapeMismatch {
            context: "radon: image must be square and match the geometry",
            expected: vec![geom.image_size, geom.image_size],
            got: vec![x.height(), x.width()],
            axis: 0,
        });
    }
    Ok(())
}

/// Line integrals of `x` for every (angle, detector) pair.
pub fn radon_apply<T: Scalar>(x: &Image<T>, geom: &CtGeometry) -> Result<Sinogram<T>> {
    check_square(x, geom)?;
    let scale = T::of(geom.ray_scale);
    let n = geom.image_size;
    let mut out = vec![T::zero(); geom.n_angles * geom.n_detectors];
    for a in 0..geom.n_angles {
        for j in 0..geom.n_detectors {
            let mut acc = T::zero();
            for_each_sample::<T>(geom, a, j, |r, c, w| {
                acc += w * x.tensor().data()[r * n + c];
            });
            out[a * geom.n_detectors + j] = scale * acc;
        }
    }
    Tensor::new(vec![geom.n_angles, geom.n_detectors], out)
}

/// Exact transpose of [`radon_apply`].
pub fn radon_adjoint<T: Scalar>(s: &Sinogram<T>, geom: &CtGeometry) -> Result<Image<T>> {
    if s.shape() != geom.sinogram_shape() {
        return Err(Error::ShapeMismatch {
            context: "radon_adjoint: sinogram/geometry mismatch",
            expected: geom.sinogram_shape().to_vec(),
            got: s.shape().to_vec(),
            axis: 0,
        });
    }
    let scale = T::of(geom.ray_scale);
    let n = geom.image_size;
    let mut out = vec![T::zero(); n * n];
    for a in 0..geom.n_angles {
        for j in 0..geom.n_detectors {
            let v = scale * s.data()[a * geom.n_detectors + j];
            if v == T::zero() {
                continue;
            }
            for_each_sample::<T>(geom, a, j, |r, c, w| {
                out[r * n + c] += w * v;
            });
        }
    }
    Image::new(Tensor::new(vec![n, n], out)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{sample_gaussian, Rng};

    #[test]
    fn zero_image_gives_zero_sinogram() {
        let geom = CtGeometry::sparse_view(16);
        let x = Image::<f64>::zeros(16, 16);
        let s = radon_apply(&x, &geom).unwrap();
        assert!(s.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_square_image_rejected() {
        let geom = CtGeometry::sparse_view(16);
        let x = Image::<f64>::zeros(16, 12);
        assert!(radon_apply(&x, &geom).is_err());
    }

    #[test]
    fn adjoint_identity_holds() {
        let geom = CtGeometry::sparse_view(32);
        let mut rng = Rng::new(9);
        let x = Image::new(sample_gaussian::<f64>(&mut rng, &[32, 32], 1.0)).unwrap();
        let hx = radon_apply(&x, &geom).unwrap();
        let y = sample_gaussian::<f64>(&mut rng, hx.shape(), 1.0);
        let hty = radon_adjoint(&y, &geom).unwrap();
        let lhs = hx.dot(&y).unwrap();
        let rhs = x.tensor().dot(hty.tensor()).unwrap();
        assert!(
            (lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1.0),
            "adjoint identity: {lhs} vs {rhs}"
        );
    }

    #[test]
    fn operator_is_linear() {
        let geom = CtGeometry::sparse_view(16);
        let mut rng = Rng::new(10);
        let x = Image::new(sample_gaussian::<f64>(&mut rng, &[16, 16], 1.0)).unwrap();
        let z = Image::new(sample_gaussian::<f64>(&mut rng, &[16, 16], 1.0)).unwrap();
        let (a, b) = (1.7, -0.4);
        let combo = Image::new(x.tensor().scale(a).add(&z.tensor().scale(b)).unwrap()).unwrap();
        let lhs = radon_apply(&combo, &geom).unwrap();
        let rhs = radon_apply(&x, &geom)
            .unwrap()
            .scale(a)
            .add(&radon_apply(&z, &geom).unwrap().scale(b))
            .unwrap();
        for (u, v) in lhs.data().iter().zip(rhs.data()) {
            assert!((u - v).abs() <= 1e-10 * v.abs().max(1.0));
        }
    }

    /// Materialize the dense matrix column by column from basis images,
    /// the adjoint's matrix row by row from basis sinograms, and check
    /// that (a) a matrix-vector product reproduces `apply` and (b) the
    /// two matrices are exact transposes.
    #[test]
    fn dense_assembly_matches_apply_and_transposes() {
        let geom = CtGeometry::new(16, 12);
        let n = 16 * 16;
        let m = geom.n_angles * geom.n_detectors;
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            let e = Image::from_fn(16, 16, |r, c| if r * 16 + c == i { 1.0 } else { 0.0 });
            cols.push(radon_apply(&e, &geom).unwrap().into_data());
        }
        let mut rng = Rng::new(11);
        let x = Image::new(sample_gaussian::<f64>(&mut rng, &[16, 16], 1.0)).unwrap();
        let direct = radon_apply(&x, &geom).unwrap();
        for row in 0..m {
            let mut acc = 0.0;
            for (i, col) in cols.iter().enumerate() {
                acc += col[row] * x.tensor().data()[i];
            }
            assert!((acc - direct.data()[row]).abs() <= 1e-6 * acc.abs().max(1.0));
        }
        // adjoint matrix must be the exact transpose
        for row in (0..m).step_by(37) {
            let mut e = Tensor::<f64>::zeros(&geom.sinogram_shape());
            e.data_mut()[row] = 1.0;
            let back = radon_adjoint(&e, &geom).unwrap();
            for i in 0..n {
                let want = cols[i][row];
                let got = back.tensor().data()[i];
                assert!(
                    (want - got).abs() <= 1e-12 * want.abs().max(1.0),
                    "entry ({row},{i}): forward {want}, adjoint {got}"
                );
            }
        }
    }
}
