//! Forward models, adjoints, pseudo-inverses, and the quadratic data
//! fidelity.

mod fbp;
mod radon;

pub use fbp::{fbp, ramp_filter};
pub use radon::{radon_adjoint, radon_apply, CtGeometry, Sinogram, DEFAULT_RAY_SCALE};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Image, Tensor};
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

pub const SINOGRAM_MAGIC: &[u8; 6] = b"VRSIN1";

#[derive(Debug, Clone, PartialEq)]
enum OpKind {
    Identity,
    Radon(CtGeometry),
}

/// A linear forward operator `H` with apply, adjoint, and (for CT) an FBP
/// pseudo-inverse. Immutable after construction; apply/adjoint are pure.
#[derive(Debug)]
pub struct ForwardOp {
    kind: OpKind,
    norm_sq: OnceLock<f64>,
}

impl Clone for ForwardOp {
    fn clone(&self) -> Self {
        ForwardOp {
            kind: self.kind.clone(),
            norm_sq: OnceLock::new(),
        }
    }
}

impl PartialEq for ForwardOp {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
    }
}

impl ForwardOp {
    pub fn identity() -> Self {
        ForwardOp {
            kind: OpKind::Identity,
            norm_sq: OnceLock::new(),
        }
    }

    pub fn radon(geom: CtGeometry) -> Self {
        ForwardOp {
            kind: OpKind::Radon(geom),
            norm_sq: OnceLock::new(),
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self.kind, OpKind::Identity)
    }

    pub fn geometry(&self) -> Option<&CtGeometry> {
        match &self.kind {
            OpKind::Radon(g) => Some(g),
            OpKind::Identity => None,
        }
    }

    /// Short identifier for metadata.
    pub fn id(&self) -> String {
        match &self.kind {
            OpKind::Identity => "identity".into(),
            OpKind::Radon(g) => format!(
                "radon{}x{}a{}d{}",
                g.image_size, g.image_size, g.n_angles, g.n_detectors
            ),
        }
    }

    pub fn apply<T: Scalar>(&self, x: &Image<T>) -> Result<Tensor<T>> {
        match &self.kind {
            OpKind::Identity => Ok(x.tensor().clone()),
            OpKind::Radon(g) => radon_apply(x, g),
        }
    }

    pub fn adjoint<T: Scalar>(&self, y: &Tensor<T>) -> Result<Image<T>> {
        match &self.kind {
            OpKind::Identity => {
                if y.shape().len() != 2 {
                    return Err(Error::ShapeMismatch {
                        context: "identity adjoint",
                        expected: vec![2],
                        got: y.shape().to_vec(),
                        axis: 0,
                    });
                }
                Image::new(y.clone())
            }
            OpKind::Radon(g) => radon_adjoint(y, g),
        }
    }

    /// `H^dagger`: identity for denoising, FBP for CT.
    pub fn pseudo_inverse<T: Scalar>(&self, y: &Tensor<T>) -> Result<Image<T>> {
        match &self.kind {
            OpKind::Identity => self.adjoint(y),
            OpKind::Radon(g) => fbp(y, g),
        }
    }

    /// Squared operator norm `||H||^2`, the Lipschitz bound of the data-fit
    /// gradient. Estimated once by power iteration (f64) and cached.
    pub fn norm_sq(&self) -> f64 {
        *self.norm_sq.get_or_init(|| match &self.kind {
            OpKind::Identity => 1.0,
            OpKind::Radon(g) => {
                let mut rng = crate::tensor::Rng::new(0x5eed);
                let n = g.image_size;
                let mut v = crate::tensor::sample_gaussian::<f64>(&mut rng, &[n, n], 1.0);
                let nv = v.norm();
                v = v.scale(1.0 / nv);
                let mut sigma_sq = 1.0;
                for _ in 0..40 {
                    let img = Image::new(v).expect("square image");
                    let w = radon_apply(&img, g).expect("matching geometry");
                    sigma_sq = w.norm_sq();
                    let back = radon_adjoint(&w, g).expect("matching geometry");
                    let nb = back.tensor().norm();
                    v = back.into_tensor().scale(1.0 / nb);
                }
                sigma_sq
            }
        })
    }

    /// Shape of the measurement produced for an `n x n` image.
    pub fn measurement_shape(&self, image_hw: (usize, usize)) -> Vec<usize> {
        match &self.kind {
            OpKind::Identity => vec![image_hw.0, image_hw.1],
            OpKind::Radon(g) => g.sinogram_shape().to_vec(),
        }
    }
}

/// `0.5 ||Hx - y||^2`.
pub fn datafit_value<T: Scalar>(h: &ForwardOp, x: &Image<T>, y: &Tensor<T>) -> Result<T> {
    let r = h.apply(x)?.sub(y)?;
    Ok(T::of(0.5) * r.norm_sq())
}

/// Gradient `H^T (Hx - y)`.
pub fn datafit_grad<T: Scalar>(h: &ForwardOp, x: &Image<T>, y: &Tensor<T>) -> Result<Image<T>> {
    let r = h.apply(x)?.sub(y)?;
    h.adjoint(&r)
}

/// Write the sinogram file format (f32 payload).
pub fn write_sinogram<T: Scalar>(path: &Path, s: &Sinogram<T>) -> Result<()> {
    if s.shape().len() != 2 {
        return Err(Error::ShapeMismatch {
            context: "write_sinogram",
            expected: vec![2],
            got: s.shape().to_vec(),
            axis: 0,
        });
    }
    let mut out = Vec::with_capacity(14 + s.len() * 4);
    out.extend_from_slice(SINOGRAM_MAGIC);
    out.extend_from_slice(&(s.shape()[0] as u32).to_le_bytes());
    out.extend_from_slice(&(s.shape()[1] as u32).to_le_bytes());
    for &v in s.data() {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_sinogram<T: Scalar>(path: &Path) -> Result<Sinogram<T>> {
    let bytes = fs::read(path)?;
    if bytes.len() < 14 || &bytes[..6] != SINOGRAM_MAGIC {
        return Err(Error::Format(format!(
            "{}: missing VRSIN1 magic",
            path.display()
        )));
    }
    let a = u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]) as usize;
    let d = u32::from_le_bytes([bytes[10], bytes[11], bytes[12], bytes[13]]) as usize;
    let need = 14 + a * d * 4;
    if bytes.len() != need {
        return Err(Error::Format(format!(
            "{}: expected {need} bytes, found {}",
            path.display(),
            bytes.len()
        )));
    }
    let mut data = Vec::with_capacity(a * d);
    for i in 0..a * d {
        let off = 14 + i * 4;
        let v = f32::from_le_bytes([bytes[off], bytes[off + 1], bytes[off + 2], bytes[off + 3]]);
        data.push(T::of(v as f64));
    }
    Tensor::new(vec![a, d], data)
}
