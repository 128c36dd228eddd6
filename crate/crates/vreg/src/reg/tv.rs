//! Anisotropic total variation: forward differences, zero-gradient
//! boundary.

use crate::scalar::Scalar;
use crate::tensor::{Image, Tensor};

/// Forward-difference gradient `[2, H, W]`; the last column/row of each
/// component is zero.
pub fn grad_forward<T: Scalar>(x: &Image<T>) -> Tensor<T> {
    let (h, w) = (x.height(), x.width());
    let mut out = vec![T::zero(); 2 * h * w];
    for r in 0..h {
        for c in 0..w {
            if c + 1 < w {
                out[r * w + c] = x.get(r, c + 1) - x.get(r, c);
            }
            if r + 1 < h {
                out[h * w + r * w + c] = x.get(r + 1, c) - x.get(r, c);
            }
        }
    }
    Tensor::new(vec![2, h, w], out).expect("consistent shape")
}

/// Negative divergence, the exact transpose of [`grad_forward`].
pub fn grad_forward_adjoint<T: Scalar>(p: &Tensor<T>, h: usize, w: usize) -> Image<T> {
    let mut out = vec![T::zero(); h * w];
    let px = &p.data()[..h * w];
    let py = &p.data()[h * w..];
    for r in 0..h {
        for c in 0..w {
            if c + 1 < w {
                let v = px[r * w + c];
                out[r * w + c + 1] += v;
                out[r * w + c] -= v;
            }
            if r + 1 < h {
                let v = py[r * w + c];
                out[(r + 1) * w + c] += v;
                out[r * w + c] -= v;
            }
        }
    }
    Image::new(Tensor::new(vec![h, w], out).expect("consistent shape")).expect("2-d")
}

/// `||grad x||_1`.
pub fn tv_value<T: Scalar>(x: &Image<T>) -> T {
    let g = grad_forward(x);
    let mut acc = T::zero();
    for &v in g.data() {
        acc += v.abs();
    }
    acc
}
