//! 2-d cross-correlation ("convolution", no kernel flip) and its exact
//! transpose.
//!
//! Inputs are `[C_in, H, W]`, kernels `[C_out, C_in, kh, kw]`. The adjoint
//! is defined as the transpose of the linear map realized by the forward
//! pass with identical configuration, so `<conv(x), y> == <x, adjoint(y)>`
//! holds to rounding error for every configuration.

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Spatial boundary handling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Surround the input with `p` zeros on every side.
    Zero(usize),
    /// No padding; output shrinks by `k - 1`.
    Valid,
}

impl Padding {
    #[inline]
    pub fn amount(self) -> usize {
        match self {
            Padding::Zero(p) => p,
            Padding::Valid => 0,
        }
    }
}

/// Output length along one axis: `floor((n + 2p - k) / stride) + 1`.
pub fn conv_out_len(n: usize, k: usize, padding: Padding, stride: usize) -> Result<usize> {
    let p = padding.amount();
    if k > n + 2 * p {
        return Err(Error::ShapeMismatch {
            context: "conv2d: kernel larger than padded input",
            expected: vec![n + 2 * p],
            got: vec![k],
            axis: 0,
        });
    }
    if stride == 0 {
        return Err(Error::Parameter("conv2d: stride must be >= 1".into()));
    }
    Ok((n + 2 * p - k) / stride + 1)
}

fn check_conv_shapes<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
) -> Result<(usize, usize, usize, usize, usize, usize)> {
    let ishape = input.shape();
    let kshape = kernels.shape();
    if ishape.len() != 3 {
        return Err(Error::ShapeMismatch {
            context: "conv2d: input rank",
            expected: vec![3],
            got: vec![ishape.len()],
            axis: 0,
        });
    }
    if kshape.len() != 4 {
        return Err(Error::ShapeMismatch {
            context: "conv2d: kernel rank",
            expected: vec![4],
            got: vec![kshape.len()],
            axis: 0,
        });
    }
    if ishape[0] != kshape[1] {
        return Err(Error::ShapeMismatch {
            context: "conv2d: input channels",
            expected: vec![kshape[1]],
            got: vec![ishape[0]],
            axis: 0,
        });
    }
    Ok((ishape[0], ishape[1], ishape[2], kshape[0], kshape[2], kshape[3]))
}

/// Cross-correlation of `input [C_in,H,W]` with `kernels [C_out,C_in,kh,kw]`.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    padding: Padding,
    stride: usize,
) -> Result<Tensor<T>> {
    let (c_in, h, w, c_out, kh, kw) = check_conv_shapes(input, kernels)?;
    let oh = conv_out_len(h, kh, padding, stride)?;
    let ow = conv_out_len(w, kw, padding, stride)?;
    let p = padding.amount() as isize;

    let x = input.data();
    let k = kernels.data();
    let mut out = vec![T::zero(); c_out * oh * ow];

    for o in 0..c_out {
        for ci in 0..c_in {
            let kbase = (o * c_in + ci) * kh * kw;
            let xbase = ci * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = T::zero();
                    let iy0 = (oy * stride) as isize - p;
                    let ix0 = (ox * stride) as isize - p;
                    for ky in 0..kh {
                        let iy = iy0 + ky as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row = xbase + iy as usize * w;
                        for kx in 0..kw {
                            let ix = ix0 + kx as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc += x[row + ix as usize] * k[kbase + ky * kw + kx];
                        }
                    }
                    out[(o * oh + oy) * ow + ox] += acc;
                }
            }
        }
    }
    Tensor::new(vec![c_out, oh, ow], out)
}

/// Transpose of [`conv2d`] with identical configuration.
///
/// `cotangent` must have the forward output shape; `in_h`/`in_w` give the
/// spatial size of the original input (needed because strided output
/// shapes are not invertible).
pub fn conv2d_adjoint<T: Scalar>(
    cotangent: &Tensor<T>,
    kernels: &Tensor<T>,
    padding: Padding,
    stride: usize,
    in_h: usize,
    in_w: usize,
) -> Result<Tensor<T>> {
    let kshape = kernels.shape();
    if kshape.len() != 4 {
        return Err(Error::ShapeMismatch {
            context: "conv2d_adjoint: kernel rank",
            expected: vec![4],
            got: vec![kshape.len()],
            axis: 0,
        });
    }
    let (c_out, c_in, kh, kw) = (kshape[0], kshape[1], kshape[2], kshape[3]);
    let oh = conv_out_len(in_h, kh, padding, stride)?;
    let ow = conv_out_len(in_w, kw, padding, stride)?;
    let expected = vec![c_out, oh, ow];
    if cotangent.shape() != expected.as_slice() {
        let axis = cotangent
            .shape()
            .iter()
            .zip(expected.iter())
            .position(|(a, b)| a != b)
            .unwrap_or(0);
        return Err(Error::ShapeMismatch {
            context: "conv2d_adjoint: cotangent",
            expected,
            got: cotangent.shape().to_vec(),
            axis,
        });
    }
    let p = padding.amount() as isize;
    let c = cotangent.data();
    let k = kernels.data();
    let mut out = vec![T::zero(); c_in * in_h * in_w];

    for o in 0..c_out {
        for ci in 0..c_in {
            let kbase = (o * c_in + ci) * kh * kw;
            let xbase = ci * in_h * in_w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let u = c[(o * oh + oy) * ow + ox];
                    let iy0 = (oy * stride) as isize - p;
                    let ix0 = (ox * stride) as isize - p;
                    for ky in 0..kh {
                        let iy = iy0 + ky as isize;
                        if iy < 0 || iy >= in_h as isize {
                            continue;
                        }
                        let row = xbase + iy as usize * in_w;
                        for kx in 0..kw {
                            let ix = ix0 + kx as isize;
                            if ix < 0 || ix >= in_w as isize {
                                continue;
                            }
                            out[row + ix as usize] += u * k[kbase + ky * kw + kx];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![c_in, in_h, in_w], out)
}

/// Gradient of `<conv2d(input, K), cotangent>` with respect to the kernels.
pub fn conv2d_kernel_grad<T: Scalar>(
    input: &Tensor<T>,
    cotangent: &Tensor<T>,
    padding: Padding,
    stride: usize,
    kshape: &[usize; 4],
) -> Result<Tensor<T>> {
    let ishape = input.shape();
    let (c_out, c_in, kh, kw) = (kshape[0], kshape[1], kshape[2], kshape[3]);
    if ishape.len() != 3 || ishape[0] != c_in {
        return Err(Error::ShapeMismatch {
            context: "conv2d_kernel_grad: input",
            expected: vec![c_in],
            got: ishape.to_vec(),
            axis: 0,
        });
    }
    let (h, w) = (ishape[1], ishape[2]);
    let oh = conv_out_len(h, kh, padding, stride)?;
    let ow = conv_out_len(w, kw, padding, stride)?;
    if cotangent.shape() != [c_out, oh, ow] {
        return Err(Error::ShapeMismatch {
            context: "conv2d_kernel_grad: cotangent",
            expected: vec![c_out, oh, ow],
            got: cotangent.shape().to_vec(),
            axis: 0,
        });
    }
    let p = padding.amount() as isize;
    let x = input.data();
    let c = cotangent.data();
    let mut out = vec![T::zero(); c_out * c_in * kh * kw];

    for o in 0..c_out {
        for ci in 0..c_in {
            let kbase = (o * c_in + ci) * kh * kw;
            let xbase = ci * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let u = c[(o * oh + oy) * ow + ox];
                    let iy0 = (oy * stride) as isize - p;
                    let ix0 = (ox * stride) as isize - p;
                    for ky in 0..kh {
                        let iy = iy0 + ky as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row = xbase + iy as usize * w;
                        for kx in 0..kw {
                            let ix = ix0 + kx as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            out[kbase + ky * kw + kx] += u * x[row + ix as usize];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![c_out, c_in, kh, kw], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{sample_gaussian, Rng};

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn one_by_one_kernel_scales() {
        let x = t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let k = t(&[1, 1, 1, 1], &[2.0]);
        let y = conv2d(&x, &k, Padding::Valid, 1).unwrap();
        assert_eq!(y.data(), &[2.0, 4.0, 6.0, 8.0]);
        // the adjoint of a scaling is the same scaling
        let z = conv2d_adjoint(&x, &k, Padding::Valid, 1, 2, 2).unwrap();
        assert_eq!(z.data(), &[2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn ones_kernel_counts_overlap() {
        let x = Tensor::<f64>::ones(&[1, 3, 3]);
        let k = Tensor::<f64>::ones(&[1, 1, 3, 3]);
        let y = conv2d(&x, &k, Padding::Zero(1), 1).unwrap();
        assert_eq!(y.shape(), &[1, 3, 3]);
        assert_eq!(y.data()[4], 9.0); // center sees the whole kernel
        assert_eq!(y.data()[0], 4.0); // corner sees a 2x2 overlap
        assert_eq!(y.data()[8], 4.0);
    }

    #[test]
    fn valid_adjoint_of_delta_places_kernel() {
        // a delta cotangent at output position (i,j) scatters the kernel
        // onto input positions (i..i+kh, j..j+kw)
        let k = t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let mut cot = Tensor::<f64>::zeros(&[1, 3, 3]);
        cot.data_mut()[4] = 1.0; // delta at (1,1) of the 3x3 output
        let z = conv2d_adjoint(&cot, &k, Padding::Valid, 1, 4, 4).unwrap();
        let expect = [
            0.0, 0.0, 0.0, 0.0, //
            0.0, 1.0, 2.0, 0.0, //
            0.0, 3.0, 4.0, 0.0, //
            0.0, 0.0, 0.0, 0.0,
        ];
        assert_eq!(z.data(), &expect);
    }

    /// Assemble the dense matrix of the conv map by iterating kernel taps
    /// directly (independent of the conv2d implementation path).
    fn assemble_dense(
        kernels: &Tensor<f64>,
        c_in: usize,
        h: usize,
        w: usize,
        padding: Padding,
        stride: usize,
    ) -> Vec<Vec<f64>> {
        let ks = kernels.shape();
        let (c_out, kh, kw) = (ks[0], ks[2], ks[3]);
        let oh = conv_out_len(h, kh, padding, stride).unwrap();
        let ow = conv_out_len(w, kw, padding, stride).unwrap();
        let p = padding.amount() as isize;
        let mut m = vec![vec![0.0; c_in * h * w]; c_out * oh * ow];
        for o in 0..c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let row = (o * oh + oy) * ow + ox;
                    for ci in 0..c_in {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride) as isize - p + ky as isize;
                                let ix = (ox * stride) as isize - p + kx as isize;
                                if iy < 0 || iy >= h as isize || ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let col = (ci * h + iy as usize) * w + ix as usize;
                                m[row][col] +=
                                    kernels.data()[((o * c_in + ci) * kh + ky) * kw + kx];
                            }
                        }
                    }
                }
            }
        }
        m
    }

    #[test]
    fn conv_matches_dense_matrix() {
        let mut rng = Rng::new(42);
        let x = sample_gaussian::<f64>(&mut rng, &[1, 8, 8], 1.0);
        let k = sample_gaussian::<f64>(&mut rng, &[4, 1, 3, 3], 1.0);
        let y = conv2d(&x, &k, Padding::Zero(1), 1).unwrap();
        let m = assemble_dense(&k, 1, 8, 8, Padding::Zero(1), 1);
        for (row, &got) in m.iter().zip(y.data()) {
            let want: f64 = row.iter().zip(x.data()).map(|(a, b)| a * b).sum();
            assert!((want - got).abs() <= 1e-12 * want.abs().max(1.0));
        }
    }

    #[test]
    fn adjoint_identity_random_shapes() {
        let mut rng = Rng::new(3);
        for &(c_in, h, w, c_out, k, pad, stride) in &[
            (1usize, 8usize, 8usize, 4usize, 3usize, Padding::Zero(1), 1usize),
            (2, 9, 7, 3, 3, Padding::Valid, 1),
            (3, 10, 10, 5, 5, Padding::Zero(2), 1),
            (1, 11, 9, 2, 3, Padding::Valid, 2),
            (2, 8, 8, 2, 2, Padding::Zero(1), 2),
        ] {
            let x = sample_gaussian::<f64>(&mut rng, &[c_in, h, w], 1.0);
            let kr = sample_gaussian::<f64>(&mut rng, &[c_out, c_in, k, k], 1.0);
            let wx = conv2d(&x, &kr, pad, stride).unwrap();
            let y = sample_gaussian::<f64>(&mut rng, wx.shape(), 1.0);
            let wty = conv2d_adjoint(&y, &kr, pad, stride, h, w).unwrap();
            let lhs = wx.dot(&y).unwrap();
            let rhs = x.dot(&wty).unwrap();
            let bound = 1e-10 * x.norm() * y.norm();
            assert!(
                (lhs - rhs).abs() <= bound,
                "adjoint identity violated: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn kernel_grad_matches_finite_differences() {
        let mut rng = Rng::new(5);
        let x = sample_gaussian::<f64>(&mut rng, &[2, 6, 6], 1.0);
        let k = sample_gaussian::<f64>(&mut rng, &[3, 2, 3, 3], 1.0);
        let cot = {
            let y = conv2d(&x, &k, Padding::Zero(1), 1).unwrap();
            sample_gaussian::<f64>(&mut rng, y.shape(), 1.0)
        };
        let g = conv2d_kernel_grad(&x, &cot, Padding::Zero(1), 1, &[3, 2, 3, 3]).unwrap();
        let h = 1e-6;
        for i in [0usize, 7, 23, 53] {
            let mut kp = k.clone();
            kp.data_mut()[i] += h;
            let mut km = k.clone();
            km.data_mut()[i] -= h;
            let fp = conv2d(&x, &kp, Padding::Zero(1), 1).unwrap().dot(&cot).unwrap();
            let fm = conv2d(&x, &km, Padding::Zero(1), 1).unwrap().dot(&cot).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            assert!((fd - g.data()[i]).abs() < 1e-6 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn oversized_kernel_is_an_error() {
        let x = Tensor::<f64>::zeros(&[1, 2, 2]);
        let k = Tensor::<f64>::zeros(&[1, 1, 5, 5]);
        assert!(conv2d(&x, &k, Padding::Valid, 1).is_err());
    }
}
