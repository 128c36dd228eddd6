//! Difference-of-convex algorithm: linearize the concave part and minimize
//! the resulting convex majorization with the nonmonotone gradient solver.

use super::{nmapg_minimize, FnObjective, NmapgConfig, Objective};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Minimize `F1(x) - F2(x)` with `F1`, `F2` convex and smooth.
///
/// Each outer iteration solves
/// `x_{k+1} = argmin F1(x) - <grad F2(x_k), x>` via nmAPG; the composite
/// objective is nonincreasing across outer iterations up to the inner
/// tolerance.
pub fn dca_minimize<T: Scalar>(
    f1: &impl Objective<T>,
    f2: &impl Objective<T>,
    x0: &Tensor<T>,
    outer_iters: usize,
    inner: &NmapgConfig,
) -> Result<(Tensor<T>, Vec<f64>)> {
    let mut x = x0.clone();
    let mut trace = Vec::with_capacity(outer_iters + 1);
    trace.push((f1.value(&x)? - f2.value(&x)?).as_f64());

    for _ in 0..outer_iters {
        let g2 = f2.grad(&x)?;
        let sub = FnObjective {
            value_fn: |z: &Tensor<T>| Ok(f1.value(z)? - g2.dot(z)?),
            grad_fn: |z: &Tensor<T>| f1.grad(z)?.sub(&g2),
        };
        let (x_new, _) = nmapg_minimize(&sub, &x, inner)?;
        x = x_new;
        trace.push((f1.value(&x)? - f2.value(&x)?).as_f64());
    }
    Ok((x, trace))
}
