//! Reverse-mode differentiation engine over tensor operations.
//!
//! Supplies gradients, Hessian-vector products, and mixed parameter-image
//! vector-Jacobian products for every architecture in the crate. See
//! [`Graph`] for the op set and the differentiation contract.

mod graph;
mod pointwise;
mod spectral;

pub use graph::{Bindings, Graph, NodeId};
pub use pointwise::PwKind;
pub use spectral::{spectral_norm, ConvChain};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{sample_gaussian, Rng, Tensor};

    #[test]
    fn sum_of_squares_value_and_grad() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf("x", &[2]).unwrap();
        let sq = g.pointwise(PwKind::Square, x, None).unwrap();
        let out = g.sum(sq);
        let grads = g.grad(out, &[x]).unwrap();

        let mut b = Bindings::new();
        b.set("x", Tensor::from_vec(vec![3.0, 4.0]));
        let vals = g.eval(&[out, grads[0]], &b).unwrap();
        assert_eq!(vals[0].data()[0], 25.0);
        assert_eq!(vals[1].data(), &[6.0, 8.0]);
    }

    #[test]
    fn huber_ridge_value_matches_hand_computation() {
        // R(x) = <1, psi_1(x)> with identity "convolution": at x = [2],
        // psi^1(2) = 2 - 0.5 = 1.5
        let mut g = Graph::<f64>::new();
        let x = g.leaf("x", &[1]).unwrap();
        let beta = g.scalar_const(1.0);
        let p = g.pointwise(PwKind::Huber, x, Some(beta)).unwrap();
        let out = g.sum(p);
        let mut b = Bindings::new();
        b.set("x", Tensor::from_vec(vec![2.0]));
        assert_eq!(g.eval_scalar(out, &b).unwrap(), 1.5);
    }

    #[test]
    fn unbound_leaf_is_an_error() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf("x", &[2]).unwrap();
        let out = g.sum(x);
        let b = Bindings::new();
        assert!(g.eval(&[out], &b).is_err());
    }

    #[test]
    fn quadratic_hvp_is_identity() {
        // f = 0.5 ||x||^2 : hessian is I, so hvp(x, v) = v
        let mut g = Graph::<f64>::new();
        let x = g.leaf("x", &[4]).unwrap();
        let d = g.dot(x, x).unwrap();
        let f = g.scale(d, 0.5);
        let gx = g.grad(f, &[x]).unwrap()[0];
        let v = g.leaf("v", &[4]).unwrap();
        let s = g.dot(gx, v).unwrap();
        let hv = g.grad(s, &[x]).unwrap()[0];

        let mut rng = Rng::new(11);
        let xv = sample_gaussian::<f64>(&mut rng, &[4], 1.0);
        let vv = sample_gaussian::<f64>(&mut rng, &[4], 1.0);
        let mut b = Bindings::new();
        b.set("x", xv).set("v", vv.clone());
        let out = g.eval(&[hv], &b).unwrap();
        assert_eq!(out[0].data(), vv.data());
    }

    #[test]
    fn grad_of_sum_is_sum_of_grads() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf("x", &[3]).unwrap();
        let a = g.pointwise(PwKind::Square, x, None).unwrap();
        let fa = g.sum(a);
        let b_ = g.pointwise(PwKind::Tanh, x, None).unwrap();
        let fb = g.sum(b_);
        let fs = g.add(fa, fb).unwrap();
        let gsum = g.grad(fs, &[x]).unwrap()[0];
        let ga = g.grad(fa, &[x]).unwrap()[0];
        let gb = g.grad(fb, &[x]).unwrap()[0];

        let mut rng = Rng::new(5);
        let xv = sample_gaussian::<f64>(&mut rng, &[3], 1.0);
        let mut b = Bindings::new();
        b.set("x", xv);
        let vals = g.eval(&[gsum, ga, gb], &b).unwrap();
        let manual = vals[1].add(&vals[2]).unwrap();
        for (u, v) in vals[0].data().iter().zip(manual.data()) {
            assert!((u - v).abs() < 1e-15);
        }
    }

    #[test]
    fn mixed_vjp_of_tikhonov_ridge() {
        // L = 0.5||x - y||^2 + 0.5 a ||x||^2; grad_x L = x - y + a x.
        // d/da <grad_x L, q> = <x, q>.
        let mut g = Graph::<f64>::new();
        let x = g.leaf("x", &[3]).unwrap();
        let y = g.leaf("y", &[3]).unwrap();
        let a = g.leaf("a", &[1]).unwrap();
        let r = g.sub(x, y).unwrap();
        let d1 = g.dot(r, r).unwrap();
        let fit = g.scale(d1, 0.5);
        let d2 = g.dot(x, x).unwrap();
        let d2a = g.mul_scalar(d2, a).unwrap();
        let reg = g.scale(d2a, 0.5);
        let loss = g.add(fit, reg).unwrap();
        let gx = g.grad(loss, &[x]).unwrap()[0];
        let q = g.leaf("q", &[3]).unwrap();
        let s = g.dot(gx, q).unwrap();
        let ga = g.grad(s, &[a]).unwrap()[0];

        let mut rng = Rng::new(6);
        let xv = sample_gaussian::<f64>(&mut rng, &[3], 1.0);
        let qv = sample_gaussian::<f64>(&mut rng, &[3], 1.0);
        let expect = xv.dot(&qv).unwrap();
        let mut b = Bindings::new();
        b.set("x", xv)
            .set("y", sample_gaussian::<f64>(&mut rng, &[3], 1.0))
            .set("a", Tensor::scalar(0.7))
            .set("q", qv);
        let got = g.eval(&[ga], &b).unwrap();
        assert!((got[0].data()[0] - expect).abs() < 1e-14);

        // q = 0 gives an all-zero cotangent
        let mut b0 = Bindings::new();
        b0.set("x", sample_gaussian::<f64>(&mut rng, &[3], 1.0))
            .set("y", sample_gaussian::<f64>(&mut rng, &[3], 1.0))
            .set("a", Tensor::scalar(0.4))
            .set("q", Tensor::zeros(&[3]));
        let z = g.eval(&[ga], &b0).unwrap();
        assert_eq!(z[0].data()[0], 0.0);
    }

    #[test]
    fn absolute_fails_fast_at_second_order() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf("x", &[2]).unwrap();
        let a = g.pointwise(PwKind::Absolute, x, None).unwrap();
        let f = g.sum(a);
        let gx = g.grad(f, &[x]).unwrap()[0];
        let v = g.leaf("v", &[2]).unwrap();
        let s = g.dot(gx, v).unwrap();
        assert!(g.grad(s, &[x]).is_err());
    }

    #[test]
    fn evaluation_is_deterministic() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf("x", &[1, 6, 6]).unwrap();
        let k = g.leaf("k", &[3, 1, 3, 3]).unwrap();
        let c = g.conv(x, k, crate::tensor::Padding::Zero(1), 1).unwrap();
        let t = g.pointwise(PwKind::Tanh, c, None).unwrap();
        let f = g.sum(t);
        let gx = g.grad(f, &[x, k]).unwrap();

        let mut rng = Rng::new(7);
        let xv = sample_gaussian::<f64>(&mut rng, &[1, 6, 6], 1.0);
        let kv = sample_gaussian::<f64>(&mut rng, &[3, 1, 3, 3], 1.0);
        let mut b = Bindings::new();
        b.set("x", xv).set("k", kv);
        let v1 = g.eval(&[f, gx[0], gx[1]], &b).unwrap();
        let v2 = g.eval(&[f, gx[0], gx[1]], &b).unwrap();
        for (a, c) in v1.iter().zip(&v2) {
            assert_eq!(a.data(), c.data());
        }
    }
}
