//! First-order moment optimizers for training: Adam and Adabelief.
//!
//! Adabelief replaces the raw second moment by the variance of the
//! gradient prediction error `(g - m)^2`.

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdamKind {
    Adam,
    Adabelief,
}

/// Per-parameter optimizer state (first/second moments, step counter).
#[derive(Debug, Clone)]
pub struct AdamState<T: Scalar> {
    pub kind: AdamKind,
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(kind: AdamKind, lr: f64, shapes: &[&[usize]]) -> Self {
        AdamState {
            kind,
            lr: T::of(lr),
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            eps: T::of(1e-8),
            step: 0,
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update; `params[i]` and `grads[i]` must match the construction
    /// shapes. Returns the updated parameters.
    pub fn step(&mut self, params: &[Tensor<T>], grads: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        let t = T::of(self.step as f64);
        let bc1 = T::one() - self.beta1.powf(t);
        let bc2 = T::one() - self.beta2.powf(t);

        let mut out = Vec::with_capacity(params.len());
        for i in 0..params.len() {
            let g = &grads[i];
            self.m[i] = self.m[i]
                .scale(self.beta1)
                .axpy(T::one() - self.beta1, g)?;
            match self.kind {
                AdamKind::Adam => {
                    let g2 = g.mul(g)?;
                    self.v[i] = self.v[i]
                        .scale(self.beta2)
                        .axpy(T::one() - self.beta2, &g2)?;
                }
                AdamKind::Adabelief => {
                    let d = g.sub(&self.m[i])?;
                    let d2 = d.mul(&d)?;
                    self.v[i] = self.v[i]
                        .scale(self.beta2)
                        .axpy(T::one() - self.beta2, &d2)?;
                    // keep the denominator strictly positive
                    self.v[i] = self.v[i].map(|x| x + self.eps * self.eps);
                }
            }
            let mut p = params[i].clone();
            for j in 0..p.len() {
                let mhat = self.m[i].data()[j] / bc1;
                let vhat = self.v[i].data()[j] / bc2;
                p.data_mut()[j] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
            out.push(p);
        }
        Ok(out)
    }
}
