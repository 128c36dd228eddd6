//! Learned variational regularization for imaging inverse problems.
//!
//! The crate provides, at desk scale:
//!
//! - dense tensors, deterministic RNG, convolutions, and PSNR ([`tensor`]);
//! - a restricted reverse-mode differentiation engine with Hessian-vector
//!   products and mixed parameter-image products ([`autodiff`]);
//! - the regularizer zoo: fields-of-experts ridges (convex and weakly
//!   convex), input-convex networks and their differences, a Gaussian
//!   mixture patch prior, a padding-free patch CNN, and a least-squares
//!   residual network ([`reg`]);
//! - forward operators: identity and a 60-angle parallel-beam X-ray
//!   transform with filtered back projection ([`operators`]);
//! - solvers: nonmonotone accelerated (proximal) gradient, primal-dual
//!   hybrid gradient for total variation, difference-of-convex iterations,
//!   conjugate gradients, Adam/Adabelief ([`solvers`]);
//! - training schemes: score matching, adversarial, network-Tikhonov,
//!   EM for the patch prior, and bilevel learning with four hypergradient
//!   modes plus adaptive inexact descent ([`train`]);
//! - a command-line front end over config files ([`cli`]).
//!
//! Everything is generic over `f32`/`f64`; results are bitwise
//! reproducible from (config, seed).

pub mod autodiff;
pub mod error;
pub mod operators;
pub mod recon;
pub mod reg;
pub mod solvers;
pub mod train;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;
