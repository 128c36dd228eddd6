//! The regularizer architecture zoo.
//!
//! Every in-scope parametric functional `R_theta` lives behind the
//! [`Regularizer`] enum with a uniform surface: value, image gradient,
//! Hessian-vector product, parameter VJPs (through compiled graphs), and
//! constraint projection. The `(alpha, scale)` deployment wrapper
//! `R~(x) = (alpha / s^2) R(s x)` is applied at the [`Deployed`] level.

pub mod epll;
pub mod foe;
pub mod icnn;
pub mod lsr;
pub mod patch_cnn;
pub mod tv;

pub use epll::{EpllRegularizer, GmmPrior};
pub use foe::{FoeConfig, FoeRegularizer, Potential};
pub use icnn::{IcnnConfig, IcnnRegularizer, IdcnnRegularizer};
pub use lsr::{LsrConfig, LsrRegularizer};
pub use patch_cnn::{PatchCnnConfig, PatchCnnRegularizer};
pub use tv::{grad_forward, grad_forward_adjoint, tv_value};

use crate::autodiff::{Bindings, Graph, NodeId};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Image, Rng, Tensor};

/// `R(x) = (c/2) ||x||^2` with a single trainable coefficient; the
/// smallest member of the zoo, used for calibration and oracle problems.
#[derive(Debug, Clone)]
pub struct QuadraticRegularizer<T: Scalar> {
    pub coeff: Tensor<T>,
}

impl<T: Scalar> QuadraticRegularizer<T> {
    pub fn new(c: f64) -> Self {
        QuadraticRegularizer {
            coeff: Tensor::scalar(T::of(c)),
        }
    }

    pub fn coefficient(&self) -> T {
        self.coeff.data()[0]
    }

    pub fn build_value_graph(&self, g: &mut Graph<T>, x: NodeId) -> Result<NodeId> {
        let c = g
            .leaf_id("quad.c")
            .map_or_else(|| g.leaf("quad.c", &[1]), Ok)?;
        let dd = g.dot(x, x)?;
        let cd = g.mul_scalar(dd, c)?;
        Ok(g.scale(cd, T::of(0.5)))
    }
}

/// Any in-scope regularizer architecture.
#[derive(Debug, Clone)]
pub enum Regularizer<T: Scalar> {
    Foe(FoeRegularizer<T>),
    Icnn(IcnnRegularizer<T>),
    Idcnn(IdcnnRegularizer<T>),
    PatchCnn(PatchCnnRegularizer<T>),
    Lsr(LsrRegularizer<T>),
    Epll(EpllRegularizer<T>),
    Quadratic(QuadraticRegularizer<T>),
    Tv,
}

impl<T: Scalar> Regularizer<T> {
    pub fn arch_id(&self) -> &'static str {
        match self {
            Regularizer::Foe(f) => f.arch_id(),
            Regularizer::Icnn(_) => "icnn",
            Regularizer::Idcnn(_) => "idcnn",
            Regularizer::PatchCnn(_) => "patch_cnn",
            Regularizer::Lsr(_) => "lsr",
            Regularizer::Epll(_) => "epll",
            Regularizer::Quadratic(_) => "quadratic",
            Regularizer::Tv => "tv",
        }
    }

    /// Convex or 1-weakly-convex architectures qualify for MAID.
    pub fn is_weakly_convex(&self) -> bool {
        matches!(
            self,
            Regularizer::Foe(_) | Regularizer::Icnn(_) | Regularizer::Quadratic(_) | Regularizer::Tv
        )
    }

    /// Whether the architecture is graph-backed (trainable through the
    /// differentiation engine).
    pub fn has_graph(&self) -> bool {
        !matches!(self, Regularizer::Epll(_) | Regularizer::Tv)
    }

    pub fn param_entries(&self) -> Vec<(String, Tensor<T>)> {
        match self {
            Regularizer::Foe(f) => f.param_entries(),
            Regularizer::Icnn(f) => f.param_entries(),
            Regularizer::Idcnn(f) => f.param_entries(),
            Regularizer::PatchCnn(f) => f.param_entries(),
            Regularizer::Lsr(f) => f.param_entries(),
            Regularizer::Quadratic(q) => vec![("quad.c".into(), q.coeff.clone())],
            Regularizer::Epll(_) | Regularizer::Tv => Vec::new(),
        }
    }

    pub fn set_params(&mut self, params: &[(String, Tensor<T>)]) -> Result<()> {
        match self {
            Regularizer::Foe(f) => f.set_params(params),
            Regularizer::Icnn(f) => f.set_params(params),
            Regularizer::Idcnn(f) => f.set_params(params),
            Regularizer::PatchCnn(f) => f.set_params(params),
            Regularizer::Lsr(f) => f.set_params(params),
            Regularizer::Quadratic(q) => {
                for (name, value) in params {
                    if name != "quad.c" {
                        return Err(Error::Parameter(format!("unknown quadratic param '{name}'")));
                    }
                    q.coeff = value.clone();
                }
                Ok(())
            }
            Regularizer::Epll(_) | Regularizer::Tv => {
                if params.is_empty() {
                    Ok(())
                } else {
                    Err(Error::Parameter(format!(
                        "{} has no trainable parameters",
                        self.arch_id()
                    )))
                }
            }
        }
    }

    /// Architecture-specific constraint projection, applied after every
    /// optimizer step.
    pub fn project(&mut self, rng: &mut Rng) -> Result<()> {
        match self {
            Regularizer::Foe(f) => f.project(rng),
            Regularizer::Icnn(f) => {
                f.project();
                Ok(())
            }
            Regularizer::Idcnn(f) => {
                f.project();
                Ok(())
            }
            Regularizer::Quadratic(q) => {
                // convexity needs a nonnegative coefficient
                if q.coeff.data()[0] < T::zero() {
                    q.coeff = Tensor::scalar(T::zero());
                }
                Ok(())
            }
            // no constraints
            Regularizer::PatchCnn(_) | Regularizer::Lsr(_) | Regularizer::Tv => Ok(()),
            Regularizer::Epll(_) => Ok(()),
        }
    }

    pub fn build_value_graph(&self, g: &mut Graph<T>, x: NodeId) -> Result<NodeId> {
        match self {
            Regularizer::Foe(f) => f.build_value_graph(g, x),
            Regularizer::Icnn(f) => f.build_value_graph(g, x),
            Regularizer::Idcnn(f) => f.build_value_graph(g, x),
            Regularizer::PatchCnn(f) => f.build_value_graph(g, x),
            Regularizer::Lsr(f) => f.build_value_graph(g, x),
            Regularizer::Quadratic(q) => q.build_value_graph(g, x),
            Regularizer::Epll(_) | Regularizer::Tv => Err(Error::Unsupported(format!(
                "{} is not graph-backed",
                self.arch_id()
            ))),
        }
    }

    /// Value at `x` (closed-form paths where they exist, graphs otherwise).
    pub fn value(&self, x: &Image<T>) -> Result<T> {
        match self {
            Regularizer::Foe(f) => f.value(x),
            Regularizer::Icnn(f) => f.value(x),
            Regularizer::Idcnn(f) => f.value(x),
            Regularizer::PatchCnn(f) => f.value(x),
            Regularizer::Lsr(f) => f.value(x),
            Regularizer::Epll(f) => f.value(x),
            Regularizer::Quadratic(q) => Ok(q.coefficient() * T::of(0.5) * x.tensor().norm_sq()),
            Regularizer::Tv => Ok(tv_value(x)),
        }
    }

    /// Compile an evaluator for images of the given size.
    pub fn compile(&self, hw: (usize, usize)) -> Result<RegEval<T>> {
        RegEval::build(self, hw)
    }
}

/// Compiled evaluator: a reusable graph with value, gradient, and
/// Hessian-vector-product nodes, carrying an immutable snapshot of the
/// parameters. Safe to share across threads.
#[derive(Debug, Clone)]
pub enum RegEval<T: Scalar> {
    Graph(GraphEval<T>),
    /// FoE keeps analytic fast paths next to the graph.
    Foe(FoeRegularizer<T>),
    Epll(EpllRegularizer<T>),
    Tv,
}

#[derive(Debug, Clone)]
pub struct GraphEval<T: Scalar> {
    graph: Graph<T>,
    hw: (usize, usize),
    value_id: NodeId,
    grad_id: NodeId,
    hvp_id: Option<NodeId>,
    base: Bindings<T>,
}

impl<T: Scalar> GraphEval<T> {
    fn build(reg: &Regularizer<T>, hw: (usize, usize)) -> Result<Self> {
        let mut graph = Graph::new();
        let x = graph.leaf("__x", &[1, hw.0, hw.1])?;
        let value_id = reg.build_value_graph(&mut graph, x)?;
        let grad_id = graph.grad(value_id, &[x])?[0];
        // double backward may be unsupported (e.g. absolute potential)
        let hvp_id = (|| -> Result<NodeId> {
            let v = graph.leaf("__v", &[1, hw.0, hw.1])?;
            let s = graph.dot(grad_id, v)?;
            Ok(graph.grad(s, &[x])?[0])
        })()
        .ok();
        let mut base = Bindings::new();
        for (n, t) in reg.param_entries() {
            base.set(n, t);
        }
        Ok(GraphEval {
            graph,
            hw,
            value_id,
            grad_id,
            hvp_id,
            base,
        })
    }

    fn with_x(&self, x: &Image<T>) -> Result<Bindings<T>> {
        let mut b = self.base.clone();
        b.set("__x", x.tensor().reshape(&[1, self.hw.0, self.hw.1])?);
        Ok(b)
    }
}

impl<T: Scalar> RegEval<T> {
    fn build(reg: &Regularizer<T>, hw: (usize, usize)) -> Result<Self> {
        Ok(match reg {
            Regularizer::Foe(f) => RegEval::Foe(f.clone()),
            Regularizer::Epll(f) => RegEval::Epll(f.clone()),
            Regularizer::Tv => RegEval::Tv,
            other => RegEval::Graph(GraphEval::build(other, hw)?),
        })
    }

    pub fn value(&self, x: &Image<T>) -> Result<T> {
        match self {
            RegEval::Graph(g) => g.graph.eval_scalar(g.value_id, &g.with_x(x)?),
            RegEval::Foe(f) => f.value(x),
            RegEval::Epll(f) => f.value(x),
            RegEval::Tv => Ok(tv_value(x)),
        }
    }

    pub fn grad(&self, x: &Image<T>) -> Result<Image<T>> {
        match self {
            RegEval::Graph(g) => {
                let out = g.graph.eval(&[g.grad_id], &g.with_x(x)?)?.remove(0);
                Image::new(out.reshape(&[g.hw.0, g.hw.1])?)
            }
            RegEval::Foe(f) => f.grad(x),
            RegEval::Epll(f) => f.grad(x),
            RegEval::Tv => Err(Error::Unsupported(
                "tv gradient is not defined (nonsmooth); use pdhg_tv".into(),
            )),
        }
    }

    pub fn hvp(&self, x: &Image<T>, v: &Image<T>) -> Result<Image<T>> {
        match self {
            RegEval::Graph(g) => {
                let id = g.hvp_id.ok_or_else(|| {
                    Error::Unsupported("second-order unavailable for this architecture".into())
                })?;
                let mut b = g.with_x(x)?;
                b.set("__v", v.tensor().reshape(&[1, g.hw.0, g.hw.1])?);
                let out = g.graph.eval(&[id], &b)?.remove(0);
                Image::new(out.reshape(&[g.hw.0, g.hw.1])?)
            }
            RegEval::Foe(f) => f.hvp(x, v),
            RegEval::Epll(_) | RegEval::Tv => Err(Error::Unsupported(
                "second-order unavailable for this architecture".into(),
            )),
        }
    }
}

/// A regularizer deployed in the variational problem with regularization
/// weight `alpha` and input scaling `s`:
///
/// `R~(x) = (alpha / s^2) R(s x)`,
/// `grad R~(x) = (alpha / s) grad R(s x)`,
/// `hvp R~(x) = alpha hvp R(s x)`.
#[derive(Debug, Clone)]
pub struct Deployed<T: Scalar> {
    pub eval: RegEval<T>,
    pub alpha: T,
    pub scale: T,
}

impl<T: Scalar> Deployed<T> {
    pub fn new(eval: RegEval<T>, alpha: f64, scale: f64) -> Result<Self> {
        if alpha < 0.0 || scale <= 0.0 {
            return Err(Error::Parameter(
                "deployed regularizer: alpha must be >= 0 and s > 0".into(),
            ));
        }
        Ok(Deployed {
            eval,
            alpha: T::of(alpha),
            scale: T::of(scale),
        })
    }

    fn scaled(&self, x: &Image<T>) -> Image<T> {
        Image::new(x.tensor().scale(self.scale)).expect("2-d")
    }

    pub fn value(&self, x: &Image<T>) -> Result<T> {
        let v = self.eval.value(&self.scaled(x))?;
        Ok(self.alpha / (self.scale * self.scale) * v)
    }

    pub fn grad(&self, x: &Image<T>) -> Result<Image<T>> {
        let g = self.eval.grad(&self.scaled(x))?;
        Ok(Image::new(g.tensor().scale(self.alpha / self.scale))?)
    }

    pub fn hvp(&self, x: &Image<T>, v: &Image<T>) -> Result<Image<T>> {
        let sv = Image::new(v.tensor().scale(self.scale))?;
        let h = self.eval.hvp(&self.scaled(x), &sv)?;
        Ok(Image::new(h.tensor().scale(self.alpha / self.scale))?)
    }
}
