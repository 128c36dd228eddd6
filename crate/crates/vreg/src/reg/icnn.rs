//! Input-convex regularizers and their differences.
//!
//! Two convolution layers without skip connections:
//! `R(x) = sum_j a_j <1, psi(W_2 psi(W_1 x))_j>` with `psi` the smoothed
//! ReLU. Convexity holds because `W_2` and the output weights `a_j` are
//! kept entrywise nonnegative (zero clipping after every training step)
//! and `psi` is convex and nondecreasing.

use crate::autodiff::{Graph, NodeId, PwKind};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Image, Padding, Rng, Tensor};

#[derive(Debug, Clone)]
pub struct IcnnConfig {
    pub kernel: usize,
    pub channels: usize,
    pub beta_init: f64,
}

impl Default for IcnnConfig {
    fn default() -> Self {
        IcnnConfig {
            kernel: 5,
            channels: 32,
            beta_init: 0.01,
        }
    }
}

impl IcnnConfig {
    pub fn desk() -> Self {
        IcnnConfig {
            channels: 8,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct IcnnRegularizer<T: Scalar> {
    /// First-layer kernels, unconstrained sign.
    pub w1: Tensor<T>,
    /// Second-layer kernels, entrywise nonnegative.
    pub w2: Tensor<T>,
    /// Output weights, nonnegative.
    pub a: Tensor<T>,
    /// Smoothing of the ReLU surrogate (learnable, kept positive).
    pub beta: Tensor<T>,
    pub padding: Padding,
    /// Distinguishes the two halves of a difference pair in leaf names.
    tag: &'static str,
}

impl<T: Scalar> IcnnRegularizer<T> {
    pub fn init(cfg: &IcnnConfig, rng: &mut Rng) -> Result<Self> {
        Self::init_tagged(cfg, rng, "icnn")
    }

    fn init_tagged(cfg: &IcnnConfig, rng: &mut Rng, tag: &'static str) -> Result<Self> {
        let k = cfg.kernel;
        let c = cfg.channels;
        let std1 = 1.0 / ((k * k) as f64).sqrt();
        let w1 = crate::tensor::sample_gaussian(rng, &[c, 1, k, k], std1);
        // nonnegative initialization: folded Gaussian
        let std2 = 1.0 / ((c * k * k) as f64).sqrt();
        let w2 = crate::tensor::sample_gaussian::<T>(rng, &[c, c, k, k], std2).map(|v| v.abs());
        let a = Tensor::full(&[c], T::of(1.0 / c as f64));
        Ok(IcnnRegularizer {
            w1,
            w2,
            a,
            beta: Tensor::scalar(T::of(cfg.beta_init)),
            padding: Padding::Zero(k / 2),
            tag,
        })
    }

    fn check(&self) -> Result<()> {
        if self.w2.data().iter().any(|&v| v < T::zero()) {
            return Err(Error::InvariantViolation(
                "icnn: W2 has negative entries".into(),
            ));
        }
        if self.a.data().iter().any(|&v| v < T::zero()) {
            return Err(Error::InvariantViolation(
                "icnn: output weights have negative entries".into(),
            ));
        }
        Ok(())
    }

    pub fn build_value_graph(&self, g: &mut Graph<T>, x: NodeId) -> Result<NodeId> {
        let name = |s: &str| format!("{}.{s}", self.tag);
        let w1 = g
            .leaf_id(&name("w1"))
            .map_or_else(|| g.leaf(name("w1"), self.w1.shape()), Ok)?;
        let w2 = g
            .leaf_id(&name("w2"))
            .map_or_else(|| g.leaf(name("w2"), self.w2.shape()), Ok)?;
        let a = g
            .leaf_id(&name("a"))
            .map_or_else(|| g.leaf(name("a"), self.a.shape()), Ok)?;
        let beta = g
            .leaf_id(&name("beta"))
            .map_or_else(|| g.leaf(name("beta"), &[1]), Ok)?;

        let z1 = g.conv(x, w1, self.padding, 1)?;
        let h1 = g.pointwise(PwKind::SmoothedRelu, z1, Some(beta))?;
        let z2 = g.conv(h1, w2, self.padding, 1)?;
        let h2 = g.pointwise(PwKind::SmoothedRelu, z2, Some(beta))?;
        let per_channel = g.channel_sum(h2)?;
        g.dot(per_channel, a)
    }

    /// Value through a freshly built graph (the production path for this
    /// architecture; an independent loop re-implementation lives in the
    /// tests).
    pub fn value(&self, x: &Image<T>) -> Result<T> {
        self.check()?;
        let mut g = Graph::new();
        let xn = g.leaf("x", &[1, x.height(), x.width()])?;
        let out = self.build_value_graph(&mut g, xn)?;
        let mut b = crate::autodiff::Bindings::new();
        b.set("x", x.tensor().reshape(&[1, x.height(), x.width()])?);
        self.bind_params(&mut b);
        g.eval_scalar(out, &b)
    }

    pub fn bind_params(&self, b: &mut crate::autodiff::Bindings<T>) {
        for (name, t) in self.param_entries() {
            b.set(name, t);
        }
    }

    pub fn param_entries(&self) -> Vec<(String, Tensor<T>)> {
        vec![
            (format!("{}.w1", self.tag), self.w1.clone()),
            (format!("{}.w2", self.tag), self.w2.clone()),
            (format!("{}.a", self.tag), self.a.clone()),
            (format!("{}.beta", self.tag), self.beta.clone()),
        ]
    }

    pub fn set_params(&mut self, params: &[(String, Tensor<T>)]) -> Result<()> {
        for (name, value) in params {
            let Some(field) = name.strip_prefix(&format!("{}.", self.tag)) else {
                return Err(Error::Parameter(format!("unknown icnn param '{name}'")));
            };
            match field {
                "w1" => self.w1 = value.clone(),
                "w2" => self.w2 = value.clone(),
                "a" => self.a = value.clone(),
                "beta" => self.beta = value.clone(),
                other => return Err(Error::Parameter(format!("unknown icnn param '{other}'"))),
            }
        }
        Ok(())
    }

    /// Zero clipping of `W2` and `a`; beta floored to stay positive.
    pub fn project(&mut self) {
        self.w2 = self.w2.map(|v| v.max(T::zero()));
        self.a = self.a.map(|v| v.max(T::zero()));
        if self.beta.data()[0] < T::of(1e-4) {
            self.beta.data_mut()[0] = T::of(1e-4);
        }
    }
}

/// Difference of two input-convex networks.
#[derive(Debug, Clone)]
pub struct IdcnnRegularizer<T: Scalar> {
    pub pos: IcnnRegularizer<T>,
    pub neg: IcnnRegularizer<T>,
}

impl<T: Scalar> IdcnnRegularizer<T> {
    pub fn init(cfg: &IcnnConfig, rng: &mut Rng) -> Result<Self> {
        Ok(IdcnnRegularizer {
            pos: IcnnRegularizer::init_tagged(cfg, rng, "idcnn_pos")?,
            neg: IcnnRegularizer::init_tagged(cfg, rng, "idcnn_neg")?,
        })
    }

    pub fn value(&self, x: &Image<T>) -> Result<T> {
        Ok(self.pos.value(x)? - self.neg.value(x)?)
    }

    pub fn build_value_graph(&self, g: &mut Graph<T>, x: NodeId) -> Result<NodeId> {
        let p = self.pos.build_value_graph(g, x)?;
        let n = self.neg.build_value_graph(g, x)?;
        g.sub(p, n)
    }

    pub fn param_entries(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = self.pos.param_entries();
        out.extend(self.neg.param_entries());
        out
    }

    pub fn set_params(&mut self, params: &[(String, Tensor<T>)]) -> Result<()> {
        for entry in params {
            if entry.0.starts_with("idcnn_pos.") {
                self.pos.set_params(std::slice::from_ref(entry))?;
            } else {
                self.neg.set_params(std::slice::from_ref(entry))?;
            }
        }
        Ok(())
    }

    pub fn project(&mut self) {
        self.pos.project();
        self.neg.project();
    }
}
