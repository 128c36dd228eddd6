//! Fields-of-experts ridge regularizers.
//!
//! `R(x) = sum_j <1, psi_j(W_j x)>` where the filters `W_j` form a linear
//! multi-convolution (composition of zero-padded convolutions) and the
//! potentials share one profile adapted per filter:
//! `psi_j(t) = psi^beta(a_j t) / a_j^2`.
//!
//! With the Huber or log-cosh profile the regularizer is convex (CRR);
//! with the shifted profile `psi^beta - psi^1` it is 1-weakly convex
//! (WCRR) once the stacked filter operator has unit spectral norm.

use crate::autodiff::{spectral_norm, ConvChain, Graph, NodeId, PwKind};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{conv2d, Image, Padding, Rng, Tensor};

/// Shared potential profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Potential {
    /// Convex: Moreau envelope of `|.|` (CRR).
    Huber,
    /// Convex, smooth everywhere (CRR).
    LogCosh,
    /// 1-weakly convex shifted profile (WCRR).
    ShiftedHuber,
    /// `|.|`; value/gradient only, for the TV filter-bank configuration.
    Absolute,
}

impl Potential {
    pub fn kind(self) -> PwKind {
        match self {
            Potential::Huber => PwKind::Huber,
            Potential::LogCosh => PwKind::LogCosh,
            Potential::ShiftedHuber => PwKind::ShiftedHuber,
            Potential::Absolute => PwKind::Absolute,
        }
    }

    pub fn is_weakly_convex(self) -> bool {
        matches!(self, Potential::ShiftedHuber)
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "huber" => Potential::Huber,
            "logcosh" => Potential::LogCosh,
            "shifted_huber" => Potential::ShiftedHuber,
            "absolute" => Potential::Absolute,
            other => return Err(Error::Config(format!("unknown potential '{other}'"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Potential::Huber => "huber",
            Potential::LogCosh => "logcosh",
            Potential::ShiftedHuber => "shifted_huber",
            Potential::Absolute => "absolute",
        }
    }
}

#[derive(Debug, Clone)]
pub struct FoeConfig {
    /// Kernel side length of every block.
    pub kernel: usize,
    /// Output channels per block; input is single-channel.
    pub channels: Vec<usize>,
    pub potential: Potential,
    pub beta_init: f64,
    /// Spatial size used for the spectral-norm power iteration.
    pub norm_shape: (usize, usize),
    /// Power iterations per projection.
    pub norm_iters: usize,
}

impl Default for FoeConfig {
    fn default() -> Self {
        FoeConfig {
            kernel: 5,
            channels: vec![4, 8, 64],
            potential: Potential::Huber,
            beta_init: 5.0,
            norm_shape: (40, 40),
            norm_iters: 50,
        }
    }
}

impl FoeConfig {
    /// Reduced widths for CPU desk scale.
    pub fn desk(potential: Potential) -> Self {
        FoeConfig {
            channels: vec![4, 8, 16],
            potential,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct FoeRegularizer<T: Scalar> {
    /// Multiconv kernels, block i maps `channels[i-1] -> channels[i]`.
    pub blocks: Vec<Tensor<T>>,
    /// Per-filter scales `a_j`, one per final channel.
    pub alpha: Tensor<T>,
    /// Shared potential parameter (single element, learnable).
    pub beta: Tensor<T>,
    pub potential: Potential,
    pub padding: Padding,
    norm_shape: (usize, usize),
    norm_iters: usize,
    warm: Option<Tensor<T>>,
}

impl<T: Scalar> FoeRegularizer<T> {
    /// Random initialization; kernels are drawn i.i.d. Gaussian and
    /// immediately projected onto the constraint set.
    pub fn init(cfg: &FoeConfig, rng: &mut Rng) -> Result<Self> {
        if cfg.beta_init <= 0.0 {
            return Err(Error::Parameter("foe: beta must be positive".into()));
        }
        let k = cfg.kernel;
        let mut blocks = Vec::with_capacity(cfg.channels.len());
        let mut c_in = 1usize;
        for &c_out in &cfg.channels {
            let std = 1.0 / ((c_in * k * k) as f64).sqrt();
            blocks.push(crate::tensor::sample_gaussian(rng, &[c_out, c_in, k, k], std));
            c_in = c_out;
        }
        let c = *cfg.channels.last().expect("at least one block");
        let mut me = FoeRegularizer {
            blocks,
            alpha: Tensor::ones(&[c]),
            beta: Tensor::scalar(T::of(cfg.beta_init)),
            potential: cfg.potential,
            padding: Padding::Zero(k / 2),
            norm_shape: cfg.norm_shape,
            norm_iters: cfg.norm_iters,
            warm: None,
        };
        me.project(rng)?;
        Ok(me)
    }

    /// Explicit single-block filter bank (e.g. the TV configuration).
    pub fn filter_bank(
        kernels: Tensor<T>,
        potential: Potential,
        padding: Padding,
    ) -> Result<Self> {
        let c = kernels.shape()[0];
        Ok(FoeRegularizer {
            blocks: vec![kernels],
            alpha: Tensor::ones(&[c]),
            beta: Tensor::scalar(T::one()),
            potential,
            padding,
            norm_shape: (32, 32),
            norm_iters: 50,
            warm: None,
        })
    }

    pub fn arch_id(&self) -> &'static str {
        if self.potential.is_weakly_convex() {
            "wcrr"
        } else {
            "crr"
        }
    }

    pub fn beta_value(&self) -> T {
        self.beta.data()[0]
    }

    fn check(&self) -> Result<()> {
        if self.beta_value() <= T::zero() {
            return Err(Error::Parameter("foe: beta must be positive".into()));
        }
        if self.alpha.data().iter().any(|&a| a == T::zero()) {
            return Err(Error::Parameter("foe: alpha entries must be nonzero".into()));
        }
        Ok(())
    }

    /// Stacked filter responses `W x`, shape `[c, H, W]`.
    pub fn responses(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut v = x.clone();
        for b in &self.blocks {
            v = conv2d(&v, b, self.padding, 1)?;
        }
        Ok(v)
    }

    fn responses_adjoint(&self, u: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
        let chain = ConvChain {
            kernels: self.blocks.clone(),
            padding: self.padding,
            stride: 1,
        };
        chain.adjoint(u, h, w)
    }

    /// `R(x)`, analytic path.
    pub fn value(&self, x: &Image<T>) -> Result<T> {
        self.check()?;
        let xt = x.tensor().reshape(&[1, x.height(), x.width()])?;
        let r = self.responses(&xt)?;
        let (c, hw) = (r.shape()[0], r.shape()[1] * r.shape()[2]);
        let beta = self.beta_value();
        let kind = self.potential.kind();
        let mut acc = T::zero();
        for ci in 0..c {
            let a = self.alpha.data()[ci];
            let inv_a2 = T::one() / (a * a);
            for &t in &r.data()[ci * hw..(ci + 1) * hw] {
                acc += kind.eval(0, a * t, beta)? * inv_a2;
            }
        }
        Ok(acc)
    }

    /// `grad R(x) = W^T [ psi'(a_j (Wx)_j) / a_j ]`, analytic path.
    pub fn grad(&self, x: &Image<T>) -> Result<Image<T>> {
        self.check()?;
        let (h, w) = (x.height(), x.width());
        let xt = x.tensor().reshape(&[1, h, w])?;
        let r = self.responses(&xt)?;
        let (c, hw) = (r.shape()[0], r.shape()[1] * r.shape()[2]);
        let beta = self.beta_value();
        let kind = self.potential.kind();
        let mut u = Vec::with_capacity(r.len());
        for ci in 0..c {
            let a = self.alpha.data()[ci];
            let inv_a = T::one() / a;
            for &t in &r.data()[ci * hw..(ci + 1) * hw] {
                u.push(kind.eval(1, a * t, beta)? * inv_a);
            }
        }
        let u = Tensor::new(r.shape().to_vec(), u)?;
        let g = self.responses_adjoint(&u, h, w)?;
        Image::new(g.reshape(&[h, w])?)
    }

    /// Hessian-vector product `W^T diag(psi''(a_j (Wx)_j)) W v`, analytic.
    pub fn hvp(&self, x: &Image<T>, v: &Image<T>) -> Result<Image<T>> {
        self.check()?;
        let (h, w) = (x.height(), x.width());
        let xt = x.tensor().reshape(&[1, h, w])?;
        let vt = v.tensor().reshape(&[1, h, w])?;
        let r = self.responses(&xt)?;
        let rv = self.responses(&vt)?;
        let (c, hw) = (r.shape()[0], r.shape()[1] * r.shape()[2]);
        let beta = self.beta_value();
        let kind = self.potential.kind();
        let mut u = Vec::with_capacity(r.len());
        for ci in 0..c {
            let a = self.alpha.data()[ci];
            for i in ci * hw..(ci + 1) * hw {
                u.push(kind.eval(2, a * r.data()[i], beta)? * rv.data()[i]);
            }
        }
        let u = Tensor::new(r.shape().to_vec(), u)?;
        let g = self.responses_adjoint(&u, h, w)?;
        Image::new(g.reshape(&[h, w])?)
    }

    /// Append the value graph on input node `x` (`[1,H,W]`).
    pub fn build_value_graph(&self, g: &mut Graph<T>, x: NodeId) -> Result<NodeId> {
        let mut v = x;
        for (i, b) in self.blocks.iter().enumerate() {
            let k = g
                .leaf_id(&format!("foe.block{i}"))
                .map_or_else(|| g.leaf(format!("foe.block{i}"), b.shape()), Ok)?;
            v = g.conv(v, k, self.padding, 1)?;
        }
        let alpha = g
            .leaf_id("foe.alpha")
            .map_or_else(|| g.leaf("foe.alpha", self.alpha.shape()), Ok)?;
        let beta = g
            .leaf_id("foe.beta")
            .map_or_else(|| g.leaf("foe.beta", &[1]), Ok)?;
        let scaled = g.channel_scale(v, alpha)?;
        let pot = if self.potential.kind().has_param() {
            g.pointwise(self.potential.kind(), scaled, Some(beta))?
        } else {
            g.pointwise(self.potential.kind(), scaled, None)?
        };
        let inv_a2 = g.pointwise(PwKind::RecipSquare, alpha, None)?;
        let weighted = g.channel_scale(pot, inv_a2)?;
        Ok(g.sum(weighted))
    }

    /// Ordered named parameters.
    pub fn param_entries(&self) -> Vec<(String, Tensor<T>)> {
        let mut out: Vec<(String, Tensor<T>)> = self
            .blocks
            .iter()
            .enumerate()
            .map(|(i, b)| (format!("foe.block{i}"), b.clone()))
            .collect();
        out.push(("foe.alpha".into(), self.alpha.clone()));
        out.push(("foe.beta".into(), self.beta.clone()));
        out
    }

    pub fn set_params(&mut self, params: &[(String, Tensor<T>)]) -> Result<()> {
        for (name, value) in params {
            match name.as_str() {
                "foe.alpha" => self.alpha = value.clone(),
                "foe.beta" => self.beta = value.clone(),
                other => {
                    let idx: usize = other
                        .strip_prefix("foe.block")
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| Error::Parameter(format!("unknown foe param '{other}'")))?;
                    self.blocks[idx] = value.clone();
                }
            }
        }
        Ok(())
    }

    /// Constraint projection: zero-mean first-block kernels, unit spectral
    /// norm of the stacked operator, beta kept positive.
    pub fn project(&mut self, rng: &mut Rng) -> Result<()> {
        // zero mean per output channel of the first block
        {
            let b0 = &mut self.blocks[0];
            let s = b0.shape().to_vec();
            let per = s[1] * s[2] * s[3];
            for o in 0..s[0] {
                let sl = &mut b0.data_mut()[o * per..(o + 1) * per];
                let mut mean = T::zero();
                for &v in sl.iter() {
                    mean += v;
                }
                mean = mean / T::of(per as f64);
                for v in sl.iter_mut() {
                    *v -= mean;
                }
            }
        }
        // unit spectral norm of the stacked operator; each of the B blocks
        // absorbs the B-th root so the product scales by 1/sigma
        let chain = ConvChain {
            kernels: self.blocks.clone(),
            padding: self.padding,
            stride: 1,
        };
        let (sigma, warm) =
            spectral_norm(&chain, self.norm_shape, self.norm_iters, rng, self.warm.as_ref())?;
        self.warm = Some(warm);
        if sigma > T::zero() {
            let root = T::of(sigma.as_f64().powf(1.0 / self.blocks.len() as f64));
            for b in &mut self.blocks {
                *b = b.scale(T::one() / root);
            }
        }
        // beta floor keeps the potential well-defined
        if self.beta.data()[0] < T::of(1e-3) {
            self.beta.data_mut()[0] = T::of(1e-3);
        }
        // alpha entries must stay nonzero
        for a in self.alpha.data_mut() {
            if a.abs() < T::of(1e-6) {
                *a = if *a < T::zero() { T::of(-1e-6) } else { T::of(1e-6) };
            }
        }
        Ok(())
    }

    /// Current spectral norm estimate of the stacked operator.
    pub fn operator_norm(&self, rng: &mut Rng, iterations: usize) -> Result<T> {
        let chain = ConvChain {
            kernels: self.blocks.clone(),
            padding: self.padding,
            stride: 1,
        };
        Ok(spectral_norm(&chain, self.norm_shape, iterations, rng, self.warm.as_ref())?.0)
    }
}
