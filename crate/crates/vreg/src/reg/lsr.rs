//! Least-squares residual regularizer: `R(x) = 0.5 ||x - U(x)||^2`
//! penalizes the distance to the fixed-point set of a small CNN `U`.
//!
//! `U(x) = x + net(x)` (residual connection; `net` is the trainable part,
//! which doubles as the artifact extractor of network-Tikhonov training).

use crate::autodiff::{Graph, NodeId, PwKind};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Image, Padding, Rng, Tensor};

#[derive(Debug, Clone)]
pub struct LsrConfig {
    pub layers: usize,
    pub hidden: usize,
    /// Smoothing of the ReLU surrogate activation (fixed).
    pub act_beta: f64,
    /// Whether `U` includes the identity skip.
    pub residual: bool,
}

impl Default for LsrConfig {
    fn default() -> Self {
        LsrConfig {
            layers: 7,
            hidden: 16,
            act_beta: 0.2,
            residual: true,
        }
    }
}

impl LsrConfig {
    pub fn desk() -> Self {
        LsrConfig {
            layers: 5,
            hidden: 8,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct LsrRegularizer<T: Scalar> {
    /// `(kernels, bias)` per 3x3 zero-padded layer, widths 1 -> h .. -> 1.
    pub layers: Vec<(Tensor<T>, Tensor<T>)>,
    pub act_beta: T,
    pub residual: bool,
}

impl<T: Scalar> LsrRegularizer<T> {
    pub fn init(cfg: &LsrConfig, rng: &mut Rng) -> Result<Self> {
        if cfg.layers < 2 {
            return Err(Error::Parameter("lsr: need at least 2 layers".into()));
        }
        let mut layers = Vec::with_capacity(cfg.layers);
        let mut c_in = 1usize;
        for i in 0..cfg.layers {
            let c_out = if i + 1 == cfg.layers { 1 } else { cfg.hidden };
            let std = 1.0 / ((c_in * 9) as f64).sqrt();
            layers.push((
                crate::tensor::sample_gaussian(rng, &[c_out, c_in, 3, 3], std),
                Tensor::zeros(&[c_out]),
            ));
            c_in = c_out;
        }
        Ok(LsrRegularizer {
            layers,
            act_beta: T::of(cfg.act_beta),
            residual: cfg.residual,
        })
    }

    /// The trainable part `net(x)` as a graph (`[1,H,W]` in and out).
    pub fn build_net_graph(&self, g: &mut Graph<T>, x: NodeId) -> Result<NodeId> {
        let beta = match g.leaf_id("lsr.act_beta") {
            Some(id) => id,
            None => g.constant(Tensor::scalar(self.act_beta)),
        };
        let mut v = x;
        let last = self.layers.len() - 1;
        for (i, (k, b)) in self.layers.iter().enumerate() {
            let kn = g
                .leaf_id(&format!("lsr.k{i}"))
                .map_or_else(|| g.leaf(format!("lsr.k{i}"), k.shape()), Ok)?;
            let bn = g
                .leaf_id(&format!("lsr.b{i}"))
                .map_or_else(|| g.leaf(format!("lsr.b{i}"), b.shape()), Ok)?;
            v = g.conv(v, kn, Padding::Zero(1), 1)?;
            v = g.channel_bias(v, bn)?;
            if i != last {
                v = g.pointwise(PwKind::SmoothedRelu, v, Some(beta))?;
            }
        }
        Ok(v)
    }

    /// `R(x) = 0.5 ||x - U(x)||^2`.
    pub fn build_value_graph(&self, g: &mut Graph<T>, x: NodeId) -> Result<NodeId> {
        let net = self.build_net_graph(g, x)?;
        // x - U(x) is -net(x) with the residual skip, x - net(x) without
        let diff = if self.residual {
            g.scale(net, -T::one())
        } else {
            g.sub(x, net)?
        };
        let d = g.dot(diff, diff)?;
        Ok(g.scale(d, T::of(0.5)))
    }

    pub fn value(&self, x: &Image<T>) -> Result<T> {
        let mut g = Graph::new();
        let xn = g.leaf("x", &[1, x.height(), x.width()])?;
        let out = self.build_value_graph(&mut g, xn)?;
        let mut b = crate::autodiff::Bindings::new();
        b.set("x", x.tensor().reshape(&[1, x.height(), x.width()])?);
        for (n, t) in self.param_entries() {
            b.set(n, t);
        }
        g.eval_scalar(out, &b)
    }

    pub fn param_entries(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for (i, (k, b)) in self.layers.iter().enumerate() {
            out.push((format!("lsr.k{i}"), k.clone()));
            out.push((format!("lsr.b{i}"), b.clone()));
        }
        out
    }

    pub fn set_params(&mut self, params: &[(String, Tensor<T>)]) -> Result<()> {
        for (name, value) in params {
            let (field, idx) = name
                .strip_prefix("lsr.")
                .and_then(|s| s.split_at_checked(1))
                .ok_or_else(|| Error::Parameter(format!("unknown lsr param '{name}'")))?;
            let i: usize = idx
                .parse()
                .map_err(|_| Error::Parameter(format!("unknown lsr param '{name}'")))?;
            match field {
                "k" => self.layers[i].0 = value.clone(),
                "b" => self.layers[i].1 = value.clone(),
                _ => return Err(Error::Parameter(format!("unknown lsr param '{name}'"))),
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Bindings;
    use crate::tensor::{sample_gaussian, Rng};

    fn desk(seed: u64, residual: bool) -> LsrRegularizer<f64> {
        LsrRegularizer::init(
            &LsrConfig {
                layers: 3,
                hidden: 4,
                act_beta: 0.2,
                residual,
            },
            &mut Rng::new(seed),
        )
        .unwrap()
    }

    #[test]
    fn identity_map_gives_zero_everywhere() {
        // residual net with zero inner weights: U(x) = x, so R = 0
        let mut reg = desk(1, true);
        for (k, b) in &mut reg.layers {
            *k = Tensor::zeros(k.shape());
            *b = Tensor::zeros(b.shape());
        }
        let mut rng = Rng::new(2);
        for _ in 0..3 {
            let x = Image::new(sample_gaussian::<f64>(&mut rng, &[8, 8], 1.0)).unwrap();
            assert_eq!(reg.value(&x).unwrap(), 0.0);
        }
    }

    #[test]
    fn zero_map_gives_half_norm_squared() {
        // U = 0: value = 0.5||x||^2, grad = x
        let mut reg = desk(3, false);
        for (k, b) in &mut reg.layers {
            *k = Tensor::zeros(k.shape());
            *b = Tensor::zeros(b.shape());
        }
        let mut rng = Rng::new(4);
        let x = Image::new(sample_gaussian::<f64>(&mut rng, &[8, 8], 1.0)).unwrap();
        let v = reg.value(&x).unwrap();
        assert!((v - 0.5 * x.tensor().norm_sq()).abs() < 1e-14);

        let mut g = Graph::new();
        let xn = g.leaf("x", &[1, 8, 8]).unwrap();
        let out = reg.build_value_graph(&mut g, xn).unwrap();
        let gx = g.grad(out, &[xn]).unwrap()[0];
        let mut b = Bindings::new();
        b.set("x", x.tensor().reshape(&[1, 8, 8]).unwrap());
        for (n, t) in reg.param_entries() {
            b.set(n, t);
        }
        let grad = g.eval(&[gx], &b).unwrap().remove(0);
        for (a, w) in grad.data().iter().zip(x.tensor().data()) {
            assert!((a - w).abs() < 1e-14);
        }
    }

    #[test]
    fn grad_matches_finite_differences() {
        let reg = desk(5, true);
        let mut rng = Rng::new(6);
        let x = Image::new(sample_gaussian::<f64>(&mut rng, &[16, 16], 0.5)).unwrap();

        let mut g = Graph::new();
        let xn = g.leaf("x", &[1, 16, 16]).unwrap();
        let out = reg.build_value_graph(&mut g, xn).unwrap();
        let gx = g.grad(out, &[xn]).unwrap()[0];
        let mut b = Bindings::new();
        b.set("x", x.tensor().reshape(&[1, 16, 16]).unwrap());
        for (n, t) in reg.param_entries() {
            b.set(n, t);
        }
        let grad = g.eval(&[gx], &b).unwrap().remove(0);

        let h = 1e-5;
        for idx in [3usize, 50, 130, 255] {
            let (r, c) = (idx / 16, idx % 16);
            let mut xp = x.clone();
            xp.set(r, c, x.get(r, c) + h);
            let mut xm = x.clone();
            xm.set(r, c, x.get(r, c) - h);
            let fd = (reg.value(&xp).unwrap() - reg.value(&xm).unwrap()) / (2.0 * h);
            let an = grad.data()[idx];
            assert!(
                (fd - an).abs() <= 1e-5 * an.abs().max(1e-3),
                "fd {fd} vs analytic {an}"
            );
        }
    }
}
