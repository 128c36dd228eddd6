//! Versioned, portable serialization of named parameter tensors plus
//! metadata.
//!
//! Layout: magic `VREGCKPT`, u32 version, length-prefixed UTF-8 metadata
//! block (`key=value` lines), then repeated records of
//! `(u32 name length, name bytes, u8 dtype code, u8 rank, u32 dims...,
//! little-endian payload)`. Floating-point metadata (alpha, scale) is
//! stored as hex bit patterns so round trips are bit-exact.

use crate::error::{Error, Result};
use crate::reg::{
    EpllRegularizer, FoeRegularizer, GmmPrior, IcnnRegularizer, IdcnnRegularizer,
    LsrRegularizer, PatchCnnRegularizer, Potential, QuadraticRegularizer, Regularizer,
};
use crate::scalar::Scalar;
use crate::tensor::{Padding, Tensor};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"VREGCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T: Scalar> {
    pub version: u32,
    /// Sorted key=value metadata; includes `arch`, `alpha_bits`,
    /// `scale_bits`, `scheme`, `seed`, `dataset_hash`, `val_psnr`, ...
    pub metadata: BTreeMap<String, String>,
    pub params: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(arch: &str) -> Self {
        let mut metadata = BTreeMap::new();
        metadata.insert("arch".into(), arch.into());
        metadata.insert("rng".into(), crate::tensor::RNG_ALGORITHM.into());
        let mut ck = Checkpoint {
            version: CHECKPOINT_VERSION,
            metadata,
            params: Vec::new(),
        };
        ck.set_alpha(1.0);
        ck.set_scale(1.0);
        ck
    }

    pub fn arch(&self) -> &str {
        self.metadata.get("arch").map(|s| s.as_str()).unwrap_or("")
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        self.metadata.insert(key.into(), value.to_string());
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(|s| s.as_str())
    }

    pub fn set_alpha(&mut self, alpha: f64) {
        self.metadata
            .insert("alpha_bits".into(), format!("{:016x}", alpha.to_bits()));
        self.metadata.insert("alpha".into(), format!("{alpha:e}"));
    }

    pub fn set_scale(&mut self, scale: f64) {
        self.metadata
            .insert("scale_bits".into(), format!("{:016x}", scale.to_bits()));
        self.metadata.insert("scale".into(), format!("{scale:e}"));
    }

    pub fn alpha(&self) -> f64 {
        self.meta("alpha_bits")
            .and_then(|s| u64::from_str_radix(s, 16).ok())
            .map(f64::from_bits)
            .unwrap_or(1.0)
    }

    pub fn scale(&self) -> f64 {
        self.meta("scale_bits")
            .and_then(|s| u64::from_str_radix(s, 16).ok())
            .map(f64::from_bits)
            .unwrap_or(1.0)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        let meta: String = self
            .metadata
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect();
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        for (name, t) in &self.params {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(T::DTYPE_CODE);
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if *pos + n > bytes.len() {
                return Err(Error::Format("checkpoint: truncated".into()));
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        if take(&mut pos, 8)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("checkpoint: missing VREGCKPT magic".into()));
        }
        let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint: unsupported version {version}"
            )));
        }
        let meta_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let meta_str = std::str::from_utf8(take(&mut pos, meta_len)?)
            .map_err(|_| Error::Format("checkpoint: metadata is not UTF-8".into()))?;
        let mut metadata = BTreeMap::new();
        for line in meta_str.lines() {
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("checkpoint: bad metadata line '{line}'")))?;
            metadata.insert(k.to_string(), v.to_string());
        }

        let elem = std::mem::size_of::<T>();
        let mut params = Vec::new();
        while pos < bytes.len() {
            let name_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(take(&mut pos, name_len)?)
                .map_err(|_| Error::Format("checkpoint: name is not UTF-8".into()))?
                .to_string();
            let dtype = take(&mut pos, 1)?[0];
            if dtype != T::DTYPE_CODE {
                return Err(Error::Format(format!(
                    "checkpoint: dtype code {dtype} does not match requested {}",
                    T::DTYPE_NAME
                )));
            }
            let rank = take(&mut pos, 1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize);
            }
            let n: usize = shape.iter().product();
            let payload = take(&mut pos, n * elem)?;
            let mut data = Vec::with_capacity(n);
            for i in 0..n {
                data.push(T::from_le_slice(&payload[i * elem..]));
            }
            params.push((name, Tensor::new(shape, data)?));
        }
        Ok(Checkpoint {
            version,
            metadata,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    fn param(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Format(format!("checkpoint: missing tensor '{name}'")))
    }

    /// Snapshot the regularizer's parameters into this checkpoint.
    pub fn store_regularizer(&mut self, reg: &Regularizer<T>) {
        self.metadata.insert("arch".into(), reg.arch_id().into());
        self.params = reg.param_entries();
        match reg {
            Regularizer::Foe(f) => {
                self.set_meta("potential", f.potential.name());
            }
            Regularizer::Lsr(l) => {
                self.set_meta("act_beta_bits", format!("{:016x}", l.act_beta.as_f64().to_bits()));
                self.set_meta("residual", l.residual);
            }
            Regularizer::Epll(e) => {
                self.set_meta("patch", e.prior.patch_size());
                let c = e.prior.components();
                let k = e.prior.dim();
                self.params = vec![
                    (
                        "gmm.weights".into(),
                        Tensor::new(vec![c], e.prior.weights.clone()).expect("weights"),
                    ),
                    (
                        "gmm.means".into(),
                        Tensor::new(vec![c, k], e.prior.means.concat()).expect("means"),
                    ),
                    (
                        "gmm.chol".into(),
                        Tensor::new(vec![c, k, k], e.prior.chol.concat()).expect("chol"),
                    ),
                ];
            }
            _ => {}
        }
    }

    /// Rebuild the regularizer from stored tensors and metadata.
    pub fn load_regularizer(&self) -> Result<Regularizer<T>> {
        match self.arch() {
            "crr" | "wcrr" | "foe" => {
                let mut blocks = Vec::new();
                for i in 0.. {
                    match self.params.iter().find(|(n, _)| n == &format!("foe.block{i}")) {
                        Some((_, t)) => blocks.push(t.clone()),
                        None => break,
                    }
                }
                if blocks.is_empty() {
                    return Err(Error::Format("checkpoint: foe has no blocks".into()));
                }
                let kernel = blocks[0].shape()[2];
                let potential = Potential::parse(self.meta("potential").unwrap_or("huber"))?;
                let mut reg = FoeRegularizer::filter_bank(
                    blocks[0].clone(),
                    potential,
                    Padding::Zero(kernel / 2),
                )?;
                reg.blocks = blocks;
                reg.alpha = self.param("foe.alpha")?.clone();
                reg.beta = self.param("foe.beta")?.clone();
                Ok(Regularizer::Foe(reg))
            }
            "icnn" => {
                let mut reg = IcnnRegularizer::init(
                    &crate::reg::IcnnConfig::default(),
                    &mut crate::tensor::Rng::new(0),
                )?;
                reg.w1 = self.param("icnn.w1")?.clone();
                reg.w2 = self.param("icnn.w2")?.clone();
                reg.a = self.param("icnn.a")?.clone();
                reg.beta = self.param("icnn.beta")?.clone();
                reg.padding = Padding::Zero(reg.w1.shape()[2] / 2);
                Ok(Regularizer::Icnn(reg))
            }
            "idcnn" => {
                let mut reg = IdcnnRegularizer::init(
                    &crate::reg::IcnnConfig::default(),
                    &mut crate::tensor::Rng::new(0),
                )?;
                reg.set_params(&self.params)?;
                reg.pos.padding = Padding::Zero(reg.pos.w1.shape()[2] / 2);
                reg.neg.padding = reg.pos.padding;
                Ok(Regularizer::Idcnn(reg))
            }
            "patch_cnn" => {
                let mut layers = Vec::new();
                for i in 0.. {
                    let k = self.params.iter().find(|(n, _)| n == &format!("pcnn.k{i}"));
                    let b = self.params.iter().find(|(n, _)| n == &format!("pcnn.b{i}"));
                    match (k, b) {
                        (Some((_, k)), Some((_, b))) => layers.push((k.clone(), b.clone())),
                        _ => break,
                    }
                }
                if layers.is_empty() {
                    return Err(Error::Format("checkpoint: patch_cnn has no layers".into()));
                }
                Ok(Regularizer::PatchCnn(PatchCnnRegularizer { layers }))
            }
            "lsr" => {
                let mut layers = Vec::new();
                for i in 0.. {
                    let k = self.params.iter().find(|(n, _)| n == &format!("lsr.k{i}"));
                    let b = self.params.iter().find(|(n, _)| n == &format!("lsr.b{i}"));
                    match (k, b) {
                        (Some((_, k)), Some((_, b))) => layers.push((k.clone(), b.clone())),
                        _ => break,
                    }
                }
                if layers.is_empty() {
                    return Err(Error::Format("checkpoint: lsr has no layers".into()));
                }
                let act_beta = self
                    .meta("act_beta_bits")
                    .and_then(|s| u64::from_str_radix(s, 16).ok())
                    .map(f64::from_bits)
                    .unwrap_or(0.2);
                let residual = self.meta("residual").map(|s| s == "true").unwrap_or(true);
                Ok(Regularizer::Lsr(LsrRegularizer {
                    layers,
                    act_beta: T::of(act_beta),
                    residual,
                }))
            }
            "epll" => {
                let patch: usize = self
                    .meta("patch")
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Format("checkpoint: epll missing patch size".into()))?;
                let w = self.param("gmm.weights")?;
                let m = self.param("gmm.means")?;
                let l = self.param("gmm.chol")?;
                let c = w.len();
                let k = patch * patch;
                let means = (0..c).map(|i| m.data()[i * k..(i + 1) * k].to_vec()).collect();
                let chol = (0..c)
                    .map(|i| l.data()[i * k * k..(i + 1) * k * k].to_vec())
                    .collect();
                let prior = GmmPrior::from_parts(patch, w.data().to_vec(), means, chol);
                Ok(Regularizer::Epll(EpllRegularizer::new(prior)))
            }
            "quadratic" => {
                let c = self.param("quad.c")?.data()[0];
                Ok(Regularizer::Quadratic(QuadraticRegularizer {
                    coeff: Tensor::scalar(c),
                }))
            }
            "tv" => Ok(Regularizer::Tv),
            other => Err(Error::Format(format!("checkpoint: unknown arch '{other}'"))),
        }
    }
}
