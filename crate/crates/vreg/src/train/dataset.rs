//! Training datasets: paired (clean, measurement) sets and patch sets.

use crate::error::{Error, Result};
use crate::operators::ForwardOp;
use crate::scalar::Scalar;
use crate::tensor::{sample_gaussian, Image, Rng, Tensor};

/// Clean images with measurements generated as `y_i = H x_i + n_i`.
///
/// Noise draws come from per-index substreams of the dataset seed, so
/// regeneration from `(seed, op, sigma)` is bit-exact and independent of
/// iteration order.
#[derive(Debug, Clone)]
pub struct PairedDataset<T: Scalar> {
    pub clean: Vec<Image<T>>,
    pub measurements: Vec<Tensor<T>>,
    pub op: ForwardOp,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl<T: Scalar> PairedDataset<T> {
    pub fn generate(
        clean: Vec<Image<T>>,
        op: ForwardOp,
        noise_sigma: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut measurements = Vec::with_capacity(clean.len());
        for (i, x) in clean.iter().enumerate() {
            let hx = op.apply(x)?;
            let mut rng = Rng::substream(seed, i as u64);
            let n = sample_gaussian::<T>(&mut rng, hx.shape(), noise_sigma);
            measurements.push(hx.add(&n)?);
        }
        Ok(PairedDataset {
            clean,
            measurements,
            op,
            noise_sigma,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.clean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean.is_empty()
    }

    pub fn pair(&self, i: usize) -> (&Image<T>, &Tensor<T>) {
        (&self.clean[i], &self.measurements[i])
    }
}

/// Patches cut from a list of source images.
#[derive(Debug, Clone)]
pub struct PatchDataset<T: Scalar> {
    pub patch: usize,
    pub patches: Vec<Image<T>>,
    pub seed: u64,
}

impl<T: Scalar> PatchDataset<T> {
    /// `count` random patches (uniform over images and offsets).
    pub fn random(images: &[Image<T>], patch: usize, count: usize, seed: u64) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Parameter("patch dataset: no source images".into()));
        }
        let mut rng = Rng::new(seed);
        let mut patches = Vec::with_capacity(count);
        for _ in 0..count {
            let img = &images[rng.below(images.len())];
            if img.height() < patch || img.width() < patch {
                return Err(Error::Parameter(format!(
                    "patch dataset: image {}x{} smaller than patch {patch}",
                    img.height(),
                    img.width()
                )));
            }
            let r = rng.below(img.height() - patch + 1);
            let c = rng.below(img.width() - patch + 1);
            patches.push(Image::from_fn(patch, patch, |i, j| img.get(r + i, c + j)));
        }
        Ok(PatchDataset {
            patch,
            patches,
            seed,
        })
    }

    /// All patches on a regular stride grid.
    pub fn grid(images: &[Image<T>], patch: usize, stride: usize, seed: u64) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Parameter("patch dataset: stride must be >= 1".into()));
        }
        let mut patches = Vec::new();
        for img in images {
            if img.height() < patch || img.width() < patch {
                continue;
            }
            let mut r = 0;
            while r + patch <= img.height() {
                let mut c = 0;
                while c + patch <= img.width() {
                    patches.push(Image::from_fn(patch, patch, |i, j| img.get(r + i, c + j)));
                    c += stride;
                }
                r += stride;
            }
        }
        if patches.is_empty() {
            return Err(Error::Parameter(
                "patch dataset: no image large enough for the patch size".into(),
            ));
        }
        Ok(PatchDataset {
            patch,
            patches,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    /// Flattened patch vectors (row-major), for the mixture trainer.
    pub fn vectors(&self) -> Vec<Vec<T>> {
        self.patches
            .iter()
            .map(|p| p.tensor().data().to_vec())
            .collect()
    }
}
