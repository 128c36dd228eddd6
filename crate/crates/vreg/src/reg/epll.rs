//! Expected patch log-likelihood: average negative log density of a
//! Gaussian mixture over all (or a random subset of) image patches.
//!
//! Covariances are stored as lower Cholesky factors; densities are
//! evaluated through triangular solves and combined with log-sum-exp.
//! Images are zero-padded by `l - 1` pixels before patch extraction so
//! boundary pixels are covered by as many patches as interior ones.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Image, Rng};

/// Dense lower-triangular Cholesky factorization of a symmetric positive
/// definite matrix (row-major `k x k`).
pub fn cholesky<T: Scalar>(a: &[T], k: usize) -> Result<Vec<T>> {
    let mut l = vec![T::zero(); k * k];
    for i in 0..k {
        for j in 0..=i {
            let mut s = a[i * k + j];
            for p in 0..j {
                s -= l[i * k + p] * l[j * k + p];
            }
            if i == j {
                if s <= T::zero() {
                    return Err(Error::Parameter(format!(
                        "cholesky: matrix not positive definite (pivot {} at {i})",
                        s.as_f64()
                    )));
                }
                l[i * k + i] = s.sqrt();
            } else {
                l[i * k + j] = s / l[j * k + j];
            }
        }
    }
    Ok(l)
}

/// Solve `L z = b` for lower-triangular `L`.
pub fn solve_lower<T: Scalar>(l: &[T], k: usize, b: &[T]) -> Vec<T> {
    let mut z = vec![T::zero(); k];
    for i in 0..k {
        let mut s = b[i];
        for j in 0..i {
            s -= l[i * k + j] * z[j];
        }
        z[i] = s / l[i * k + i];
    }
    z
}

/// Solve `L^T z = b` for lower-triangular `L`.
pub fn solve_lower_transpose<T: Scalar>(l: &[T], k: usize, b: &[T]) -> Vec<T> {
    let mut z = vec![T::zero(); k];
    for i in (0..k).rev() {
        let mut s = b[i];
        for j in i + 1..k {
            s -= l[j * k + i] * z[j];
        }
        z[i] = s / l[i * k + i];
    }
    z
}

/// Floor added to covariance diagonals before factorization.
pub const COV_FLOOR: f64 = 1e-6;

/// Gaussian mixture over `l x l` patches.
#[derive(Debug, Clone)]
pub struct GmmPrior<T: Scalar> {
    patch: usize,
    /// Mixture weights on the simplex.
    pub weights: Vec<T>,
    /// Component means, each of length `l^2`.
    pub means: Vec<Vec<T>>,
    /// Lower Cholesky factors of the (floored) covariances.
    pub chol: Vec<Vec<T>>,
    /// Cached `-log det(L_i) - (k/2) log(2 pi) + log w_i`.
    log_const: Vec<T>,
}

impl<T: Scalar> GmmPrior<T> {
    /// Build from weights, means, and dense covariances; the covariance
    /// floor is applied to every diagonal before factorization.
    pub fn from_moments(
        patch: usize,
        weights: Vec<T>,
        means: Vec<Vec<T>>,
        covariances: Vec<Vec<T>>,
    ) -> Result<Self> {
        let k = patch * patch;
        let c = weights.len();
        if means.len() != c || covariances.len() != c {
            return Err(Error::Parameter("gmm: component count mismatch".into()));
        }
        let wsum: T = weights.iter().copied().sum();
        if (wsum - T::one()).abs() > T::of(1e-6) || weights.iter().any(|&w| w < T::zero()) {
            return Err(Error::Parameter("gmm: weights must lie on the simplex".into()));
        }
        let mut chol = Vec::with_capacity(c);
        for cov in &covariances {
            let mut a = cov.clone();
            for i in 0..k {
                a[i * k + i] += T::of(COV_FLOOR);
            }
            chol.push(cholesky(&a, k)?);
        }
        let mut me = GmmPrior {
            patch,
            weights,
            means,
            chol,
            log_const: Vec::new(),
        };
        me.refresh_cache();
        Ok(me)
    }

    /// Restore from already-factorized components (checkpoint loading).
    pub fn from_parts(
        patch: usize,
        weights: Vec<T>,
        means: Vec<Vec<T>>,
        chol: Vec<Vec<T>>,
    ) -> Self {
        let mut me = GmmPrior {
            patch,
            weights,
            means,
            chol,
            log_const: Vec::new(),
        };
        me.refresh_cache();
        me
    }

    pub fn refresh_cache(&mut self) {
        let k = self.dim();
        let half_log_2pi = T::of(0.5 * (2.0 * std::f64::consts::PI).ln());
        self.log_const = self
            .chol
            .iter()
            .zip(&self.weights)
            .map(|(l, &w)| {
                let mut logdet_l = T::zero();
                for i in 0..k {
                    logdet_l += l[i * k + i].ln();
                }
                // log w - log det L - (k/2) log 2pi; zero weights allowed
                let logw = if w > T::zero() {
                    w.ln()
                } else {
                    T::of(-1e300)
                };
                logw - logdet_l - half_log_2pi * T::of(k as f64)
            })
            .collect();
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn patch_size(&self) -> usize {
        self.patch
    }

    pub fn dim(&self) -> usize {
        self.patch * self.patch
    }

    /// `log(w_i g_i(x))` for every component.
    pub fn component_log_joint(&self, patch: &[T]) -> Vec<T> {
        let k = self.dim();
        let mut out = Vec::with_capacity(self.components());
        let mut diff = vec![T::zero(); k];
        for i in 0..self.components() {
            for j in 0..k {
                diff[j] = patch[j] - self.means[i][j];
            }
            let z = solve_lower(&self.chol[i], k, &diff);
            let mut quad = T::zero();
            for &v in &z {
                quad += v * v;
            }
            out.push(self.log_const[i] - quad * T::of(0.5));
        }
        out
    }

    /// `log p(x)` via log-sum-exp over components.
    pub fn log_density(&self, patch: &[T]) -> T {
        log_sum_exp(&self.component_log_joint(patch))
    }

    /// Gradient of `-log p(x)`: responsibility-weighted `Sigma_i^{-1}(x - mu_i)`.
    pub fn neg_log_grad(&self, patch: &[T]) -> Vec<T> {
        let k = self.dim();
        let joint = self.component_log_joint(patch);
        let total = log_sum_exp(&joint);
        let mut grad = vec![T::zero(); k];
        let mut diff = vec![T::zero(); k];
        for i in 0..self.components() {
            let resp = (joint[i] - total).exp();
            if resp == T::zero() {
                continue;
            }
            for j in 0..k {
                diff[j] = patch[j] - self.means[i][j];
            }
            let z = solve_lower(&self.chol[i], k, &diff);
            let s = solve_lower_transpose(&self.chol[i], k, &z);
            for j in 0..k {
                grad[j] += resp * s[j];
            }
        }
        grad
    }
}

pub fn log_sum_exp<T: Scalar>(vals: &[T]) -> T {
    let m = vals
        .iter()
        .copied()
        .fold(T::neg_infinity(), |a, b| a.max(b));
    if !m.is_finite() {
        return m;
    }
    let mut s = T::zero();
    for &v in vals {
        s += (v - m).exp();
    }
    m + s.ln()
}

/// Zero-pad an image by `p` pixels on all sides.
pub fn pad_image<T: Scalar>(x: &Image<T>, p: usize) -> Image<T> {
    let (h, w) = (x.height(), x.width());
    Image::from_fn(h + 2 * p, w + 2 * p, |r, c| {
        if r >= p && r < h + p && c >= p && c < w + p {
            x.get(r - p, c - p)
        } else {
            T::zero()
        }
    })
}

/// Row-major patch of side `l` at offset `(r, c)`.
fn read_patch<T: Scalar>(x: &Image<T>, r: usize, c: usize, l: usize, buf: &mut [T]) {
    for i in 0..l {
        for j in 0..l {
            buf[i * l + j] = x.get(r + i, c + j);
        }
    }
}

/// EPLL regularizer: mean negative log patch density after padding.
#[derive(Debug, Clone)]
pub struct EpllRegularizer<T: Scalar> {
    pub prior: GmmPrior<T>,
}

impl<T: Scalar> EpllRegularizer<T> {
    pub fn new(prior: GmmPrior<T>) -> Self {
        EpllRegularizer { prior }
    }

    fn padded_and_grid(&self, x: &Image<T>) -> (Image<T>, usize, usize) {
        let l = self.prior.patch_size();
        let padded = pad_image(x, l - 1);
        let gh = padded.height() - l + 1;
        let gw = padded.width() - l + 1;
        (padded, gh, gw)
    }

    pub fn patch_count(&self, x: &Image<T>) -> usize {
        let (_, gh, gw) = self.padded_and_grid(x);
        gh * gw
    }

    /// Mean `-log p` over all patches, or over the provided subset of
    /// flattened patch indices.
    pub fn value_subset(&self, x: &Image<T>, subset: Option<&[usize]>) -> Result<T> {
        let l = self.prior.patch_size();
        let (padded, gh, gw) = self.padded_and_grid(x);
        if gh == 0 || gw == 0 {
            return Err(Error::ShapeMismatch {
                context: "epll: image smaller than a patch after padding",
                expected: vec![l, l],
                got: vec![x.height(), x.width()],
                axis: 0,
            });
        }
        let mut buf = vec![T::zero(); self.prior.dim()];
        let mut acc = T::zero();
        let count;
        match subset {
            None => {
                for r in 0..gh {
                    for c in 0..gw {
                        read_patch(&padded, r, c, l, &mut buf);
                        acc -= self.prior.log_density(&buf);
                    }
                }
                count = gh * gw;
            }
            Some(idx) => {
                for &i in idx {
                    let (r, c) = (i / gw, i % gw);
                    read_patch(&padded, r, c, l, &mut buf);
                    acc -= self.prior.log_density(&buf);
                }
                count = idx.len();
            }
        }
        Ok(acc / T::of(count as f64))
    }

    pub fn value(&self, x: &Image<T>) -> Result<T> {
        self.value_subset(x, None)
    }

    /// Gradient of [`Self::value_subset`] with respect to the image
    /// (patch gradients scattered back, padding cropped).
    pub fn grad_subset(&self, x: &Image<T>, subset: Option<&[usize]>) -> Result<Image<T>> {
        let l = self.prior.patch_size();
        let p = l - 1;
        let (padded, gh, gw) = self.padded_and_grid(x);
        let (ph, pw) = (padded.height(), padded.width());
        let mut acc = vec![T::zero(); ph * pw];
        let mut buf = vec![T::zero(); self.prior.dim()];
        let count = subset.map_or(gh * gw, |s| s.len());
        let scale = T::one() / T::of(count as f64);
        let mut scatter = |r: usize, c: usize, padded: &Image<T>| {
            read_patch(padded, r, c, l, &mut buf);
            let g = self.prior.neg_log_grad(&buf);
            for i in 0..l {
                for j in 0..l {
                    acc[(r + i) * pw + (c + j)] += scale * g[i * l + j];
                }
            }
        };
        match subset {
            None => {
                for r in 0..gh {
                    for c in 0..gw {
                        scatter(r, c, &padded);
                    }
                }
            }
            Some(idx) => {
                for &i in idx {
                    scatter(i / gw, i % gw, &padded);
                }
            }
        }
        let (h, w) = (x.height(), x.width());
        Ok(Image::from_fn(h, w, |r, c| acc[(r + p) * pw + (c + p)]))
    }

    pub fn grad(&self, x: &Image<T>) -> Result<Image<T>> {
        self.grad_subset(x, None)
    }

    /// Seeded random patch subset of the given size.
    pub fn sample_subset(&self, x: &Image<T>, count: usize, rng: &mut Rng) -> Vec<usize> {
        let total = self.patch_count(x);
        (0..count.min(total)).map(|_| rng.below(total)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::sample_gaussian;
    use crate::tensor::Rng;

    fn standard_normal_prior(l: usize) -> GmmPrior<f64> {
        let k = l * l;
        let mut cov = vec![0.0; k * k];
        for i in 0..k {
            cov[i * k + i] = 1.0 - COV_FLOOR; // flooring restores identity
        }
        GmmPrior::from_moments(l, vec![1.0], vec![vec![0.0; k]], vec![cov]).unwrap()
    }

    #[test]
    fn standard_normal_log_density_at_zero() {
        let prior = standard_normal_prior(6);
        let v = -prior.log_density(&vec![0.0; 36]);
        let want = 36.0 * 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((v - want).abs() < 1e-10, "{v} vs {want}");
        assert!((v - 33.0817).abs() < 1e-3);
    }

    #[test]
    fn single_patch_image_value_matches_density() {
        // a (2l-1)^2 padded grid arises from an l x l image; use l=2 and
        // check the full-set value equals the per-patch loop
        let prior = standard_normal_prior(2);
        let reg = EpllRegularizer::new(prior);
        let mut rng = Rng::new(1);
        let x = Image::new(sample_gaussian::<f64>(&mut rng, &[4, 4], 1.0)).unwrap();
        let v = reg.value(&x).unwrap();

        // independent loop oracle
        let l = 2;
        let padded = pad_image(&x, l - 1);
        let gh = padded.height() - l + 1;
        let gw = padded.width() - l + 1;
        let mut acc = 0.0;
        let mut n = 0;
        for r in 0..gh {
            for c in 0..gw {
                let patch = [
                    padded.get(r, c),
                    padded.get(r, c + 1),
                    padded.get(r + 1, c),
                    padded.get(r + 1, c + 1),
                ];
                acc -= reg.prior.log_density(&patch);
                n += 1;
            }
        }
        assert!((v - acc / n as f64).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_matches_naive_sum_when_well_scaled() {
        let mut rng = Rng::new(2);
        for _ in 0..20 {
            let vals: Vec<f64> = (0..5).map(|_| rng.uniform_in(-3.0, 1.0)).collect();
            let direct = vals.iter().map(|v| v.exp()).sum::<f64>().ln();
            let lse = log_sum_exp(&vals);
            assert!((direct - lse).abs() < 1e-8 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn value_is_invariant_to_patch_evaluation_order() {
        let prior = standard_normal_prior(3);
        let reg = EpllRegularizer::new(prior);
        let mut rng = Rng::new(3);
        let x = Image::new(sample_gaussian::<f64>(&mut rng, &[6, 6], 1.0)).unwrap();
        let total = reg.patch_count(&x);
        let forward: Vec<usize> = (0..total).collect();
        let reverse: Vec<usize> = (0..total).rev().collect();
        let a = reg.value_subset(&x, Some(&forward)).unwrap();
        let b = reg.value_subset(&x, Some(&reverse)).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!((a - reg.value(&x).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn grad_matches_finite_differences() {
        // a two-component mixture with correlated covariances
        let l = 2;
        let k = 4;
        let mut cov1 = vec![0.0; 16];
        let mut cov2 = vec![0.0; 16];
        for i in 0..k {
            cov1[i * k + i] = 0.5;
            cov2[i * k + i] = 1.5;
        }
        cov1[1] = 0.2;
        cov1[k] = 0.2;
        let prior = GmmPrior::from_moments(
            l,
            vec![0.3, 0.7],
            vec![vec![0.1; 4], vec![-0.2; 4]],
            vec![cov1, cov2],
        )
        .unwrap();
        let reg = EpllRegularizer::new(prior);
        let mut rng = Rng::new(4);
        let x = Image::new(sample_gaussian::<f64>(&mut rng, &[5, 5], 0.7)).unwrap();
        let g = reg.grad(&x).unwrap();
        let h = 1e-6;
        for idx in [0usize, 7, 12, 24] {
            let (r, c) = (idx / 5, idx % 5);
            let mut xp = x.clone();
            xp.set(r, c, x.get(r, c) + h);
            let mut xm = x.clone();
            xm.set(r, c, x.get(r, c) - h);
            let fd = (reg.value(&xp).unwrap() - reg.value(&xm).unwrap()) / (2.0 * h);
            let an = g.tensor().data()[idx];
            assert!((fd - an).abs() < 1e-6 * an.abs().max(1.0), "fd {fd} vs {an}");
        }
    }

    #[test]
    fn non_pd_covariance_is_rejected() {
        let k = 4;
        let cov = vec![0.0; k * k]; // zero matrix: floored diagonal is PD
        assert!(GmmPrior::<f64>::from_moments(2, vec![1.0], vec![vec![0.0; 4]], vec![cov]).is_ok());
        let mut neg = vec![0.0; k * k];
        for i in 0..k {
            neg[i * k + i] = -1.0;
        }
        assert!(
            GmmPrior::<f64>::from_moments(2, vec![1.0], vec![vec![0.0; 4]], vec![neg]).is_err()
        );
    }
}
