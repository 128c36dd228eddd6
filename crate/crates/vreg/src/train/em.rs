//! Expectation-maximization for the Gaussian mixture patch prior.
//!
//! Responsibilities are computed in log space; every M-step re-applies the
//! covariance floor before factorization. Components whose responsibility
//! mass collapses are re-seeded at the globally worst-explained patch.

use crate::error::{Error, Result};
use crate::reg::epll::{log_sum_exp, GmmPrior};
#[cfg(test)]
use crate::reg::epll::COV_FLOOR;
use crate::scalar::Scalar;
use crate::tensor::Rng;

#[derive(Debug, Clone)]
pub struct EmReport {
    /// Mean log-likelihood after each iteration (first entry: at init).
    pub log_likelihood: Vec<f64>,
    pub reseeded: usize,
}

/// Fit a `c`-component mixture to row-major patch vectors.
pub fn epll_em_train<T: Scalar>(
    patches: &[Vec<T>],
    patch_size: usize,
    c: usize,
    seed: u64,
    iterations: usize,
) -> Result<(GmmPrior<T>, EmReport)> {
    let n = patches.len();
    let k = patch_size * patch_size;
    if n < 10 * c {
        return Err(Error::Parameter(format!(
            "em: need at least 10 patches per component ({n} < {})",
            10 * c
        )));
    }
    if patches.iter().any(|p| p.len() != k) {
        return Err(Error::Parameter("em: patch dimension mismatch".into()));
    }

    // global moments for initialization and re-seeding
    let global_mean: Vec<T> = {
        let mut m = vec![T::zero(); k];
        for p in patches {
            for j in 0..k {
                m[j] += p[j];
            }
        }
        m.iter().map(|&v| v / T::of(n as f64)).collect()
    };
    let global_cov = {
        let mut cov = vec![T::zero(); k * k];
        for p in patches {
            for a in 0..k {
                let da = p[a] - global_mean[a];
                for b in 0..=a {
                    cov[a * k + b] += da * (p[b] - global_mean[b]);
                }
            }
        }
        for a in 0..k {
            for b in 0..=a {
                let v = cov[a * k + b] / T::of(n as f64);
                cov[a * k + b] = v;
                cov[b * k + a] = v;
            }
        }
        cov
    };

    // k-means++ style seeding of the means
    let mut rng = Rng::new(seed);
    let mut centers: Vec<usize> = vec![rng.below(n)];
    let mut dist2: Vec<f64> = patches
        .iter()
        .map(|p| sq_dist(p, &patches[centers[0]]))
        .collect();
    while centers.len() < c {
        let total: f64 = dist2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.uniform() * total;
            let mut chosen = n - 1;
            for (i, &d) in dist2.iter().enumerate() {
                if u < d {
                    chosen = i;
                    break;
                }
                u -= d;
            }
            chosen
        } else {
            rng.below(n)
        };
        centers.push(pick);
        for (i, p) in patches.iter().enumerate() {
            dist2[i] = dist2[i].min(sq_dist(p, &patches[pick]));
        }
    }

    let weights = vec![T::of(1.0 / c as f64); c];
    let means: Vec<Vec<T>> = centers.iter().map(|&i| patches[i].clone()).collect();
    let covs: Vec<Vec<T>> = vec![global_cov.clone(); c];
    let mut prior = GmmPrior::from_moments(patch_size, weights, means, covs)?;

    let mut report = EmReport {
        log_likelihood: vec![mean_ll(&prior, patches)],
        reseeded: 0,
    };

    for _ in 0..iterations {
        // E-step: responsibilities in log space
        let mut resp = vec![T::zero(); n * c];
        for (i, p) in patches.iter().enumerate() {
            let joint = prior.component_log_joint(p);
            let total = log_sum_exp(&joint);
            for j in 0..c {
                resp[i * c + j] = (joint[j] - total).exp();
            }
        }

        // M-step
        let mut mass = vec![T::zero(); c];
        for i in 0..n {
            for j in 0..c {
                mass[j] += resp[i * c + j];
            }
        }

        // re-seed collapsed components at the worst-explained patch
        for j in 0..c {
            if mass[j].as_f64() < 1e-12 {
                report.reseeded += 1;
                let worst = (0..n)
                    .min_by(|&a, &b| {
                        prior
                            .log_density(&patches[a])
                            .partial_cmp(&prior.log_density(&patches[b]))
                            .unwrap()
                    })
                    .expect("nonempty patch set");
                for i in 0..n {
                    resp[i * c + j] = if i == worst { T::one() } else { T::zero() };
                }
                mass[j] = T::one();
            }
        }

        let mut new_weights = Vec::with_capacity(c);
        let mut new_means = Vec::with_capacity(c);
        let mut new_covs = Vec::with_capacity(c);
        let total_mass: T = mass.iter().copied().sum();
        for j in 0..c {
            new_weights.push(mass[j] / total_mass);
            let mut mu = vec![T::zero(); k];
            for (i, p) in patches.iter().enumerate() {
                let r = resp[i * c + j];
                if r == T::zero() {
                    continue;
                }
                for a in 0..k {
                    mu[a] += r * p[a];
                }
            }
            for a in 0..k {
                mu[a] = mu[a] / mass[j];
            }
            let mut cov = vec![T::zero(); k * k];
            for (i, p) in patches.iter().enumerate() {
                let r = resp[i * c + j];
                if r == T::zero() {
                    continue;
                }
                for a in 0..k {
                    let da = p[a] - mu[a];
                    for b in 0..=a {
                        cov[a * k + b] += r * da * (p[b] - mu[b]);
                    }
                }
            }
            for a in 0..k {
                for b in 0..=a {
                    let v = cov[a * k + b] / mass[j];
                    cov[a * k + b] = v;
                    cov[b * k + a] = v;
                }
            }
            new_means.push(mu);
            new_covs.push(cov);
        }
        prior = GmmPrior::from_moments(patch_size, new_weights, new_means, new_covs)?;
        report.log_likelihood.push(mean_ll(&prior, patches));
    }
    Ok((prior, report))
}

fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.len() {
        let d = (a[i] - b[i]).as_f64();
        acc += d * d;
    }
    acc
}

fn mean_ll<T: Scalar>(prior: &GmmPrior<T>, patches: &[Vec<T>]) -> f64 {
    let mut acc = 0.0;
    for p in patches {
        acc += prior.log_density(p).as_f64();
    }
    acc / patches.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{sample_gaussian, Rng};

    #[test]
    fn single_component_recovers_sample_moments() {
        let mut rng = Rng::new(1);
        let k = 4;
        let n = 200;
        let patches: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                sample_gaussian::<f64>(&mut rng, &[k], 1.0)
                    .data()
                    .iter()
                    .map(|v| v + 0.3)
                    .collect()
            })
            .collect();
        let (prior, _) = epll_em_train(&patches, 2, 1, 0, 3).unwrap();

        // closed form: mean = sample mean, cov = sample covariance (+floor)
        let mut mean = vec![0.0; k];
        for p in &patches {
            for j in 0..k {
                mean[j] += p[j] / n as f64;
            }
        }
        for j in 0..k {
            assert!((prior.means[0][j] - mean[j]).abs() < 1e-12);
        }
        let mut cov = vec![0.0; k * k];
        for p in &patches {
            for a in 0..k {
                for b in 0..k {
                    cov[a * k + b] += (p[a] - mean[a]) * (p[b] - mean[b]) / n as f64;
                }
            }
        }
        // compare L L^T against cov + floor*I
        let l = &prior.chol[0];
        for a in 0..k {
            for b in 0..k {
                let mut s = 0.0;
                for p in 0..k {
                    s += l[a * k + p] * l[b * k + p];
                }
                let want = cov[a * k + b] + if a == b { COV_FLOOR } else { 0.0 };
                assert!((s - want).abs() < 1e-10, "cov entry ({a},{b}): {s} vs {want}");
            }
        }
    }

    #[test]
    fn two_separated_clusters_are_recovered() {
        let mut rng = Rng::new(2);
        let k = 4;
        let mut patches = Vec::new();
        for i in 0..300 {
            let center = if i % 2 == 0 { 5.0 } else { -5.0 };
            let p: Vec<f64> = sample_gaussian::<f64>(&mut rng, &[k], 0.1)
                .data()
                .iter()
                .map(|v| v + center)
                .collect();
            patches.push(p);
        }
        let (prior, report) = epll_em_train(&patches, 2, 2, 11, 20).unwrap();
        let mut found = [false, false];
        for mu in &prior.means {
            let m = mu.iter().sum::<f64>() / k as f64;
            if (m - 5.0).abs() < 0.05 {
                found[0] = true;
            }
            if (m + 5.0).abs() < 0.05 {
                found[1] = true;
            }
            for &v in mu {
                assert!((v.abs() - 5.0).abs() < 0.05, "mean entry {v}");
            }
        }
        assert!(found[0] && found[1], "means: {:?}", prior.means);

        // log-likelihood never decreases
        for w in report.log_likelihood.windows(2) {
            assert!(
                w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0),
                "LL decreased: {w:?}"
            );
        }
    }

    #[test]
    fn too_few_patches_rejected() {
        let patches = vec![vec![0.0; 4]; 15];
        assert!(epll_em_train(&patches, 2, 2, 0, 5).is_err());
    }
}
