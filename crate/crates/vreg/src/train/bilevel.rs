//! Bilevel training: Adabelief over per-batch hypergradients (IFT or JFB
//! mode), with score-matching initialization, periodic Hessian-norm
//! regularization of the lower-level problem, and constraint projection
//! after every step. Also hosts the transfer fit of `(alpha, s)` alone.

use super::checkpoint::Checkpoint;
use super::dataset::PairedDataset;
use super::hypergrad::{
    hypergradient, HyperResult, HypergradConfig, HypergradMode, LowerGraphs, LowerProblem,
    ScaleSpec, LOG_ALPHA, LOG_S,
};
use super::score_matching::{EpochRow, TrainLog};
use crate::error::{Error, Result};
use crate::recon::{reconstruct, ReconOptions};
use crate::reg::Regularizer;
use crate::scalar::Scalar;
use crate::solvers::{AdamKind, AdamState, StopRule};
use crate::tensor::{psnr, Rng, Tensor};

#[derive(Debug, Clone)]
pub struct BilevelOptions {
    pub mode: HypergradMode,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    /// Relative-step tolerance of the lower-level forward solve.
    pub solve_tol: f64,
    pub solve_max_iter: usize,
    /// Apply the Hessian-norm penalty every this many epochs (0 = never).
    pub hess_reg_every: usize,
    pub hess_reg_weight: f64,
    /// Train `(log alpha, log s)` jointly with the architecture.
    pub train_scale: bool,
    pub init_alpha: f64,
    pub init_scale: f64,
    /// Evaluation-time solve settings for validation PSNR.
    pub val_recon: ReconOptions,
}

impl Default for BilevelOptions {
    fn default() -> Self {
        BilevelOptions {
            mode: HypergradMode::jfb_default(),
            lr: 1e-3,
            epochs: 10,
            batch: 4,
            seed: 0,
            solve_tol: 1e-4,
            solve_max_iter: 600,
            hess_reg_every: 5,
            hess_reg_weight: 1e-3,
            train_scale: true,
            init_alpha: 1.0,
            init_scale: 1.0,
            val_recon: ReconOptions::default(),
        }
    }
}

fn split_theta<T: Scalar>(
    theta: &[(String, Tensor<T>)],
) -> (Vec<(String, Tensor<T>)>, f64, f64) {
    let mut arch = Vec::new();
    let (mut la, mut ls) = (0.0, 0.0);
    for (n, t) in theta {
        match n.as_str() {
            LOG_ALPHA => la = t.data()[0].as_f64(),
            LOG_S => ls = t.data()[0].as_f64(),
            _ => arch.push((n.clone(), t.clone())),
        }
    }
    (arch, la.exp(), ls.exp())
}

/// PSNR range rule: 1 for denoising, max ground-truth pixel otherwise.
fn psnr_range<T: Scalar>(op_is_identity: bool, truth: &crate::tensor::Image<T>) -> T {
    if op_is_identity {
        T::one()
    } else {
        truth.tensor().max().unwrap_or_else(T::one).max(T::of(1e-12))
    }
}

/// Mean validation PSNR under the current parameters.
pub fn validation_psnr<T: Scalar>(
    reg: &Regularizer<T>,
    alpha: f64,
    scale: f64,
    val: &PairedDataset<T>,
    opts: &ReconOptions,
) -> Result<f64> {
    let mut acc = 0.0;
    for i in 0..val.len() {
        let (truth, y) = val.pair(i);
        let (x, _) = reconstruct(reg, alpha, scale, &val.op, y, opts)?;
        acc += psnr(&x, truth, psnr_range(val.op.is_identity(), truth))?.as_f64();
    }
    Ok(acc / val.len().max(1) as f64)
}

/// Train in place; returns the best-validation checkpoint and the log.
pub fn bilevel_train<T: Scalar>(
    reg: &mut Regularizer<T>,
    data: &PairedDataset<T>,
    val: &PairedDataset<T>,
    opts: &BilevelOptions,
) -> Result<(Checkpoint<T>, TrainLog)> {
    if !reg.has_graph() {
        return Err(Error::ArchSchemeMismatch {
            arch: reg.arch_id().into(),
            scheme: "bilevel".into(),
        });
    }
    if data.is_empty() {
        return Err(Error::Parameter("bilevel: empty training set".into()));
    }
    let hw = (data.clean[0].height(), data.clean[0].width());
    let scale_spec = if opts.train_scale {
        ScaleSpec::Trainable
    } else {
        ScaleSpec::Fixed {
            alpha: opts.init_alpha,
            scale: opts.init_scale,
        }
    };
    let graphs = LowerGraphs::build(reg, hw, scale_spec, true)?;

    let mut theta: Vec<(String, Tensor<T>)> = reg.param_entries();
    if opts.train_scale {
        theta.push((LOG_ALPHA.into(), Tensor::scalar(T::of(opts.init_alpha.ln()))));
        theta.push((LOG_S.into(), Tensor::scalar(T::of(opts.init_scale.ln()))));
    }
    let shapes: Vec<&[usize]> = theta.iter().map(|(_, t)| t.shape()).collect();
    let mut adam = AdamState::<T>::new(AdamKind::Adabelief, opts.lr, &shapes);
    let mut rng = Rng::new(opts.seed);

    let hyper_cfg = HypergradConfig {
        mode: opts.mode,
        solve_stop: StopRule::RelStep(opts.solve_tol),
        solve_max_iter: opts.solve_max_iter,
        unrolled_cap: 50,
    };

    let mut log = TrainLog {
        rows: Vec::new(),
        best_epoch: 0,
    };
    let mut best: Option<Checkpoint<T>> = None;
    let mut best_psnr = f64::NEG_INFINITY;

    for epoch in 0..opts.epochs {
        let order = rng.permutation(data.len());
        let hess_epoch =
            opts.hess_reg_every > 0 && (epoch + 1) % opts.hess_reg_every == 0;
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(opts.batch) {
            let mut grad_acc: Option<Vec<Tensor<T>>> = None;
            let mut breakdowns = 0usize;
            let mut used = 0usize;
            let mut batch_upper = 0.0;
            for &idx in chunk {
                let (x_star, y) = data.pair(idx);
                let problem = LowerProblem {
                    graphs: &graphs,
                    theta: &theta,
                    op: &data.op,
                    y,
                    reg_template: Some(reg),
                };
                let x0 = data.op.pseudo_inverse(y)?;
                let result: Result<HyperResult<T>> =
                    hypergradient(&problem, x_star, &x0, &hyper_cfg);
                let mut r = match result {
                    Ok(r) => r,
                    Err(Error::IndefiniteOperator { .. }) => {
                        breakdowns += 1;
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                if hess_epoch {
                    let (_, v) = problem.hessian_norm(&r.x_hat, 20)?;
                    let pg = problem.hess_penalty_grads(&r.x_hat, &v)?;
                    let w = T::of(opts.hess_reg_weight);
                    for (slot, p) in r.grad.iter_mut().zip(pg) {
                        *slot = slot.axpy(w, &p)?;
                    }
                }
                batch_upper += r.upper.as_f64();
                used += 1;
                grad_acc = Some(match grad_acc {
                    None => r.grad,
                    Some(acc) => acc
                        .into_iter()
                        .zip(r.grad)
                        .map(|(a, g)| a.add(&g))
                        .collect::<Result<_>>()?,
                });
            }
            if breakdowns * 10 > chunk.len() {
                return Err(Error::Numerical {
                    message: format!(
                        "bilevel: {breakdowns}/{} CG breakdowns in one batch; \
                         reduce the learning rate",
                        chunk.len()
                    ),
                    trace: log.rows.iter().map(|r| r.train_loss).collect(),
                });
            }
            let Some(acc) = grad_acc else { continue };
            let scale = T::of(1.0 / used.max(1) as f64);
            let grads: Vec<Tensor<T>> = acc.into_iter().map(|g| g.scale(scale)).collect();
            let params: Vec<Tensor<T>> = theta.iter().map(|(_, t)| t.clone()).collect();
            let updated = adam.step(&params, &grads)?;
            for (slot, new) in theta.iter_mut().zip(updated) {
                slot.1 = new;
            }
            // push architecture parameters through the projection
            let (arch, _, _) = split_theta(&theta);
            reg.set_params(&arch)?;
            reg.project(&mut rng)?;
            let projected = reg.param_entries();
            for slot in theta.iter_mut() {
                if let Some((_, t)) = projected.iter().find(|(n, _)| n == &slot.0) {
                    slot.1 = t.clone();
                }
            }
            epoch_loss += batch_upper / used.max(1) as f64;
            batches += 1;
        }
        epoch_loss /= batches.max(1) as f64;

        let (_, alpha, scale) = split_theta(&theta);
        let (alpha, scale) = if opts.train_scale {
            (alpha, scale)
        } else {
            (opts.init_alpha, opts.init_scale)
        };
        let val_psnr = validation_psnr(reg, alpha, scale, val, &opts.val_recon)?;
        log.rows.push(EpochRow {
            epoch,
            train_loss: epoch_loss,
            val_loss: f64::NAN,
            val_psnr,
        });
        if val_psnr > best_psnr {
            best_psnr = val_psnr;
            log.best_epoch = epoch;
            let mut ck = Checkpoint::new(reg.arch_id());
            ck.store_regularizer(reg);
            ck.set_alpha(alpha);
            ck.set_scale(scale);
            ck.set_meta("val_psnr", val_psnr);
            best = Some(ck);
        }
    }

    let mut ck = best.unwrap_or_else(|| {
        let mut ck = Checkpoint::new(reg.arch_id());
        ck.store_regularizer(reg);
        ck
    });
    let mode_name = match opts.mode {
        HypergradMode::Ift { .. } => "bl_ift",
        HypergradMode::Jfb { .. } => "bl_jfb",
        HypergradMode::Neumann { .. } => "bl_neumann",
        HypergradMode::Unrolled { .. } => "bl_unrolled",
    };
    ck.set_meta("scheme", mode_name);
    ck.set_meta("seed", opts.seed);
    Ok((ck, log))
}

#[derive(Debug, Clone)]
pub struct FitAlphaOptions {
    pub steps: usize,
    pub lr: f64,
    pub solve_tol: f64,
    pub solve_max_iter: usize,
    pub cg_tol: f64,
    /// Also fit the input scaling `s` (otherwise only `alpha`).
    pub fit_scale: bool,
    pub init_alpha: f64,
    pub init_scale: f64,
}

impl Default for FitAlphaOptions {
    fn default() -> Self {
        FitAlphaOptions {
            steps: 60,
            lr: 0.1,
            solve_tol: 1e-5,
            solve_max_iter: 800,
            cg_tol: 1e-4,
            fit_scale: true,
            init_alpha: 1.0,
            init_scale: 1.0,
        }
    }
}

/// Fit `(alpha, s)` of the deployment wrapper on a few paired images with
/// IFT hypergradients, all architecture parameters frozen.
pub fn fit_alpha_scale<T: Scalar>(
    reg: &Regularizer<T>,
    pairs: &PairedDataset<T>,
    opts: &FitAlphaOptions,
) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(Error::Parameter("fit_alpha_scale: no pairs".into()));
    }
    let hw = (pairs.clean[0].height(), pairs.clean[0].width());
    let graphs = LowerGraphs::build(reg, hw, ScaleSpec::Trainable, false)?;

    let mut theta: Vec<(String, Tensor<T>)> = reg.param_entries();
    theta.push((LOG_ALPHA.into(), Tensor::scalar(T::of(opts.init_alpha.ln()))));
    theta.push((LOG_S.into(), Tensor::scalar(T::of(opts.init_scale.ln()))));
    let scale_slots = [theta.len() - 2, theta.len() - 1];

    let mut adam = AdamState::<T>::new(AdamKind::Adabelief, opts.lr, &[&[1], &[1]]);
    let hyper_cfg = HypergradConfig {
        mode: HypergradMode::Ift {
            cg_tol: opts.cg_tol,
            cg_max_iter: 500,
        },
        solve_stop: StopRule::RelStep(opts.solve_tol),
        solve_max_iter: opts.solve_max_iter,
        unrolled_cap: 50,
    };

    for _ in 0..opts.steps {
        let mut g_la = Tensor::<T>::zeros(&[1]);
        let mut g_ls = Tensor::<T>::zeros(&[1]);
        for i in 0..pairs.len() {
            let (x_star, y) = pairs.pair(i);
            let problem = LowerProblem {
                graphs: &graphs,
                theta: &theta,
                op: &pairs.op,
                y,
                reg_template: Some(reg),
            };
            let x0 = pairs.op.pseudo_inverse(y)?;
            let r = hypergradient(&problem, x_star, &x0, &hyper_cfg)?;
            g_la = g_la.add(&r.grad[0])?;
            g_ls = g_ls.add(&r.grad[1])?;
        }
        let n = T::of(1.0 / pairs.len() as f64);
        g_la = g_la.scale(n);
        g_ls = if opts.fit_scale {
            g_ls.scale(n)
        } else {
            Tensor::zeros(&[1])
        };
        let params = vec![theta[scale_slots[0]].1.clone(), theta[scale_slots[1]].1.clone()];
        let updated = adam.step(&params, &[g_la, g_ls])?;
        theta[scale_slots[0]].1 = updated[0].clone();
        theta[scale_slots[1]].1 = updated[1].clone();
    }
    let (_, alpha, scale) = split_theta(&theta);
    Ok((alpha, scale))
}
