//! Score-matching training: fit `grad R_theta` to the noise-smoothed data
//! score through the denoising identity, by minimizing the batch mean of
//! `|| sigma grad R_theta(x + n) - n ||^2` with fresh Gaussian `n` per
//! step.

use super::checkpoint::Checkpoint;
use super::dataset::PatchDataset;
use crate::autodiff::{Bindings, Graph, NodeId};
use crate::error::{Error, Result};
use crate::reg::Regularizer;
use crate::scalar::Scalar;
use crate::solvers::{AdamKind, AdamState};
use crate::tensor::{sample_gaussian, Rng, Tensor};

#[derive(Debug, Clone)]
pub struct SmOptions {
    pub sigma: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub optimizer: AdamKind,
    /// Fraction of the patch set held out for validation.
    pub val_fraction: f64,
}

impl Default for SmOptions {
    fn default() -> Self {
        SmOptions {
            sigma: 0.03,
            lr: 1e-3,
            epochs: 20,
            batch: 16,
            seed: 0,
            optimizer: AdamKind::Adabelief,
            val_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_psnr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainLog {
    pub rows: Vec<EpochRow>,
    pub best_epoch: usize,
}

struct SmGraph<T: Scalar> {
    graph: Graph<T>,
    theta: Vec<String>,
    loss: NodeId,
    grads: Vec<NodeId>,
}

fn build_sm_graph<T: Scalar>(reg: &Regularizer<T>, hw: (usize, usize)) -> Result<SmGraph<T>> {
    let mut graph = Graph::new();
    let xn = graph.leaf("__xn", &[1, hw.0, hw.1])?;
    let noise = graph.leaf("__n", &[1, hw.0, hw.1])?;
    let sigma = graph.leaf("__sigma", &[1])?;
    let value = reg.build_value_graph(&mut graph, xn)?;
    let score = graph.grad(value, &[xn])?[0];
    let scaled = graph.mul_scalar(score, sigma)?;
    let resid = graph.sub(scaled, noise)?;
    let loss = graph.dot(resid, resid)?;
    let theta: Vec<String> = reg.param_entries().into_iter().map(|(n, _)| n).collect();
    let theta_ids: Vec<NodeId> = theta
        .iter()
        .map(|n| graph.leaf_id(n).ok_or_else(|| Error::UnboundLeaf(n.clone())))
        .collect::<Result<_>>()?;
    let grads = graph.grad(loss, &theta_ids)?;
    Ok(SmGraph {
        graph,
        theta,
        loss,
        grads,
    })
}

/// Train the regularizer in place; returns the best checkpoint (lowest
/// validation score) and the per-epoch log.
pub fn sm_train<T: Scalar>(
    reg: &mut Regularizer<T>,
    patches: &PatchDataset<T>,
    opts: &SmOptions,
) -> Result<(Checkpoint<T>, TrainLog)> {
    if !reg.has_graph() {
        return Err(Error::ArchSchemeMismatch {
            arch: reg.arch_id().into(),
            scheme: "sm".into(),
        });
    }
    let hw = (patches.patch, patches.patch);
    let sm = build_sm_graph(reg, hw)?;
    let mut rng = Rng::new(opts.seed);

    let n_val = ((patches.len() as f64 * opts.val_fraction).round() as usize)
        .min(patches.len().saturating_sub(1));
    let n_train = patches.len() - n_val;
    if n_train == 0 {
        return Err(Error::Parameter("sm: empty training set".into()));
    }
    // fixed validation noise so the score is comparable across epochs
    let val_noise: Vec<Tensor<T>> = (0..n_val)
        .map(|i| {
            let mut r = Rng::substream(opts.seed ^ 0x5a5a, i as u64);
            sample_gaussian(&mut r, &[1, hw.0, hw.1], opts.sigma)
        })
        .collect();

    let mut theta: Vec<(String, Tensor<T>)> = reg.param_entries();
    let shapes: Vec<&[usize]> = theta.iter().map(|(_, t)| t.shape()).collect();
    let mut adam = AdamState::<T>::new(opts.optimizer, opts.lr, &shapes);

    let eval_loss = |theta: &[(String, Tensor<T>)], xn: &Tensor<T>, n: &Tensor<T>| -> Result<f64> {
        let mut b = Bindings::new();
        for (name, t) in theta {
            b.set(name.clone(), t.clone());
        }
        b.set("__xn", xn.clone());
        b.set("__n", n.clone());
        b.set("__sigma", Tensor::scalar(T::of(opts.sigma)));
        Ok(sm.graph.eval_scalar(sm.loss, &b)?.as_f64())
    };

    let mut log = TrainLog {
        rows: Vec::new(),
        best_epoch: 0,
    };
    let mut best = Checkpoint::new(reg.arch_id());
    let mut best_val = f64::INFINITY;

    for epoch in 0..opts.epochs {
        let order = rng.permutation(n_train);
        let mut train_loss = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks(opts.batch) {
            let mut grad_acc: Option<Vec<Tensor<T>>> = None;
            let mut batch_loss = 0.0;
            for &idx in chunk {
                let x = patches.patches[idx].tensor().reshape(&[1, hw.0, hw.1])?;
                let noise = sample_gaussian::<T>(&mut rng, &[1, hw.0, hw.1], opts.sigma);
                let xn = x.add(&noise)?;
                let mut b = Bindings::new();
                for (name, t) in &theta {
                    b.set(name.clone(), t.clone());
                }
                b.set("__xn", xn);
                b.set("__n", noise);
                b.set("__sigma", Tensor::scalar(T::of(opts.sigma)));
                let mut outputs = vec![sm.loss];
                outputs.extend(sm.grads.iter().copied());
                let mut vals = sm.graph.eval(&outputs, &b)?;
                let l = vals[0].data()[0].as_f64();
                if !l.is_finite() {
                    return Err(Error::Numerical {
                        message: "sm: loss diverged".into(),
                        trace: log.rows.iter().map(|r| r.train_loss).collect(),
                    });
                }
                batch_loss += l;
                let gs = vals.split_off(1);
                grad_acc = Some(match grad_acc {
                    None => gs,
                    Some(acc) => acc
                        .into_iter()
                        .zip(gs)
                        .map(|(a, g)| a.add(&g))
                        .collect::<Result<_>>()?,
                });
            }
            let scale = T::of(1.0 / chunk.len() as f64);
            let grads: Vec<Tensor<T>> = grad_acc
                .expect("nonempty batch")
                .into_iter()
                .map(|g| g.scale(scale))
                .collect();
            let params: Vec<Tensor<T>> = theta.iter().map(|(_, t)| t.clone()).collect();
            let updated = adam.step(&params, &grads)?;
            for (slot, new) in theta.iter_mut().zip(updated) {
                slot.1 = new;
            }
            reg.set_params(&theta)?;
            reg.project(&mut rng)?;
            theta = reg.param_entries();

            train_loss += batch_loss / chunk.len() as f64;
            steps += 1;
        }
        train_loss /= steps.max(1) as f64;

        let mut val_loss = 0.0;
        for i in 0..n_val {
            let x = patches.patches[n_train + i]
                .tensor()
                .reshape(&[1, hw.0, hw.1])?;
            let xn = x.add(&val_noise[i])?;
            val_loss += eval_loss(&theta, &xn, &val_noise[i])?;
        }
        let val_loss = if n_val > 0 {
            val_loss / n_val as f64
        } else {
            train_loss
        };

        log.rows.push(EpochRow {
            epoch,
            train_loss,
            val_loss,
            val_psnr: f64::NAN,
        });
        if val_loss < best_val {
            best_val = val_loss;
            log.best_epoch = epoch;
            best = Checkpoint::new(reg.arch_id());
            best.store_regularizer(reg);
        }
    }
    if best.params.is_empty() {
        best.store_regularizer(reg);
    }
    best.set_meta("scheme", "sm");
    best.set_meta("seed", opts.seed);
    best.set_meta("sigma_sm", opts.sigma);
    best.set_meta("val_score", best_val);
    Ok((best, log))
}
