//! Iterative optimizers: nmAPG for the variational problem, PDHG for total
//! variation, DCA for difference-of-convex objectives, CG for symmetric
//! positive-definite systems, and Adam/Adabelief for training.

mod adam;
mod cg;
mod dca;
mod nmapg;
mod pdhg;

pub use adam::{AdamKind, AdamState};
pub use cg::cg_solve;
pub use dca::dca_minimize;
pub use nmapg::{nmapg_minimize, NmapgConfig, StopRule};
pub use pdhg::{pdhg_tv, PdhgConfig};

use crate::error::Result;
use crate::scalar::Scalar;
use std::io::Write;
use std::time::Duration;

/// Record of one solver run.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub iterations: usize,
    pub final_objective: f64,
    pub final_rel_step: f64,
    /// Objective values at iterations `0..=iterations`.
    pub objective_trace: Vec<f64>,
    pub rel_step_trace: Vec<f64>,
    pub converged: bool,
    pub wall_time: Duration,
}

impl SolveReport {
    /// CSV with columns `iteration,objective,relstep`.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "iteration,objective,relstep")?;
        for (i, obj) in self.objective_trace.iter().enumerate() {
            let rs = if i == 0 {
                f64::NAN
            } else {
                self.rel_step_trace[i - 1]
            };
            writeln!(out, "{i},{obj},{rs}")?;
        }
        Ok(())
    }
}

/// Objective with gradient, the interface consumed by smooth solvers.
pub trait Objective<T: Scalar> {
    fn value(&self, x: &crate::tensor::Tensor<T>) -> Result<T>;
    fn grad(&self, x: &crate::tensor::Tensor<T>) -> Result<crate::tensor::Tensor<T>>;

    fn value_grad(
        &self,
        x: &crate::tensor::Tensor<T>,
    ) -> Result<(T, crate::tensor::Tensor<T>)> {
        Ok((self.value(x)?, self.grad(x)?))
    }
}

/// Objective from a pair of closures.
pub struct FnObjective<V, G> {
    pub value_fn: V,
    pub grad_fn: G,
}

impl<T, V, G> Objective<T> for FnObjective<V, G>
where
    T: Scalar,
    V: Fn(&crate::tensor::Tensor<T>) -> Result<T>,
    G: Fn(&crate::tensor::Tensor<T>) -> Result<crate::tensor::Tensor<T>>,
{
    fn value(&self, x: &crate::tensor::Tensor<T>) -> Result<T> {
        (self.value_fn)(x)
    }
    fn grad(&self, x: &crate::tensor::Tensor<T>) -> Result<crate::tensor::Tensor<T>> {
        (self.grad_fn)(x)
    }
}
