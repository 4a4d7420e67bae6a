//! Optimizers for the network-training subproblem: L-BFGS with a strong
//! Wolfe line search, plus Adam and Nesterov accelerated gradient for
//! comparison. All three are bit-deterministic given the objective, the
//! starting point, and the configuration.

mod first_order;
mod lbfgs;

pub use first_order::{adam_minimize, nag_minimize, FirstOrderConfig};
pub use lbfgs::{lbfgs_minimize, LbfgsConfig};

use crate::error::{Error, Result};

/// Why a minimization run stopped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    MaxIterations,
    /// The line search could not find an acceptable step; the best iterate
    /// is still returned.
    LineSearchFailed { iteration: usize },
}

/// Per-iteration record: `losses[k]` is the objective at iterate k
/// (`losses[0]` is the starting point), with matching gradient norms and
/// wall-clock seconds per iteration.
#[derive(Debug, Clone, Default)]
pub struct TrainTrace {
    pub losses: Vec<f64>,
    pub grad_norms: Vec<f64>,
    pub seconds: Vec<f64>,
}

impl TrainTrace {
    pub(crate) fn push(&mut self, loss: f64, grad_norm: f64, seconds: f64) {
        self.losses.push(loss);
        self.grad_norms.push(grad_norm);
        self.seconds.push(seconds);
    }

    pub fn final_loss(&self) -> f64 {
        *self.losses.last().expect("trace is never empty")
    }

    /// CSV with columns iteration,loss,grad_norm,seconds. The seconds
    /// column is wall clock and therefore not reproducible run to run.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,loss,grad_norm,seconds\n");
        for i in 0..self.losses.len() {
            out.push_str(&format!(
                "{},{:.17e},{:.17e},{:.6}\n",
                i, self.losses[i], self.grad_norms[i], self.seconds[i]
            ));
        }
        out
    }
}

/// Result of a minimization run.
#[derive(Debug, Clone)]
pub struct MinimizeOutcome {
    pub x: Vec<f64>,
    pub trace: TrainTrace,
    pub termination: Termination,
}

pub(crate) fn check_finite(f: f64, g: &[f64], context: &str) -> Result<()> {
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "objective returned a non-finite value or gradient at {context}"
        )));
    }
    Ok(())
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Normalized cost L_n = (phi_ref - phi_n) / (phi_ref - phi_1), elementwise
/// over a loss trace.
pub fn normalized_cost(losses: &[f64], phi_ref: f64, phi_1: f64) -> Result<Vec<f64>> {
    let denom = phi_ref - phi_1;
    if denom == 0.0 {
        return Err(Error::InvalidArgument(
            "normalized cost undefined: reference equals first-iteration cost".into(),
        ));
    }
    Ok(losses.iter().map(|&phi| (phi_ref - phi) / denom).collect())
}
