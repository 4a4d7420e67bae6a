//! First-order baselines: bias-corrected Adam and Nesterov accelerated
//! gradient with a lookahead gradient step.

use super::{check_finite, norm, MinimizeOutcome, Termination, TrainTrace};
use crate::error::Result;
use std::time::Instant;

#[derive(Debug, Clone)]
pub struct FirstOrderConfig {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// NAG momentum coefficient.
    pub momentum: f64,
    pub max_iters: usize,
}

impl Default for FirstOrderConfig {
    fn default() -> Self {
        FirstOrderConfig {
            step_size: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            momentum: 0.9,
            max_iters: 300,
        }
    }
}

impl FirstOrderConfig {
    fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) {
            return Err(crate::error::Error::InvalidArgument(format!(
                "step size must be positive, got {}",
                self.step_size
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(crate::error::Error::InvalidArgument(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }
}

/// Standard bias-corrected Adam. No monotonicity guarantee.
pub fn adam_minimize<F>(obj: F, x0: &[f64], config: &FirstOrderConfig) -> Result<MinimizeOutcome>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    config.validate()?;
    let start = Instant::now();
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut trace = TrainTrace::default();
    let mut last_t = 0.0;
    for t in 1..=config.max_iters {
        let (f, g) = obj(&x);
        if t == 1 {
            check_finite(f, &g, "the Adam starting point")?;
        }
        let now = start.elapsed().as_secs_f64();
        trace.push(f, norm(&g), now - last_t);
        last_t = now;
        let bc1 = 1.0 - config.beta1.powi(t as i32);
        let bc2 = 1.0 - config.beta2.powi(t as i32);
        for i in 0..n {
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            x[i] -= config.step_size * m_hat / (v_hat.sqrt() + config.epsilon);
        }
    }
    let (f, g) = obj(&x);
    let now = start.elapsed().as_secs_f64();
    trace.push(f, norm(&g), now - last_t);
    Ok(MinimizeOutcome {
        x,
        trace,
        termination: Termination::MaxIterations,
    })
}

/// Nesterov accelerated gradient: the gradient is evaluated at the
/// lookahead point x + momentum * velocity. Momentum zero reduces to plain
/// gradient descent.
pub fn nag_minimize<F>(obj: F, x0: &[f64], config: &FirstOrderConfig) -> Result<MinimizeOutcome>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    config.validate()?;
    let start = Instant::now();
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut vel = vec![0.0; n];
    let mut trace = TrainTrace::default();
    let mut last_t = 0.0;
    for t in 0..config.max_iters {
        let (f, g_here) = obj(&x);
        if t == 0 {
            check_finite(f, &g_here, "the NAG starting point")?;
        }
        let now = start.elapsed().as_secs_f64();
        trace.push(f, norm(&g_here), now - last_t);
        last_t = now;
        let g_ahead = if config.momentum == 0.0 {
            g_here
        } else {
            let lookahead: Vec<f64> = x
                .iter()
                .zip(&vel)
                .map(|(xi, vi)| xi + config.momentum * vi)
                .collect();
            obj(&lookahead).1
        };
        for i in 0..n {
            vel[i] = config.momentum * vel[i] - config.step_size * g_ahead[i];
            x[i] += vel[i];
        }
    }
    let (f, g) = obj(&x);
    let now = start.elapsed().as_secs_f64();
    trace.push(f, norm(&g), now - last_t);
    Ok(MinimizeOutcome {
        x,
        trace,
        termination: Termination::MaxIterations,
    })
}
