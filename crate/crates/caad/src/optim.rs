//! Optimizers and the linear learning-rate schedule.
//!
//! Both optimizers refuse non-finite gradients so a diverging run stops
//! at the step that produced it instead of poisoning the weights.

use crate::error::{Error, Result};
use crate::net::{DenseNet, NetGradients};

/// `params -= lr * grads`, elementwise.
pub fn sgd_step(params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::DimMismatch {
            context: "sgd step",
            expected: params.len(),
            actual: grads.len(),
        });
    }
    if !grads.iter().all(|g| g.is_finite()) {
        return Err(Error::NonFinite("sgd gradients"));
    }
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
    Ok(())
}

pub fn sgd_step_net(net: &mut DenseNet, grads: &NetGradients, lr: f64) -> Result<()> {
    for (p, g) in net.param_slices_mut().into_iter().zip(grads.grad_slices()) {
        sgd_step(p, g, lr)?;
    }
    Ok(())
}

/// Adam hyperparameters. Defaults are the conventional
/// β1=0.9, β2=0.999, ε=1e-8.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Per-parameter first/second moment accumulators, shaped exactly like
/// the parameter buffers they update.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub hyper: AdamParams,
    pub step_count: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(shapes: &[usize], hyper: AdamParams) -> Self {
        AdamState {
            hyper,
            step_count: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_net(net: &DenseNet, hyper: AdamParams) -> Self {
        let shapes: Vec<usize> = net.param_slices().iter().map(|s| s.len()).collect();
        AdamState::new(&shapes, hyper)
    }

    /// One bias-corrected Adam update over a set of parameter buffers.
    /// `params` and `grads` must line up with the shapes this state was
    /// built from.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::DimMismatch {
                context: "adam buffers",
                expected: self.m.len(),
                actual: params.len(),
            });
        }
        for (g, m) in grads.iter().zip(&self.m) {
            if g.len() != m.len() {
                return Err(Error::DimMismatch {
                    context: "adam buffer shape",
                    expected: m.len(),
                    actual: g.len(),
                });
            }
            if !g.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFinite("adam gradients"));
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let AdamParams {
            beta1,
            beta2,
            epsilon,
        } = self.hyper;
        let m_corr = 1.0 - beta1.powi(t);
        let v_corr = 1.0 - beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / m_corr;
                let v_hat = v[i] / v_corr;
                p[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }

    pub fn step_net(&mut self, net: &mut DenseNet, grads: &NetGradients, lr: f64) -> Result<()> {
        let mut params = net.param_slices_mut();
        self.step(&mut params, &grads.grad_slices(), lr)
    }
}

/// Linear interpolation from `initial` at step 0 to `final_lr` at
/// `total_steps`, evaluated per optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    initial: f64,
    final_lr: f64,
    total_steps: u64,
}

impl LrSchedule {
    pub fn linear(initial: f64, final_lr: f64, total_steps: u64) -> Result<Self> {
        if !(initial > 0.0 && final_lr > 0.0) {
            return Err(Error::InvalidArgument(
                "learning rates must be positive".into(),
            ));
        }
        if final_lr > initial {
            return Err(Error::InvalidArgument(format!(
                "final lr {final_lr} exceeds initial lr {initial}"
            )));
        }
        if total_steps == 0 {
            return Err(Error::InvalidArgument(
                "total_steps must be positive".into(),
            ));
        }
        Ok(LrSchedule {
            initial,
            final_lr,
            total_steps,
        })
    }

    pub fn constant(lr: f64, total_steps: u64) -> Result<Self> {
        LrSchedule::linear(lr, lr, total_steps)
    }

    pub fn lr_at(&self, step: u64) -> Result<f64> {
        if step > self.total_steps {
            return Err(Error::InvalidArgument(format!(
                "step {step} out of schedule range 0..={}",
                self.total_steps
            )));
        }
        // Exact endpoints, interpolation in between.
        if step == 0 {
            return Ok(self.initial);
        }
        if step == self.total_steps {
            return Ok(self.final_lr);
        }
        let frac = step as f64 / self.total_steps as f64;
        Ok(self.initial + (self.final_lr - self.initial) * frac)
    }

    pub fn initial(&self) -> f64 {
        self.initial
    }

    pub fn final_lr(&self) -> f64 {
        self.final_lr
    }

    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }
}
