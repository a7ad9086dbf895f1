//! Mini-batch SGD with classical momentum, per-epoch exponential learning-rate
//! decay and coupled L2 regularization.
//!
//! Update: `v ← μ·v − lr·(g + λ·w)`, `w ← w + v`, with the L2 term applied to
//! weights only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub initial_lr: f64,
    pub decay_per_epoch: f64,
    pub momentum: f64,
    pub l2_factor: f64,
    pub batch_size: usize,
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::invalid("initial_lr must be positive"));
        }
        if !(self.decay_per_epoch > 0.0 && self.decay_per_epoch <= 1.0) {
            return Err(Error::invalid("decay_per_epoch must lie in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if !(self.l2_factor >= 0.0) {
            return Err(Error::invalid("l2_factor must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        Ok(())
    }
}

/// `initial_lr · decay^epoch`.
pub fn lr_at_epoch(cfg: &OptimConfig, epoch: u64) -> f64 {
    cfg.initial_lr * cfg.decay_per_epoch.powf(epoch as f64)
}

/// Gradient of the penalty `(λ/2)‖W‖²`.
pub fn l2_gradient(params: &Tensor, l2_factor: f64) -> Tensor {
    let mut g = params.clone();
    let f = l2_factor as f32;
    g.data_mut().iter_mut().for_each(|v| *v *= f);
    g
}

#[derive(Clone, Debug)]
pub struct OptimState {
    velocity: Vec<Tensor>,
    epoch: u64,
    current_lr: f64,
}

impl OptimState {
    pub fn new(params: &[Tensor], cfg: &OptimConfig) -> Self {
        Self {
            velocity: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            epoch: 0,
            current_lr: lr_at_epoch(cfg, 0),
        }
    }

    pub fn velocity(&self) -> &[Tensor] {
        &self.velocity
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn current_lr(&self) -> f64 {
        self.current_lr
    }

    /// Moves to the next epoch and applies the learning-rate decay.
    pub fn advance_epoch(&mut self, cfg: &OptimConfig) {
        self.epoch += 1;
        self.current_lr = lr_at_epoch(cfg, self.epoch);
    }
}

/// One momentum step. `grads` are batch-mean gradients; `decay_mask[i]`
/// selects which tensors receive the L2 term.
pub fn sgd_momentum_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    decay_mask: &[bool],
    state: &mut OptimState,
    cfg: &OptimConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.velocity.len() || params.len() != decay_mask.len() {
        return Err(Error::shape(
            "sgd_momentum_step",
            format!(
                "{} params, {} grads, {} velocities, {} mask entries",
                params.len(),
                grads.len(),
                state.velocity.len(),
                decay_mask.len()
            ),
        ));
    }
    for (i, ((p, g), v)) in params.iter().zip(grads).zip(&state.velocity).enumerate() {
        if p.shape() != g.shape() || p.shape() != v.shape() {
            return Err(Error::shape(
                "sgd_momentum_step",
                format!("tensor {i}: param {:?}, grad {:?}, velocity {:?}", p.shape(), g.shape(), v.shape()),
            ));
        }
    }
    let lr = state.current_lr as f32;
    let mu = cfg.momentum as f32;
    for ((p, g), (v, &decay)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.velocity.iter_mut().zip(decay_mask))
    {
        let lambda = if decay { cfg.l2_factor as f32 } else { 0.0 };
        for ((w, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vi = mu * *vi - lr * (gi + lambda * *w);
            *w += *vi;
        }
    }
    Ok(())
}
