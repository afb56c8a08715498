//! ADAM optimizer, learning-rate schedule, and early stopping.

use super::layers::ParamRef;
use crate::{Error, Result};

/// Training hyperparameters shared by both networks.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainSchedule {
    /// Initial learning rate.
    pub lr0: f64,
    /// Multiplier applied to the learning rate every drop period.
    pub drop_factor: f64,
    /// Epochs per drop period.
    pub drop_period_epochs: usize,
    pub max_epochs: usize,
    /// Consecutive non-improving epochs tolerated before stopping.
    pub patience: usize,
    /// Relative validation-loss improvement below which an epoch counts as
    /// non-improving (1e-4 = 0.01%).
    pub min_rel_improve: f64,
    /// L2 penalty on conv/FC weights.
    pub l2_lambda: f64,
    pub batch_size: usize,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            lr0: 0.001,
            drop_factor: 0.2,
            drop_period_epochs: 10,
            max_epochs: 50,
            patience: 5,
            min_rel_improve: 1e-4,
            l2_lambda: 1e-4,
            batch_size: 8,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.drop_factor > 0.0 && self.drop_factor <= 1.0) {
            return Err(Error::Config(format!(
                "drop_factor must be in (0, 1], got {}",
                self.drop_factor
            )));
        }
        if self.patience < 1 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        if self.drop_period_epochs == 0 || self.max_epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "drop_period_epochs, max_epochs, batch_size must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Piecewise-constant decay: `lr0 * drop_factor^floor(epoch / period)`.
/// Epochs are 0-based.
pub fn lr_piecewise(epoch: usize, sched: &TrainSchedule) -> f64 {
    sched.lr0
        * sched
            .drop_factor
            .powi((epoch / sched.drop_period_epochs) as i32)
}

/// Stops when the best-so-far validation loss failed to improve by more than
/// `min_rel_improve` (relative) for `patience` consecutive epochs, or when
/// `max_epochs` is reached.
pub fn early_stop(val_loss_history: &[f64], sched: &TrainSchedule) -> bool {
    if val_loss_history.is_empty() {
        return false;
    }
    if val_loss_history.len() >= sched.max_epochs {
        return true;
    }
    if val_loss_history.len() <= sched.patience {
        return false;
    }
    let mut best = f64::INFINITY;
    let mut improved = Vec::with_capacity(val_loss_history.len());
    for &loss in val_loss_history {
        let gain = best - loss;
        improved.push(best.is_infinite() || gain > sched.min_rel_improve * best);
        if loss < best {
            best = loss;
        }
    }
    improved[improved.len() - sched.patience..]
        .iter()
        .all(|&i| !i)
}

/// Per-tensor first/second moment accumulators.
#[derive(Debug, Clone)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Bias-corrected ADAM with coupled L2 regularization (the penalty gradient
/// `l2_lambda * θ` is added to decaying parameters before the moment update).
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Completed step count.
    pub t: u64,
    slots: Vec<Moments>,
}

impl Adam {
    pub fn new() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            slots: Vec::new(),
        }
    }

    /// Applies one ADAM update to every parameter tensor.
    pub fn step(&mut self, params: &mut [ParamRef<'_>], lr: f64, l2_lambda: f64) -> Result<()> {
        if self.slots.is_empty() {
            self.slots = params
                .iter()
                .map(|p| Moments {
                    m: vec![0.0; p.data.len()],
                    v: vec![0.0; p.data.len()],
                })
                .collect();
        }
        if self.slots.len() != params.len() {
            return Err(Error::Contract(format!(
                "optimizer state has {} slots, model has {} parameter tensors",
                self.slots.len(),
                params.len()
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (p, slot) in params.iter_mut().zip(&mut self.slots) {
            if p.data.len() != slot.m.len() {
                return Err(Error::Contract("parameter/state shape mismatch".into()));
            }
            for i in 0..p.data.len() {
                let mut g = p.grad[i];
                if !g.is_finite() {
                    return Err(Error::Training(format!(
                        "non-finite gradient at optimizer step {}",
                        self.t
                    )));
                }
                if p.decay {
                    g += l2_lambda * p.data[i];
                }
                slot.m[i] = self.beta1 * slot.m[i] + (1.0 - self.beta1) * g;
                slot.v[i] = self.beta2 * slot.v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = slot.m[i] / bc1;
                let v_hat = slot.v[i] / bc2;
                p.data[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

impl Default for Adam {
    fn default() -> Self {
        Self::new()
    }
}
