use ndarray::{Array, Dimension, Zip};

use crate::error::{shape_mismatch, Result};
use crate::scalar::Scalar;

pub const DEFAULT_MOMENTUM: f64 = 0.9;

/// Heavy-ball SGD: `v <- momentum * v + g`, then `theta <- theta - lr * v`.
pub fn sgd_momentum_step<T: Scalar, D: Dimension>(
    param: &mut Array<T, D>,
    velocity: &mut Array<T, D>,
    grad: &Array<T, D>,
    lr: T,
    momentum: T,
) -> Result<()> {
    if param.shape() != grad.shape() || velocity.shape() != grad.shape() {
        return Err(shape_mismatch("sgd_momentum_step", param.shape(), grad.shape()));
    }
    Zip::from(param).and(velocity).and(grad).for_each(|p, v, &g| {
        *v = momentum * *v + g;
        *p = *p - lr * *v;
    });
    Ok(())
}

/// `base_lr * factor^(number of milestones <= iteration)`.
pub fn step_decay_lr(base_lr: f64, iteration: usize, milestones: &[usize], factor: f64) -> f64 {
    let passed = milestones.iter().filter(|&&m| m <= iteration).count();
    base_lr * factor.powi(passed as i32)
}
