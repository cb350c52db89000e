use super::net::AdfNetToy;
use crate::error::{Error, Result};
use crate::losses::{total_loss_grad, LossValue};
use crate::tensor::Tensor;

/// Total loss of the network's prediction and its gradient for every parameter.
pub fn loss_and_grads(net: &AdfNetToy, rgb: &Tensor, t: &Tensor, gt: &Tensor) -> Result<(LossValue, AdfNetToy)> {
    let (pred, cache) = net.forward_cached(rgb, t)?;
    let (loss, dpred) = total_loss_grad(&pred, gt)?;
    let grads = net.backward(&cache, &dpred)?;
    Ok((loss, grads))
}

fn check_lr(lr: f64) -> Result<()> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::contract(format!("learning rate {lr} must be finite and non-negative")));
    }
    Ok(())
}

/// `net − lr·grads`.
pub fn apply_gradients(net: &AdfNetToy, grads: &AdfNetToy, lr: f64) -> Result<AdfNetToy> {
    check_lr(lr)?;
    let mut next = net.clone();
    if lr > 0.0 {
        next.axpy(-lr, grads)?;
    }
    Ok(next)
}

/// Step size that keeps the update norm `step·‖g‖` at most `lr·max_norm`.
pub fn clipped_step(lr: f64, grad_norm: f64, max_norm: f64) -> f64 {
    if grad_norm > max_norm {
        lr * (max_norm / grad_norm)
    } else {
        lr
    }
}

/// One plain gradient-descent step `w ← w − lr·∇w`; returns the updated network and the loss
/// measured before the update.
pub fn train_step(net: &AdfNetToy, rgb: &Tensor, t: &Tensor, gt: &Tensor, lr: f64) -> Result<(AdfNetToy, LossValue)> {
    check_lr(lr)?;
    let (loss, grads) = loss_and_grads(net, rgb, t, gt)?;
    Ok((apply_gradients(net, &grads, lr)?, loss))
}
