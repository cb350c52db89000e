//! Saliency losses: per-pixel binary cross-entropy, the Laplacian boundary map, and the edge
//! loss that compares boundary maps of prediction and ground truth.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::tanh;
use crate::tensor::Tensor;

/// Clamp applied to probabilities before taking logs.
pub const LOG_EPS: f64 = 1e-7;

/// 4-neighbour discrete Laplacian.
pub const LAPLACE_KERNEL: [[f64; 3]; 3] = [[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub total: f64,
    pub ce: f64,
    pub edge: f64,
}

fn check_pair(pred: &Tensor, gt: &Tensor) -> Result<()> {
    gt.expect_dims(pred.dims(), "loss ground truth")?;
    if let Some(v) = gt.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::contract(format!(
            "ground truth must be binary, found value {v}"
        )));
    }
    if !pred.all_finite() {
        return Err(Error::contract("prediction contains non-finite values"));
    }
    Ok(())
}

/// Mean of `−[t·log p + (1−t)·log(1−p)]` with `p` clamped to `[ε, 1−ε]`, and its gradient in `p`.
///
/// Targets may be soft (anywhere in `[0, 1]`). The gradient is zero where the clamp is active.
fn soft_cross_entropy(pred: &Tensor, target: &Tensor) -> (f64, Tensor) {
    let count = pred.len() as f64;
    let mut sum = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        let pc = p.clamp(LOG_EPS, 1.0 - LOG_EPS);
        sum -= t * pc.ln() + (1.0 - t) * (1.0 - pc).ln();
        let g = if p > LOG_EPS && p < 1.0 - LOG_EPS {
            -(t / pc - (1.0 - t) / (1.0 - pc)) / count
        } else {
            0.0
        };
        grad.push(g);
    }
    let grad = Tensor::new(pred.dims(), grad).expect("same length as pred");
    (sum / count, grad)
}

pub fn cross_entropy(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    Ok(cross_entropy_grad(pred, gt)?.0)
}

pub fn cross_entropy_grad(pred: &Tensor, gt: &Tensor) -> Result<(f64, Tensor)> {
    check_pair(pred, gt)?;
    Ok(soft_cross_entropy(pred, gt))
}

/// Applies a 3×3 stencil with replicated borders, taps in row-major order.
fn stencil(x: &Tensor, k: &[[f64; 3]; 3]) -> Tensor {
    let [n, c, h, w] = x.dims();
    let mut y = Tensor::zeros(x.dims());
    for b in 0..n {
        for ch in 0..c {
            let src = x.plane(b, ch);
            let dst = y.plane_mut(b, ch);
            for i in 0..h {
                for j in 0..w {
                    let mut acc = 0.0;
                    for (dy, row) in k.iter().enumerate() {
                        let yy = (i + dy).saturating_sub(1).min(h - 1);
                        for (dx, &kv) in row.iter().enumerate() {
                            let xx = (j + dx).saturating_sub(1).min(w - 1);
                            acc += kv * src[yy * w + xx];
                        }
                    }
                    dst[i * w + j] = acc;
                }
            }
        }
    }
    y
}

fn stencil_transpose(dy: &Tensor, k: &[[f64; 3]; 3]) -> Tensor {
    let [n, c, h, w] = dy.dims();
    let mut dx = Tensor::zeros(dy.dims());
    for b in 0..n {
        for ch in 0..c {
            let g = dy.plane(b, ch);
            let dst = dx.plane_mut(b, ch);
            for i in 0..h {
                for j in 0..w {
                    let gv = g[i * w + j];
                    for (dy, row) in k.iter().enumerate() {
                        let yy = (i + dy).saturating_sub(1).min(h - 1);
                        for (dx, &kv) in row.iter().enumerate() {
                            let xx = (j + dx).saturating_sub(1).min(w - 1);
                            dst[yy * w + xx] += kv * gv;
                        }
                    }
                }
            }
        }
    }
    dx
}

fn check_single_channel(x: &Tensor) -> Result<()> {
    if x.c() != 1 {
        return Err(Error::shape(format!(
            "laplacian_boundary: expected a single-channel map, got {} channels",
            x.c()
        )));
    }
    Ok(())
}

/// The raw 4-neighbour Laplacian `Δx` with replicated borders.
pub fn laplacian(x: &Tensor) -> Result<Tensor> {
    check_single_channel(x)?;
    Ok(stencil(x, &LAPLACE_KERNEL))
}

/// `|tanh(Δx)|` where `Δ` is the 4-neighbour Laplacian with replicated borders.
pub fn laplacian_boundary(x: &Tensor) -> Result<Tensor> {
    laplacian_boundary_with(x, &LAPLACE_KERNEL)
}

/// [`laplacian_boundary`] with a caller-supplied stencil.
pub fn laplacian_boundary_with(x: &Tensor, kernel: &[[f64; 3]; 3]) -> Result<Tensor> {
    check_single_channel(x)?;
    Ok(stencil(x, kernel).map(|u| tanh(u).abs()))
}

/// Gradient of `Σ dy ⊙ laplacian_boundary(x)`.
pub fn laplacian_boundary_grad(x: &Tensor, dy: &Tensor) -> Result<Tensor> {
    check_single_channel(x)?;
    dy.expect_dims(x.dims(), "laplacian_boundary_grad dy")?;
    let u = stencil(x, &LAPLACE_KERNEL);
    let du: Vec<f64> = u
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&uv, &g)| {
            let t = tanh(uv);
            g * uv.signum() * (uv != 0.0) as u8 as f64 * (1.0 - t * t)
        })
        .collect();
    let du = Tensor::new(u.dims(), du)?;
    Ok(stencil_transpose(&du, &LAPLACE_KERNEL))
}

pub fn edge_loss(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    Ok(edge_loss_grad(pred, gt)?.0)
}

pub fn edge_loss_grad(pred: &Tensor, gt: &Tensor) -> Result<(f64, Tensor)> {
    check_pair(pred, gt)?;
    let bp = laplacian_boundary(pred)?;
    let bg = laplacian_boundary(gt)?;
    let (loss, dbp) = soft_cross_entropy(&bp, &bg);
    let dpred = laplacian_boundary_grad(pred, &dbp)?;
    Ok((loss, dpred))
}

pub fn total_loss(pred: &Tensor, gt: &Tensor) -> Result<LossValue> {
    Ok(total_loss_grad(pred, gt)?.0)
}

/// Loss components and the gradient of the total with respect to `pred`.
pub fn total_loss_grad(pred: &Tensor, gt: &Tensor) -> Result<(LossValue, Tensor)> {
    let (ce, mut grad) = cross_entropy_grad(pred, gt)?;
    let (edge, dedge) = edge_loss_grad(pred, gt)?;
    grad.add_assign(&dedge)?;
    Ok((
        LossValue {
            total: ce + edge,
            ce,
            edge,
        },
        grad,
    ))
}
