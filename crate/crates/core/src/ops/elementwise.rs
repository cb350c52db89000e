//! Broadcasting add/multiply and channel concatenation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Dims, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EltwiseOp {
    Add,
    Mul,
}

/// How the right-hand operand of [`eltwise`] is laid out relative to the left.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Broadcast {
    /// Same dims.
    Full,
    /// `(n, c, 1, 1)`: one value per channel plane.
    Channel,
    /// `(n, 1, h, w)`: one value per pixel, shared by all channels.
    Spatial,
}

pub fn broadcast_kind(a: Dims, b: Dims) -> Result<Broadcast> {
    let [n, c, h, w] = a;
    if b == a {
        Ok(Broadcast::Full)
    } else if b == [n, c, 1, 1] {
        Ok(Broadcast::Channel)
    } else if b == [n, 1, h, w] {
        Ok(Broadcast::Spatial)
    } else {
        Err(Error::shape(format!(
            "eltwise: {b:?} does not broadcast against {a:?}"
        )))
    }
}

#[inline]
fn b_index(kind: Broadcast, dims: Dims, i: usize) -> usize {
    let [_, c, h, w] = dims;
    let plane = h * w;
    match kind {
        Broadcast::Full => i,
        Broadcast::Channel => i / plane,
        Broadcast::Spatial => (i / (c * plane)) * plane + i % plane,
    }
}

pub fn eltwise(a: &Tensor, b: &Tensor, op: EltwiseOp) -> Result<Tensor> {
    let kind = broadcast_kind(a.dims(), b.dims())?;
    let dims = a.dims();
    let bd = b.data();
    let data = a
        .data()
        .iter()
        .enumerate()
        .map(|(i, &av)| {
            let bv = bd[b_index(kind, dims, i)];
            match op {
                EltwiseOp::Add => av + bv,
                EltwiseOp::Mul => av * bv,
            }
        })
        .collect();
    Tensor::new(dims, data)
}

/// Gradients `(da, db)` of `Σ dy ⊙ eltwise(a, b, op)`; `db` is summed over broadcast axes.
pub fn eltwise_grad(a: &Tensor, b: &Tensor, op: EltwiseOp, dy: &Tensor) -> Result<(Tensor, Tensor)> {
    let kind = broadcast_kind(a.dims(), b.dims())?;
    dy.expect_dims(a.dims(), "eltwise_grad dy")?;
    let dims = a.dims();
    let mut da = Tensor::zeros(dims);
    let mut db = Tensor::zeros(b.dims());
    let (ad, bd, gd) = (a.data(), b.data(), dy.data());
    {
        let dad = da.data_mut();
        let dbd = db.data_mut();
        for i in 0..ad.len() {
            let j = b_index(kind, dims, i);
            match op {
                EltwiseOp::Add => {
                    dad[i] = gd[i];
                    dbd[j] += gd[i];
                }
                EltwiseOp::Mul => {
                    dad[i] = gd[i] * bd[j];
                    dbd[j] += gd[i] * ad[i];
                }
            }
        }
    }
    Ok((da, db))
}

pub fn concat_channels(parts: &[Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::shape("concat_channels: no parts"))?;
    let [n, _, h, w] = first.dims();
    for p in parts {
        if p.n() != n || p.h() != h || p.w() != w {
            return Err(Error::shape(format!(
                "concat_channels: {:?} does not match {:?} outside the channel axis",
                p.dims(),
                first.dims()
            )));
        }
    }
    let c: usize = parts.iter().map(Tensor::c).sum();
    let mut data = Vec::with_capacity(n * c * h * w);
    for b in 0..n {
        for p in parts {
            for ch in 0..p.c() {
                data.extend_from_slice(p.plane(b, ch));
            }
        }
    }
    Tensor::new([n, c, h, w], data)
}

/// Splits an upstream gradient back into parts with the given channel counts.
pub fn concat_channels_grad(part_channels: &[usize], dy: &Tensor) -> Result<Vec<Tensor>> {
    let total: usize = part_channels.iter().sum();
    if total != dy.c() {
        return Err(Error::shape(format!(
            "concat_channels_grad: parts sum to {total} channels, dy has {}",
            dy.c()
        )));
    }
    let mut start = 0;
    let mut out = Vec::with_capacity(part_channels.len());
    for &c in part_channels {
        out.push(dy.channel_slice(start, c)?);
        start += c;
    }
    Ok(out)
}
