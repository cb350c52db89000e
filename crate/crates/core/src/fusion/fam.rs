//! Feature aggregation: average-pool the input at four rates, upsample each branch back, sum,
//! and smooth with a 3×3 convolution.

use crate::error::{Error, Result};
use crate::ops::{avgpool, avgpool_grad, conv2d, conv2d_grad, upsample_bilinear, upsample_bilinear_grad};
use crate::tensor::{ConvParams, Rng, Tensor};

pub const FAM_RATES: [usize; 4] = [1, 2, 4, 8];

#[derive(Clone, Debug, PartialEq)]
pub struct FamParams {
    /// 3×3, same padding.
    pub fuse_conv: ConvParams,
    pub branch_rates: [usize; 4],
}

impl FamParams {
    pub fn init(in_channels: usize, out_channels: usize, rng: &mut Rng) -> Self {
        FamParams {
            fuse_conv: ConvParams::xavier_same(out_channels, in_channels, 3, rng),
            branch_rates: FAM_RATES,
        }
    }

    pub fn zeros_like(&self) -> Self {
        FamParams {
            fuse_conv: self.fuse_conv.zeros_like(),
            branch_rates: self.branch_rates,
        }
    }
}

/// Pooling rates used on an `h × w` map: each rate is capped at the map size.
pub fn fam_effective_rates(rates: &[usize; 4], h: usize, w: usize) -> Result<[usize; 4]> {
    let mut out = [1; 4];
    for (o, &r) in out.iter_mut().zip(rates) {
        let eff = r.min(h).min(w);
        if eff == 0 || !h.is_multiple_of(eff) || !w.is_multiple_of(eff) {
            return Err(Error::shape(format!(
                "FAM: {h}x{w} is not divisible by pooling rate {eff}"
            )));
        }
        *o = eff;
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct FamCache {
    rates: [usize; 4],
    merged: Tensor,
}

pub fn fam_forward(x: &Tensor, p: &FamParams) -> Result<Tensor> {
    Ok(fam_forward_cached(x, p)?.0)
}

pub fn fam_forward_cached(x: &Tensor, p: &FamParams) -> Result<(Tensor, FamCache)> {
    let [_, _, h, w] = x.dims();
    let rates = fam_effective_rates(&p.branch_rates, h, w)?;
    let mut merged = Tensor::zeros(x.dims());
    for &r in &rates {
        merged.add_assign(&upsample_bilinear(&avgpool(x, r)?, h, w)?)?;
    }
    let out = conv2d(&merged, &p.fuse_conv)?;
    Ok((out, FamCache { rates, merged }))
}

pub fn fam_backward(x: &Tensor, p: &FamParams, cache: &FamCache, dy: &Tensor, grads: &mut FamParams) -> Result<Tensor> {
    let [n, c, h, w] = x.dims();
    let g = conv2d_grad(&cache.merged, &p.fuse_conv, dy)?;
    grads.fuse_conv.axpy(1.0, &g.param_grads(&p.fuse_conv))?;
    let mut dx = Tensor::zeros(x.dims());
    for &r in &cache.rates {
        let dpooled = upsample_bilinear_grad([n, c, h / r, w / r], &g.dx)?;
        dx.add_assign(&avgpool_grad(x.dims(), r, &dpooled)?)?;
    }
    Ok(dx)
}
