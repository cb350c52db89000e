//! Pyramid pooling: global, 3×3 and 5×5 adaptive average pooling plus an identity branch,
//! each projected by a 1×1 convolution, resized back, concatenated and fused by a 3×3 conv.

use crate::error::{Error, Result};
use crate::ops::{
    adaptive_avgpool, adaptive_avgpool_grad, concat_channels, concat_channels_grad, conv2d,
    conv2d_grad, upsample_bilinear, upsample_bilinear_grad,
};
use crate::tensor::{ConvParams, Rng, Tensor};

/// Pooled grid size of each branch; `None` is the identity branch.
pub const PPM_BINS: [Option<usize>; 4] = [Some(1), Some(3), Some(5), None];

#[derive(Clone, Debug, PartialEq)]
pub struct PpmParams {
    /// One 1×1 projection per branch, `c → c / 4`.
    pub branch_convs: [ConvParams; 4],
    /// 3×3, `c → c_out`.
    pub fuse_conv: ConvParams,
}

impl PpmParams {
    pub fn init(channels: usize, out_channels: usize, rng: &mut Rng) -> Result<Self> {
        if channels == 0 || !channels.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "PPM: {channels} channels not divisible by 4"
            )));
        }
        let q = channels / 4;
        let branch_convs = std::array::from_fn(|_| ConvParams::xavier_same(q, channels, 1, rng));
        let fuse_conv = ConvParams::xavier_same(out_channels, channels, 3, rng);
        Ok(PpmParams {
            branch_convs,
            fuse_conv,
        })
    }

    pub fn zeros_like(&self) -> Self {
        PpmParams {
            branch_convs: std::array::from_fn(|i| self.branch_convs[i].zeros_like()),
            fuse_conv: self.fuse_conv.zeros_like(),
        }
    }
}

/// Grid size actually used for a branch on an `h × w` map; bins never exceed the map.
pub fn ppm_branch_size(bin: Option<usize>, h: usize, w: usize) -> (usize, usize) {
    match bin {
        Some(s) => (s.min(h), s.min(w)),
        None => (h, w),
    }
}

#[derive(Clone, Debug)]
pub struct PpmCache {
    pooled: Vec<Tensor>,
    concat: Tensor,
}

pub fn ppm_forward(x: &Tensor, p: &PpmParams) -> Result<Tensor> {
    Ok(ppm_forward_cached(x, p)?.0)
}

pub fn ppm_forward_cached(x: &Tensor, p: &PpmParams) -> Result<(Tensor, PpmCache)> {
    let [_, _, h, w] = x.dims();
    let mut pooled = Vec::with_capacity(4);
    let mut branches = Vec::with_capacity(4);
    for (bin, conv) in PPM_BINS.iter().zip(&p.branch_convs) {
        let (bh, bw) = ppm_branch_size(*bin, h, w);
        let pool = if bin.is_some() {
            adaptive_avgpool(x, bh, bw)?
        } else {
            x.clone()
        };
        branches.push(upsample_bilinear(&conv2d(&pool, conv)?, h, w)?);
        pooled.push(pool);
    }
    let concat = concat_channels(&branches)?;
    let out = conv2d(&concat, &p.fuse_conv)?;
    Ok((out, PpmCache { pooled, concat }))
}

/// Returns `dx`; parameter gradients are accumulated into `grads`.
pub fn ppm_backward(x: &Tensor, p: &PpmParams, cache: &PpmCache, dy: &Tensor, grads: &mut PpmParams) -> Result<Tensor> {
    let [_, _, h, w] = x.dims();
    let gf = conv2d_grad(&cache.concat, &p.fuse_conv, dy)?;
    grads.fuse_conv.axpy(1.0, &gf.param_grads(&p.fuse_conv))?;
    let widths: Vec<usize> = p.branch_convs.iter().map(ConvParams::out_c).collect();
    let dbranches = concat_channels_grad(&widths, &gf.dx)?;
    let mut dx = Tensor::zeros(x.dims());
    for (i, bin) in PPM_BINS.iter().enumerate() {
        let conv = &p.branch_convs[i];
        let pool = &cache.pooled[i];
        let (bh, bw) = ppm_branch_size(*bin, h, w);
        let conv_dims = [x.n(), conv.out_c(), bh, bw];
        let dconv = upsample_bilinear_grad(conv_dims, &dbranches[i])?;
        let gc = conv2d_grad(pool, conv, &dconv)?;
        grads.branch_convs[i].axpy(1.0, &gc.param_grads(conv))?;
        if bin.is_some() {
            dx.add_assign(&adaptive_avgpool_grad(x.dims(), bh, bw, &gc.dx)?)?;
        } else {
            dx.add_assign(&gc.dx)?;
        }
    }
    Ok(dx)
}
