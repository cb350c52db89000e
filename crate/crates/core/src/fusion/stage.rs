//! Multi-layer fusion of the two modality streams.
//!
//! Level 1 adds the attended RGB and thermal features. Every deeper level also carries the
//! previous fused map forward: it is max-pooled to the current resolution, passed through a
//! 3×3 convolution, and added in.

use crate::error::{Error, Result};
use crate::ops::{conv2d, conv2d_grad, maxpool2, maxpool2_grad, ArgMax};
use crate::tensor::{ConvParams, Tensor};

#[derive(Clone, Debug)]
pub struct FuseCache {
    carried: Option<(Tensor, ArgMax)>,
}

impl FuseCache {
    pub(crate) fn record_pieces(&self, out: &mut Vec<usize>) {
        if let Some((_, arg)) = &self.carried {
            out.extend_from_slice(arg);
        }
    }
}

pub fn fuse_stage(
    level: usize,
    f_prev: Option<&Tensor>,
    m_rgb: &Tensor,
    m_t: &Tensor,
    merge: Option<&ConvParams>,
) -> Result<Tensor> {
    Ok(fuse_stage_forward(level, f_prev, m_rgb, m_t, merge)?.0)
}

pub fn fuse_stage_forward(
    level: usize,
    f_prev: Option<&Tensor>,
    m_rgb: &Tensor,
    m_t: &Tensor,
    merge: Option<&ConvParams>,
) -> Result<(Tensor, FuseCache)> {
    if !(1..=5).contains(&level) {
        return Err(Error::contract(format!("fuse_stage: level {level} outside 1..=5")));
    }
    m_t.expect_dims(m_rgb.dims(), "fuse_stage thermal features")?;
    let mut out = m_rgb.clone();
    out.add_assign(m_t)?;
    match (level, f_prev, merge) {
        (1, None, _) => Ok((out, FuseCache { carried: None })),
        (1, Some(_), _) => Err(Error::contract("fuse_stage: level 1 takes no previous map")),
        (_, Some(prev), Some(conv)) => {
            let (pooled, arg) = maxpool2(prev)?;
            let carried = conv2d(&pooled, conv)?;
            if carried.dims() != out.dims() {
                return Err(Error::shape(format!(
                    "fuse_stage: carried map {:?} does not match level {level} features {:?}",
                    carried.dims(),
                    out.dims()
                )));
            }
            let mut fused = carried;
            fused.add_assign(&out)?;
            Ok((
                fused,
                FuseCache {
                    carried: Some((pooled, arg)),
                },
            ))
        }
        _ => Err(Error::contract(format!(
            "fuse_stage: level {level} needs a previous map and a merge convolution"
        ))),
    }
}

/// Gradients of a fusion stage.
#[derive(Clone, Debug)]
pub struct FuseGrads {
    pub dm_rgb: Tensor,
    pub dm_t: Tensor,
    pub df_prev: Option<Tensor>,
    pub dmerge: Option<ConvParams>,
}

pub fn fuse_stage_backward(
    f_prev: Option<&Tensor>,
    merge: Option<&ConvParams>,
    cache: &FuseCache,
    dy: &Tensor,
) -> Result<FuseGrads> {
    let (df_prev, dmerge) = match (&cache.carried, f_prev, merge) {
        (Some((pooled, arg)), Some(prev), Some(conv)) => {
            let g = conv2d_grad(pooled, conv, dy)?;
            let df = maxpool2_grad(prev.dims(), arg, &g.dx)?;
            (Some(df), Some(g.param_grads(conv)))
        }
        (None, _, _) => (None, None),
        _ => return Err(Error::contract("fuse_stage_backward: cache does not match inputs")),
    };
    Ok(FuseGrads {
        dm_rgb: dy.clone(),
        dm_t: dy.clone(),
        df_prev,
        dmerge,
    })
}
