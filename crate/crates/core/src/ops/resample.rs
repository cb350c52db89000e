//! Bilinear upsampling with half-pixel centres and edge clamping.

use crate::error::{Error, Result};
use crate::tensor::{Dims, Tensor};

/// Source taps for one output coordinate: `(i0, i1, frac)` with `i1 = min(i0 + 1, len − 1)`.
#[inline]
pub fn bilinear_taps(dst: usize, in_len: usize, out_len: usize) -> (usize, usize, f64) {
    let scale = in_len as f64 / out_len as f64;
    let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
    let i0 = src.floor() as usize;
    let i1 = (i0 + 1).min(in_len - 1);
    (i0, i1, src - i0 as f64)
}

fn check(h: usize, w: usize, oh: usize, ow: usize) -> Result<()> {
    if h == 0 || w == 0 || oh < h || ow < w {
        return Err(Error::shape(format!(
            "upsample_bilinear: cannot resize {h}x{w} to {oh}x{ow} (downscaling)"
        )));
    }
    Ok(())
}

pub fn upsample_bilinear(x: &Tensor, oh: usize, ow: usize) -> Result<Tensor> {
    let [n, c, h, w] = x.dims();
    check(h, w, oh, ow)?;
    if oh == h && ow == w {
        return Ok(x.clone());
    }
    let rows: Vec<_> = (0..oh).map(|i| bilinear_taps(i, h, oh)).collect();
    let cols: Vec<_> = (0..ow).map(|j| bilinear_taps(j, w, ow)).collect();
    let mut y = Tensor::zeros([n, c, oh, ow]);
    for b in 0..n {
        for ch in 0..c {
            let src = x.plane(b, ch);
            let dst = y.plane_mut(b, ch);
            for (i, &(y0, y1, ly)) in rows.iter().enumerate() {
                for (j, &(x0, x1, lx)) in cols.iter().enumerate() {
                    let (v00, v01) = (src[y0 * w + x0], src[y0 * w + x1]);
                    let (v10, v11) = (src[y1 * w + x0], src[y1 * w + x1]);
                    let top = v00 + lx * (v01 - v00);
                    let bottom = v10 + lx * (v11 - v10);
                    dst[i * ow + j] = top + ly * (bottom - top);
                }
            }
        }
    }
    Ok(y)
}

pub fn upsample_bilinear_grad(input_dims: Dims, dy: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = input_dims;
    let [dn, dc, oh, ow] = dy.dims();
    if dn != n || dc != c {
        return Err(Error::shape(format!(
            "upsample_bilinear_grad: dy {:?} does not match input {:?}",
            dy.dims(),
            input_dims
        )));
    }
    check(h, w, oh, ow)?;
    if oh == h && ow == w {
        return Ok(dy.clone());
    }
    let rows: Vec<_> = (0..oh).map(|i| bilinear_taps(i, h, oh)).collect();
    let cols: Vec<_> = (0..ow).map(|j| bilinear_taps(j, w, ow)).collect();
    let mut dx = Tensor::zeros(input_dims);
    for b in 0..n {
        for ch in 0..c {
            let g = dy.plane(b, ch);
            let dst = dx.plane_mut(b, ch);
            for (i, &(y0, y1, ly)) in rows.iter().enumerate() {
                for (j, &(x0, x1, lx)) in cols.iter().enumerate() {
                    let v = g[i * ow + j];
                    dst[y0 * w + x0] += v * (1.0 - ly) * (1.0 - lx);
                    dst[y0 * w + x1] += v * (1.0 - ly) * lx;
                    dst[y1 * w + x0] += v * ly * (1.0 - lx);
                    dst[y1 * w + x1] += v * ly * lx;
                }
            }
        }
    }
    Ok(dx)
}
