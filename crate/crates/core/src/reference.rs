//! Slow, direct implementations used as oracles for the optimized kernels and the metric.
//!
//! Each function follows the mathematical definition literally, one output element at a time.

use crate::error::{Error, Result};
use crate::metrics::{BinaryMask, EvalAccumulator, GrayImage, THRESHOLDS};
use crate::tensor::{ConvParams, Tensor};

/// Cross-correlation with zero padding, summing input channels, then rows, then columns of the
/// kernel, and adding the bias last.
pub fn conv2d(x: &Tensor, p: &ConvParams) -> Result<Tensor> {
    let [n, c, h, w] = x.dims();
    if p.in_c() != c {
        return Err(Error::shape(format!("reference conv2d: {c} input channels, weight expects {}", p.in_c())));
    }
    let (s, pad) = (p.stride, p.padding);
    if h + 2 * pad < p.kh() || w + 2 * pad < p.kw() {
        return Err(Error::shape("reference conv2d: kernel larger than padded input"));
    }
    let oh = (h + 2 * pad - p.kh()) / s + 1;
    let ow = (w + 2 * pad - p.kw()) / s + 1;
    let mut y = Tensor::zeros([n, p.out_c(), oh, ow]);
    for b in 0..n {
        for oc in 0..p.out_c() {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ic in 0..c {
                        for ky in 0..p.kh() {
                            for kx in 0..p.kw() {
                                let iy = (oy * s + ky) as isize - pad as isize;
                                let ix = (ox * s + kx) as isize - pad as isize;
                                let v = if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    0.0
                                } else {
                                    x.get(b, ic, iy as usize, ix as usize)
                                };
                                acc += p.weight.get(oc, ic, ky, kx) * v;
                            }
                        }
                    }
                    y.set(b, oc, oy, ox, acc + p.bias[oc]);
                }
            }
        }
    }
    Ok(y)
}

/// Mean over the input rectangle `[y0, y1) × [x0, x1)`, summed row by row.
fn window_mean(x: &Tensor, b: usize, ch: usize, (y0, y1): (usize, usize), (x0, x1): (usize, usize)) -> f64 {
    let mut acc = 0.0;
    for iy in y0..y1 {
        for ix in x0..x1 {
            acc += x.get(b, ch, iy, ix);
        }
    }
    acc / ((y1 - y0) * (x1 - x0)) as f64
}

/// Non-overlapping `rate × rate` average pooling.
pub fn avgpool(x: &Tensor, rate: usize) -> Result<Tensor> {
    let [n, c, h, w] = x.dims();
    if rate == 0 || h % rate != 0 || w % rate != 0 {
        return Err(Error::shape(format!("reference avgpool: {h}x{w} not divisible by {rate}")));
    }
    Ok(Tensor::from_fn([n, c, h / rate, w / rate], |b, ch, oy, ox| {
        window_mean(x, b, ch, (oy * rate, (oy + 1) * rate), (ox * rate, (ox + 1) * rate))
    }))
}

/// Output bin `i` of `out` over `len` inputs covers `floor(i·len/out) .. ceil((i+1)·len/out)`.
pub fn adaptive_avgpool(x: &Tensor, oh: usize, ow: usize) -> Result<Tensor> {
    let [n, c, h, w] = x.dims();
    if oh == 0 || ow == 0 || oh > h || ow > w {
        return Err(Error::shape(format!("reference adaptive_avgpool: {h}x{w} -> {oh}x{ow}")));
    }
    let bin = |i: usize, len: usize, out: usize| {
        let lo = (i as f64 * len as f64 / out as f64).floor() as usize;
        let hi = ((i + 1) as f64 * len as f64 / out as f64).ceil() as usize;
        (lo, hi)
    };
    Ok(Tensor::from_fn([n, c, oh, ow], |b, ch, i, j| {
        window_mean(x, b, ch, bin(i, h, oh), bin(j, w, ow))
    }))
}

/// 2×2 max pooling; ties keep the first element in row-major order.
pub fn maxpool2(x: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = x.dims();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!("reference maxpool2: {h}x{w} not even")));
    }
    Ok(Tensor::from_fn([n, c, h / 2, w / 2], |b, ch, oy, ox| {
        let mut best = f64::NEG_INFINITY;
        for dy in 0..2 {
            for dx in 0..2 {
                best = best.max(x.get(b, ch, 2 * oy + dy, 2 * ox + dx));
            }
        }
        best
    }))
}

/// Source position `(i + ½)·in/out − ½`, clamped to the input, split into two taps and weights.
fn taps(i: usize, len: usize, out: usize) -> [(usize, f64); 2] {
    let pos = ((i as f64 + 0.5) * len as f64 / out as f64 - 0.5).max(0.0).min((len - 1) as f64);
    let lo = pos.floor();
    let frac = pos - lo;
    let lo = lo as usize;
    [(lo, 1.0 - frac), ((lo + 1).min(len - 1), frac)]
}

/// Bilinear resize with half-pixel centres as a weighted sum of the four neighbours.
pub fn upsample_bilinear(x: &Tensor, oh: usize, ow: usize) -> Result<Tensor> {
    let [n, c, h, w] = x.dims();
    if h == 0 || w == 0 || oh < h || ow < w {
        return Err(Error::shape(format!("reference upsample_bilinear: {h}x{w} -> {oh}x{ow}")));
    }
    Ok(Tensor::from_fn([n, c, oh, ow], |b, ch, i, j| {
        let mut acc = 0.0;
        for (iy, wy) in taps(i, h, oh) {
            for (ix, wx) in taps(j, w, ow) {
                acc += wy * wx * x.get(b, ch, iy, ix);
            }
        }
        acc
    }))
}

/// `|tanh(Δx)|` with the 4-neighbour Laplacian and replicated borders, single channel.
pub fn laplacian_boundary(x: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = x.dims();
    if c != 1 {
        return Err(Error::shape("reference laplacian_boundary: single channel expected"));
    }
    let at = |b: usize, y: isize, xx: isize| {
        let y = y.clamp(0, h as isize - 1) as usize;
        let xx = xx.clamp(0, w as isize - 1) as usize;
        x.get(b, 0, y, xx)
    };
    Ok(Tensor::from_fn([n, 1, h, w], |b, _, y, xx| {
        let (y, xx) = (y as isize, xx as isize);
        let lap = at(b, y - 1, xx) + at(b, y + 1, xx) + at(b, y, xx - 1) + at(b, y, xx + 1) - 4.0 * at(b, y, xx);
        lap.tanh().abs()
    }))
}

/// Confusion counts from 256 separate binarizations `sal ≥ t`, and the absolute error sum.
pub fn eval_image(sal: &GrayImage, gt: &BinaryMask) -> Result<EvalAccumulator> {
    if sal.dims() != (gt.width, gt.height) {
        return Err(Error::shape("reference eval_image: size mismatch"));
    }
    let mut acc = EvalAccumulator {
        pixel_count: sal.pixels.len() as u64,
        image_count: 1,
        ..EvalAccumulator::default()
    };
    for t in 0..THRESHOLDS {
        for (&s, &g) in sal.pixels.iter().zip(&gt.bits) {
            let predicted = usize::from(s) >= t;
            match (predicted, g) {
                (true, true) => acc.tp[t] += 1,
                (true, false) => acc.fp[t] += 1,
                (false, true) => acc.fn_[t] += 1,
                (false, false) => {}
            }
        }
    }
    for (&s, &g) in sal.pixels.iter().zip(&gt.bits) {
        let target: i64 = if g { 255 } else { 0 };
        acc.abs_err_sum += (i64::from(s) - target).unsigned_abs();
    }
    Ok(acc)
}
