//! Pooling and reductions: 2×2 max-pool, strided average pool, adaptive average pool,
//! global max-pool, and per-pixel channel mean/max.
//!
//! Windows are always scanned in row-major order; max ties go to the first element seen.

use crate::error::{Error, Result};
use crate::tensor::{Dims, Tensor};

/// Flat indices (into the pooled input's data) of the element each output took its value from.
pub type ArgMax = Vec<usize>;

pub fn maxpool2(x: &Tensor) -> Result<(Tensor, ArgMax)> {
    let [n, c, h, w] = x.dims();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!("maxpool2: spatial dims {h}x{w} must be even")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Tensor::zeros([n, c, oh, ow]);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    let xd = x.data();
    let yd = y.data_mut();
    let mut k = 0;
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if xd[i] > xd[best] {
                            best = i;
                        }
                    }
                    yd[k] = xd[best];
                    arg.push(best);
                    k += 1;
                }
            }
        }
    }
    Ok((y, arg))
}

/// Routes each upstream gradient to the input element recorded in `argmax`.
pub fn argmax_grad(input_dims: Dims, argmax: &[usize], dy: &Tensor) -> Result<Tensor> {
    if argmax.len() != dy.len() {
        return Err(Error::shape(format!(
            "argmax_grad: {} indices for {} upstream values",
            argmax.len(),
            dy.len()
        )));
    }
    let mut dx = Tensor::zeros(input_dims);
    let d = dx.data_mut();
    for (&i, &g) in argmax.iter().zip(dy.data()) {
        d[i] += g;
    }
    Ok(dx)
}

pub fn maxpool2_grad(input_dims: Dims, argmax: &[usize], dy: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = input_dims;
    dy.expect_dims([n, c, h / 2, w / 2], "maxpool2_grad dy")?;
    argmax_grad(input_dims, argmax, dy)
}

pub fn avgpool(x: &Tensor, rate: usize) -> Result<Tensor> {
    let [n, c, h, w] = x.dims();
    if rate == 0 || h % rate != 0 || w % rate != 0 {
        return Err(Error::shape(format!(
            "avgpool: {h}x{w} is not divisible by rate {rate}"
        )));
    }
    if rate == 1 {
        return Ok(x.clone());
    }
    let (oh, ow) = (h / rate, w / rate);
    let area = (rate * rate) as f64;
    let mut y = Tensor::zeros([n, c, oh, ow]);
    for b in 0..n {
        for ch in 0..c {
            let src = x.plane(b, ch);
            let dst = y.plane_mut(b, ch);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for iy in oy * rate..(oy + 1) * rate {
                        for ix in ox * rate..(ox + 1) * rate {
                            acc += src[iy * w + ix];
                        }
                    }
                    dst[oy * ow + ox] = acc / area;
                }
            }
        }
    }
    Ok(y)
}

pub fn avgpool_grad(input_dims: Dims, rate: usize, dy: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = input_dims;
    if rate == 0 || h % rate != 0 || w % rate != 0 {
        return Err(Error::shape(format!(
            "avgpool_grad: {h}x{w} is not divisible by rate {rate}"
        )));
    }
    let (oh, ow) = (h / rate, w / rate);
    dy.expect_dims([n, c, oh, ow], "avgpool_grad dy")?;
    let area = (rate * rate) as f64;
    let mut dx = Tensor::zeros(input_dims);
    for b in 0..n {
        for ch in 0..c {
            let g = dy.plane(b, ch);
            let dst = dx.plane_mut(b, ch);
            for iy in 0..h {
                for ix in 0..w {
                    dst[iy * w + ix] = g[(iy / rate) * ow + ix / rate] / area;
                }
            }
        }
    }
    Ok(dx)
}

/// Half-open input range `[floor(i·len/out), ceil((i+1)·len/out))` covered by output bin `i`.
#[inline]
pub fn adaptive_bin(i: usize, len: usize, out: usize) -> (usize, usize) {
    let start = (i * len) / out;
    let end = ((i + 1) * len).div_ceil(out);
    (start, end)
}

fn check_adaptive(h: usize, w: usize, oh: usize, ow: usize) -> Result<()> {
    if oh == 0 || ow == 0 || oh > h || ow > w {
        return Err(Error::shape(format!(
            "adaptive_avgpool: output {oh}x{ow} must be within 1x1..={h}x{w}"
        )));
    }
    Ok(())
}

pub fn adaptive_avgpool(x: &Tensor, oh: usize, ow: usize) -> Result<Tensor> {
    let [n, c, h, w] = x.dims();
    check_adaptive(h, w, oh, ow)?;
    let mut y = Tensor::zeros([n, c, oh, ow]);
    for b in 0..n {
        for ch in 0..c {
            let src = x.plane(b, ch);
            let dst = y.plane_mut(b, ch);
            for i in 0..oh {
                let (y0, y1) = adaptive_bin(i, h, oh);
                for j in 0..ow {
                    let (x0, x1) = adaptive_bin(j, w, ow);
                    let mut acc = 0.0;
                    for iy in y0..y1 {
                        for ix in x0..x1 {
                            acc += src[iy * w + ix];
                        }
                    }
                    dst[i * ow + j] = acc / ((y1 - y0) * (x1 - x0)) as f64;
                }
            }
        }
    }
    Ok(y)
}

pub fn adaptive_avgpool_grad(input_dims: Dims, oh: usize, ow: usize, dy: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = input_dims;
    check_adaptive(h, w, oh, ow)?;
    dy.expect_dims([n, c, oh, ow], "adaptive_avgpool_grad dy")?;
    let mut dx = Tensor::zeros(input_dims);
    for b in 0..n {
        for ch in 0..c {
            let g = dy.plane(b, ch);
            let dst = dx.plane_mut(b, ch);
            for i in 0..oh {
                let (y0, y1) = adaptive_bin(i, h, oh);
                for j in 0..ow {
                    let (x0, x1) = adaptive_bin(j, w, ow);
                    let share = g[i * ow + j] / ((y1 - y0) * (x1 - x0)) as f64;
                    for iy in y0..y1 {
                        for ix in x0..x1 {
                            dst[iy * w + ix] += share;
                        }
                    }
                }
            }
        }
    }
    Ok(dx)
}

/// Per-channel maximum over the whole plane, `(n, c, 1, 1)`.
pub fn global_maxpool(x: &Tensor) -> (Tensor, ArgMax) {
    let [n, c, _, _] = x.dims();
    let mut y = Tensor::zeros([n, c, 1, 1]);
    let mut arg = Vec::with_capacity(n * c);
    let plane = x.h() * x.w();
    for b in 0..n {
        for ch in 0..c {
            let p = x.plane(b, ch);
            let mut best = 0;
            for (i, &v) in p.iter().enumerate() {
                if v > p[best] {
                    best = i;
                }
            }
            y.data_mut()[b * c + ch] = p[best];
            arg.push((b * c + ch) * plane + best);
        }
    }
    (y, arg)
}

/// Per-pixel mean over channels, `(n, 1, h, w)`.
pub fn channel_mean(x: &Tensor) -> Tensor {
    let [n, c, h, w] = x.dims();
    let mut y = Tensor::zeros([n, 1, h, w]);
    for b in 0..n {
        let dst = y.plane_mut(b, 0);
        for ch in 0..c {
            for (d, &v) in dst.iter_mut().zip(x.plane(b, ch)) {
                *d += v;
            }
        }
        for d in dst.iter_mut() {
            *d /= c as f64;
        }
    }
    y
}

pub fn channel_mean_grad(input_dims: Dims, dy: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = input_dims;
    dy.expect_dims([n, 1, h, w], "channel_mean_grad dy")?;
    let mut dx = Tensor::zeros(input_dims);
    for b in 0..n {
        let g = dy.plane(b, 0);
        for ch in 0..c {
            for (d, &v) in dx.plane_mut(b, ch).iter_mut().zip(g) {
                *d = v / c as f64;
            }
        }
    }
    Ok(dx)
}

/// Per-pixel maximum over channels, `(n, 1, h, w)`; ties go to the lowest channel.
pub fn channel_max(x: &Tensor) -> (Tensor, ArgMax) {
    let [n, c, h, w] = x.dims();
    let plane = h * w;
    let mut y = Tensor::zeros([n, 1, h, w]);
    let mut arg = vec![0; n * plane];
    let xd = x.data();
    for b in 0..n {
        for i in 0..plane {
            let mut best = b * c * plane + i;
            for ch in 1..c {
                let j = (b * c + ch) * plane + i;
                if xd[j] > xd[best] {
                    best = j;
                }
            }
            y.data_mut()[b * plane + i] = xd[best];
            arg[b * plane + i] = best;
        }
    }
    (y, arg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    #[test]
    fn maxpool_picks_bottom_right_of_increasing_window() {
        let x = Tensor::new([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, arg) = maxpool2(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(arg, vec![3]);
    }

    #[test]
    fn maxpool_ties_go_to_top_left() {
        let x = Tensor::full([1, 2, 4, 4], 5.0);
        let (y, arg) = maxpool2(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 5.0));
        assert_eq!(&arg[..4], &[0, 2, 8, 10]);
        assert_eq!(arg[4], 16);
    }

    #[test]
    fn maxpool_rejects_odd() {
        assert!(maxpool2(&Tensor::zeros([1, 1, 3, 4])).is_err());
    }

    #[test]
    fn avgpool_hand_values() {
        let x = Tensor::new([1, 1, 4, 4], (1..=16).map(|v| v as f64).collect()).unwrap();
        let y = avgpool(&x, 2).unwrap();
        assert_eq!(y.data(), &[3.5, 5.5, 11.5, 13.5]);
        assert_eq!(avgpool(&x, 1).unwrap(), x);
        assert!(avgpool(&x, 3).is_err());
    }

    #[test]
    fn adaptive_bins_cover_input() {
        assert_eq!(adaptive_bin(0, 6, 3), (0, 2));
        assert_eq!(adaptive_bin(2, 6, 3), (4, 6));
        // Overlapping bins when the size does not divide.
        assert_eq!(adaptive_bin(0, 5, 3), (0, 2));
        assert_eq!(adaptive_bin(1, 5, 3), (1, 4));
        assert_eq!(adaptive_bin(2, 5, 3), (3, 5));
    }

    #[test]
    fn adaptive_global_and_identity() {
        let mut rng = Rng::new(2);
        let x = Tensor::uniform([2, 3, 5, 7], -1.0, 1.0, &mut rng);
        assert_eq!(adaptive_avgpool(&x, 5, 7).unwrap(), x);
        let g = adaptive_avgpool(&x, 1, 1).unwrap();
        for b in 0..2 {
            for c in 0..3 {
                let mean = x.plane(b, c).iter().sum::<f64>() / 35.0;
                assert!((g.get(b, c, 0, 0) - mean).abs() < 1e-15);
            }
        }
        assert!(adaptive_avgpool(&x, 6, 1).is_err());
        assert!(adaptive_avgpool(&x, 0, 1).is_err());
    }

    #[test]
    fn channel_reductions() {
        let x = Tensor::from_fn([1, 3, 2, 2], |_, c, y, xx| (c as f64 - 1.0) * (y * 2 + xx) as f64);
        let m = channel_mean(&x);
        assert!(m.data().iter().all(|&v| v.abs() < 1e-15));
        let (mx, arg) = channel_max(&x);
        assert_eq!(mx.data(), &[0.0, 1.0, 2.0, 3.0]);
        // Pixel 0 ties across all channels and goes to channel 0.
        assert_eq!(arg[0], 0);
        assert_eq!(arg[1], 2 * 4 + 1);
    }
}
