//! Direct 2-D convolution (cross-correlation) and its backward pass.
//!
//! Every output element accumulates its taps in `(in_channel, ky, kx)` row-major order and
//! adds the bias last, so results are bitwise identical to a naive per-element loop. The
//! stride-1 path works on a zero-padded copy of the input: the extra taps contribute exact
//! zeros, which never change a running sum. It computes a tile of output channels and columns
//! in registers at a time.

use crate::error::{Error, Result};
use crate::tensor::{ConvParams, Dims, Tensor};

/// Output dims of `conv2d(x, p)`.
pub fn conv2d_out_dims(x: Dims, p: &ConvParams) -> Result<Dims> {
    let [n, c, h, w] = x;
    if c != p.in_c() {
        return Err(Error::shape(format!(
            "conv2d: input has {} channels, kernel expects {}",
            c,
            p.in_c()
        )));
    }
    let span_h = h + 2 * p.padding;
    let span_w = w + 2 * p.padding;
    if span_h < p.kh() || span_w < p.kw() {
        return Err(Error::shape(format!(
            "conv2d: {}x{} kernel does not fit {}x{} input with padding {}",
            p.kh(),
            p.kw(),
            h,
            w,
            p.padding
        )));
    }
    let oh = (span_h - p.kh()) / p.stride + 1;
    let ow = (span_w - p.kw()) / p.stride + 1;
    Ok([n, p.out_c(), oh, ow])
}

/// Range of output columns `ox` whose input column `ox·s + k − pad` lies in `[0, w)`.
#[inline]
fn valid_range(out_len: usize, in_len: usize, stride: usize, k: usize, pad: usize) -> (usize, usize) {
    // ox·s + k ≥ pad  and  ox·s + k − pad ≤ in_len − 1
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    let hi = if in_len + pad > k {
        ((in_len + pad - k - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Zero-padded copy of the planes of batch item `b`, each `(h + 2·py) × (w + 2·px)`.
fn padded(x: &Tensor, b: usize, py: usize, px: usize) -> Vec<f64> {
    let [_, c, h, w] = x.dims();
    let (ph, pw) = (h + 2 * py, w + 2 * px);
    let mut out = vec![0.0; c * ph * pw];
    for ch in 0..c {
        let src = x.plane(b, ch);
        let dst = &mut out[ch * ph * pw..(ch + 1) * ph * pw];
        for y in 0..h {
            dst[(y + py) * pw + px..(y + py) * pw + px + w].copy_from_slice(&src[y * w..(y + 1) * w]);
        }
    }
    out
}

/// A stride-1 correlation over a padded input: `out[o][y][x] = Σ_{i,ky,kx} w[o][i][ky][kx] ·
/// xp[i][y+ky][x+kx] (+ bias[o])`.
struct Correlation<'a> {
    xp: &'a [f64],
    in_c: usize,
    ph: usize,
    pw: usize,
    kh: usize,
    kw: usize,
    bias: Option<&'a [f64]>,
    oh: usize,
    ow: usize,
}

const OC_BLOCK: usize = 4;

fn simd_available() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        std::arch::is_x86_feature_detected!("avx")
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

/// Weights `(out_c, in_c, kh, kw)` regrouped so that each block of `OC_BLOCK` output channels
/// stores, per tap `(i, ky, kx)`, its `OC_BLOCK` weights contiguously. Leftover output
/// channels keep the plain layout.
struct PackedWeights {
    blocked: Vec<f64>,
    full_blocks: usize,
    rest: Vec<f64>,
    taps: usize,
}

impl PackedWeights {
    fn new(w: &[f64], out_c: usize, taps: usize) -> Self {
        let full_blocks = out_c / OC_BLOCK;
        let mut blocked = vec![0.0; full_blocks * OC_BLOCK * taps];
        for blk in 0..full_blocks {
            for o in 0..OC_BLOCK {
                let src = &w[(blk * OC_BLOCK + o) * taps..(blk * OC_BLOCK + o + 1) * taps];
                for (t, &v) in src.iter().enumerate() {
                    blocked[(blk * taps + t) * OC_BLOCK + o] = v;
                }
            }
        }
        let rest = w[full_blocks * OC_BLOCK * taps..out_c * taps].to_vec();
        PackedWeights {
            blocked,
            full_blocks,
            rest,
            taps,
        }
    }
}

impl Correlation<'_> {
    /// Output channels `oc0..oc0 + O`, row `oy`, columns `ox..ox + W`; `wblk` holds, per tap,
    /// the `O` weights of those channels.
    #[inline(always)]
    fn tile<const O: usize, const W: usize>(&self, wblk: &[f64], oc0: usize, oy: usize, ox: usize, out: &mut [f64]) {
        let mut acc = [[0.0f64; W]; O];
        let plane = self.ph * self.pw;
        let mut t = 0;
        for ic in 0..self.in_c {
            let xplane = &self.xp[ic * plane..(ic + 1) * plane];
            for ky in 0..self.kh {
                let row = &xplane[(oy + ky) * self.pw + ox..];
                for kx in 0..self.kw {
                    let xs: &[f64; W] = row[kx..kx + W].try_into().expect("tile fits the padded row");
                    let ws: &[f64; O] = wblk[t * O..(t + 1) * O].try_into().expect("packed taps");
                    for o in 0..O {
                        for j in 0..W {
                            acc[o][j] += ws[o] * xs[j];
                        }
                    }
                    t += 1;
                }
            }
        }
        let oplane = self.oh * self.ow;
        for (o, acc_o) in acc.iter().enumerate() {
            let dst = &mut out[(oc0 + o) * oplane + oy * self.ow + ox..][..W];
            match self.bias {
                Some(bias) => {
                    let bv = bias[oc0 + o];
                    for j in 0..W {
                        dst[j] = acc_o[j] + bv;
                    }
                }
                None => dst.copy_from_slice(acc_o),
            }
        }
    }

    #[inline(always)]
    fn row<const O: usize>(&self, wblk: &[f64], oc0: usize, oy: usize, mut ox: usize, out: &mut [f64]) {
        while ox < self.ow {
            let rem = self.ow - ox;
            if rem >= 8 {
                self.tile::<O, 8>(wblk, oc0, oy, ox, out);
                ox += 8;
            } else if rem >= 4 {
                self.tile::<O, 4>(wblk, oc0, oy, ox, out);
                ox += 4;
            } else {
                self.tile::<O, 1>(wblk, oc0, oy, ox, out);
                ox += 1;
            }
        }
    }

    /// Same arithmetic as `tile::<4, 8>`: a separate multiply and add per tap, no fused
    /// multiply-add, so every lane rounds exactly as the scalar loop does.
    ///
    /// # Safety
    /// The CPU must support AVX, and `ox + 8 <= self.ow`.
    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx")]
    unsafe fn tile_4x8_avx(&self, wblk: &[f64], oc0: usize, oy: usize, ox: usize, out: &mut [f64]) {
        use std::arch::x86_64::*;
        let plane = self.ph * self.pw;
        let taps = self.in_c * self.kh * self.kw;
        assert!(ox + 8 <= self.ow && oy < self.oh);
        assert!(wblk.len() >= taps * 4 && self.xp.len() >= self.in_c * plane);
        assert!(out.len() >= (oc0 + 4) * self.oh * self.ow);
        let mut acc = [_mm256_setzero_pd(); 8];
        let mut wp = wblk.as_ptr();
        for ic in 0..self.in_c {
            for ky in 0..self.kh {
                // Columns ox + kx .. ox + kx + 8 stay inside the padded row since ow + kw - 1 == pw.
                let xrow = self.xp.as_ptr().add(ic * plane + (oy + ky) * self.pw + ox);
                for kx in 0..self.kw {
                    let x0 = _mm256_loadu_pd(xrow.add(kx));
                    let x1 = _mm256_loadu_pd(xrow.add(kx + 4));
                    for o in 0..4 {
                        let w = _mm256_broadcast_sd(&*wp.add(o));
                        acc[2 * o] = _mm256_add_pd(acc[2 * o], _mm256_mul_pd(w, x0));
                        acc[2 * o + 1] = _mm256_add_pd(acc[2 * o + 1], _mm256_mul_pd(w, x1));
                    }
                    wp = wp.add(4);
                }
            }
        }
        let oplane = self.oh * self.ow;
        for o in 0..4 {
            let dst = out.as_mut_ptr().add((oc0 + o) * oplane + oy * self.ow + ox);
            let (mut a0, mut a1) = (acc[2 * o], acc[2 * o + 1]);
            if let Some(bias) = self.bias {
                let b = _mm256_set1_pd(bias[oc0 + o]);
                a0 = _mm256_add_pd(a0, b);
                a1 = _mm256_add_pd(a1, b);
            }
            _mm256_storeu_pd(dst, a0);
            _mm256_storeu_pd(dst.add(4), a1);
        }
    }

    fn block_row(&self, wblk: &[f64], oc0: usize, oy: usize, out: &mut [f64], simd: bool) {
        let mut ox = 0;
        #[cfg(target_arch = "x86_64")]
        if simd {
            while ox + 8 <= self.ow {
                // SAFETY: `simd` is only set after AVX was detected; the loop bound keeps the tile in range.
                unsafe { self.tile_4x8_avx(wblk, oc0, oy, ox, out) };
                ox += 8;
            }
        }
        #[cfg(not(target_arch = "x86_64"))]
        let _ = simd;
        self.row::<OC_BLOCK>(wblk, oc0, oy, ox, out);
    }

    /// Fills `out`, laid out `(out_c, oh, ow)`.
    fn run(&self, w: &PackedWeights, out: &mut [f64]) {
        let span = w.taps * OC_BLOCK;
        let simd = simd_available();
        for blk in 0..w.full_blocks {
            let wblk = &w.blocked[blk * span..(blk + 1) * span];
            for oy in 0..self.oh {
                self.block_row(wblk, blk * OC_BLOCK, oy, out, simd);
            }
        }
        for (r, wblk) in w.rest.chunks_exact(w.taps).enumerate() {
            for oy in 0..self.oh {
                self.row::<1>(wblk, w.full_blocks * OC_BLOCK + r, oy, 0, out);
            }
        }
    }
}

fn conv2d_strided(x: &Tensor, p: &ConvParams, out_dims: Dims) -> Tensor {
    let [n, oc_count, oh, ow] = out_dims;
    let [_, ic_count, h, w] = x.dims();
    let (kh, kw, s, pad) = (p.kh(), p.kw(), p.stride, p.padding);
    let mut y = Tensor::zeros(out_dims);
    let wdata = p.weight.data();
    let col_ranges: Vec<_> = (0..kw).map(|kx| valid_range(ow, w, s, kx, pad)).collect();
    let row_ranges: Vec<_> = (0..kh).map(|ky| valid_range(oh, h, s, ky, pad)).collect();
    for b in 0..n {
        for oc in 0..oc_count {
            let out = y.plane_mut(b, oc);
            for ic in 0..ic_count {
                let xin = x.plane(b, ic);
                for ky in 0..kh {
                    let (oy0, oy1) = row_ranges[ky];
                    for kx in 0..kw {
                        let wv = wdata[((oc * ic_count + ic) * kh + ky) * kw + kx];
                        let (ox0, ox1) = col_ranges[kx];
                        for oy in oy0..oy1 {
                            let iy = oy * s + ky - pad;
                            for ox in ox0..ox1 {
                                out[oy * ow + ox] += wv * xin[iy * w + ox * s + kx - pad];
                            }
                        }
                    }
                }
            }
            let bias = p.bias[oc];
            for o in out.iter_mut() {
                *o += bias;
            }
        }
    }
    y
}

pub fn conv2d(x: &Tensor, p: &ConvParams) -> Result<Tensor> {
    let out_dims = conv2d_out_dims(x.dims(), p)?;
    if p.stride != 1 {
        return Ok(conv2d_strided(x, p, out_dims));
    }
    let [n, oc_count, oh, ow] = out_dims;
    let [_, ic_count, h, w] = x.dims();
    let pad = p.padding;
    let mut y = Tensor::zeros(out_dims);
    let per_item = oc_count * oh * ow;
    let packed = PackedWeights::new(p.weight.data(), oc_count, ic_count * p.kh() * p.kw());
    for b in 0..n {
        let xp = padded(x, b, pad, pad);
        let corr = Correlation {
            xp: &xp,
            in_c: ic_count,
            ph: h + 2 * pad,
            pw: w + 2 * pad,
            kh: p.kh(),
            kw: p.kw(),
            bias: Some(&p.bias),
            oh,
            ow,
        };
        corr.run(&packed, &mut y.data_mut()[b * per_item..(b + 1) * per_item]);
    }
    Ok(y)
}

/// Analytic gradients of `Σ dy ⊙ conv2d(x, p)`.
#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub dx: Tensor,
    pub dweight: Tensor,
    pub dbias: Vec<f64>,
}

impl ConvGrads {
    /// The weight and bias gradients packaged like the parameters they belong to.
    pub fn param_grads(&self, p: &ConvParams) -> ConvParams {
        ConvParams {
            weight: self.dweight.clone(),
            bias: self.dbias.clone(),
            stride: p.stride,
            padding: p.padding,
        }
    }
}

/// Weight gradient of one `(oc, ic)` pair: for each tap `t = (ky, kx)`,
/// `Σ_b Σ_oy Σ_ox g[b][oy][ox] · x[b][oy + ky][ox + kx]` over padded input planes of width `pw`.
///
/// Each tap sums in four interleaved lanes over column chunks of four plus a scalar tail over the
/// leftover columns, both in `(b, oy, ox)` order, and reports `((l0 + l1) + (l2 + l3)) + tail`.
fn weight_grad_scalar(gs: &[&[f64]], xs: &[&[f64]], oh: usize, ow: usize, pw: usize, kh: usize, kw: usize, out: &mut [f64]) {
    let taps = kh * kw;
    let mut lanes = vec![[0.0f64; 4]; taps];
    let mut tail = vec![0.0f64; taps];
    let full = ow / 4 * 4;
    for (g, x) in gs.iter().zip(xs) {
        for oy in 0..oh {
            let grow = &g[oy * ow..(oy + 1) * ow];
            for ky in 0..kh {
                let xrow = &x[(oy + ky) * pw..(oy + ky + 1) * pw];
                for kx in 0..kw {
                    let t = ky * kw + kx;
                    let xr = &xrow[kx..kx + ow];
                    let l = &mut lanes[t];
                    for c in (0..full).step_by(4) {
                        for j in 0..4 {
                            l[j] += grow[c + j] * xr[c + j];
                        }
                    }
                    for i in full..ow {
                        tail[t] += grow[i] * xr[i];
                    }
                }
            }
        }
    }
    for (t, o) in out.iter_mut().enumerate().take(taps) {
        let l = lanes[t];
        *o = ((l[0] + l[1]) + (l[2] + l[3])) + tail[t];
    }
}

/// [`weight_grad_scalar`] for a fixed `KH × KW` kernel with the lanes held in AVX registers.
///
/// # Safety
/// The CPU must support AVX.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx")]
unsafe fn weight_grad_avx<const KH: usize, const KW: usize>(
    gs: &[&[f64]],
    xs: &[&[f64]],
    oh: usize,
    ow: usize,
    pw: usize,
    out: &mut [f64],
) {
    use std::arch::x86_64::*;
    assert!(pw + 1 >= ow + KW && out.len() >= KH * KW);
    let mut acc = [[_mm256_setzero_pd(); KW]; KH];
    let mut tail = [[0.0f64; KW]; KH];
    let full = ow / 4 * 4;
    for (g, x) in gs.iter().zip(xs) {
        assert!(g.len() >= oh * ow && x.len() >= (oh + KH - 1) * pw);
        for oy in 0..oh {
            let gp = g.as_ptr().add(oy * ow);
            for ky in 0..KH {
                let xp = x.as_ptr().add((oy + ky) * pw);
                let mut c = 0;
                while c < full {
                    let gv = _mm256_loadu_pd(gp.add(c));
                    for kx in 0..KW {
                        acc[ky][kx] = _mm256_add_pd(acc[ky][kx], _mm256_mul_pd(gv, _mm256_loadu_pd(xp.add(c + kx))));
                    }
                    c += 4;
                }
                for i in full..ow {
                    let gi = *gp.add(i);
                    for kx in 0..KW {
                        tail[ky][kx] += gi * *xp.add(i + kx);
                    }
                }
            }
        }
    }
    for ky in 0..KH {
        for kx in 0..KW {
            let mut l = [0.0f64; 4];
            _mm256_storeu_pd(l.as_mut_ptr(), acc[ky][kx]);
            out[ky * KW + kx] = ((l[0] + l[1]) + (l[2] + l[3])) + tail[ky][kx];
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn weight_grad(gs: &[&[f64]], xs: &[&[f64]], oh: usize, ow: usize, pw: usize, kh: usize, kw: usize, out: &mut [f64], simd: bool) {
    #[cfg(target_arch = "x86_64")]
    if simd {
        // SAFETY: `simd` is only set after AVX was detected.
        match (kh, kw) {
            (3, 3) => return unsafe { weight_grad_avx::<3, 3>(gs, xs, oh, ow, pw, out) },
            (1, 1) => return unsafe { weight_grad_avx::<1, 1>(gs, xs, oh, ow, pw, out) },
            _ => {}
        }
    }
    #[cfg(not(target_arch = "x86_64"))]
    let _ = simd;
    weight_grad_scalar(gs, xs, oh, ow, pw, kh, kw, out);
}

fn conv2d_grad_strided(x: &Tensor, p: &ConvParams, dy: &Tensor, out_dims: Dims) -> (Tensor, Tensor) {
    let [n, oc_count, oh, ow] = out_dims;
    let [_, ic_count, h, w] = x.dims();
    let (kh, kw, s, pad) = (p.kh(), p.kw(), p.stride, p.padding);
    let wdata = p.weight.data();
    let col_ranges: Vec<_> = (0..kw).map(|kx| valid_range(ow, w, s, kx, pad)).collect();
    let row_ranges: Vec<_> = (0..kh).map(|ky| valid_range(oh, h, s, ky, pad)).collect();

    let mut dweight = Tensor::zeros(p.weight.dims());
    let mut dx = Tensor::zeros(x.dims());
    for oc in 0..oc_count {
        for ic in 0..ic_count {
            for ky in 0..kh {
                let (oy0, oy1) = row_ranges[ky];
                for kx in 0..kw {
                    let (ox0, ox1) = col_ranges[kx];
                    let widx = ((oc * ic_count + ic) * kh + ky) * kw + kx;
                    let wv = wdata[widx];
                    let mut acc = 0.0;
                    for b in 0..n {
                        let g = dy.plane(b, oc);
                        let xin = x.plane(b, ic);
                        for oy in oy0..oy1 {
                            let iy = oy * s + ky - pad;
                            for ox in ox0..ox1 {
                                acc += g[oy * ow + ox] * xin[iy * w + ox * s + kx - pad];
                            }
                        }
                    }
                    dweight.data_mut()[widx] = acc;
                    for b in 0..n {
                        let g = dy.plane(b, oc);
                        let dxp = dx.plane_mut(b, ic);
                        for oy in oy0..oy1 {
                            let iy = oy * s + ky - pad;
                            for ox in ox0..ox1 {
                                dxp[iy * w + ox * s + kx - pad] += wv * g[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    (dx, dweight)
}

pub fn conv2d_grad(x: &Tensor, p: &ConvParams, dy: &Tensor) -> Result<ConvGrads> {
    let out_dims = conv2d_out_dims(x.dims(), p)?;
    dy.expect_dims(out_dims, "conv2d_grad dy")?;
    let [n, oc_count, oh, ow] = out_dims;
    let [_, ic_count, h, w] = x.dims();
    let (kh, kw, pad) = (p.kh(), p.kw(), p.padding);

    let mut dbias = vec![0.0; oc_count];
    for (oc, db) in dbias.iter_mut().enumerate() {
        for b in 0..n {
            *db += dy.plane(b, oc).iter().sum::<f64>();
        }
    }

    if p.stride != 1 || pad >= kh || pad >= kw {
        let (dx, dweight) = conv2d_grad_strided(x, p, dy, out_dims);
        return Ok(ConvGrads { dx, dweight, dbias });
    }

    // dweight[oc][ic][ky][kx] = Σ_b Σ_oy,ox dy[b][oc][oy][ox] · xpad[b][ic][oy+ky][ox+kx]
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let xps: Vec<Vec<f64>> = (0..n).map(|b| padded(x, b, pad, pad)).collect();
    let taps = kh * kw;
    let mut dweight = Tensor::zeros(p.weight.dims());
    let simd = simd_available();
    for (pair, dw) in dweight.data_mut().chunks_exact_mut(taps).enumerate() {
        let (oc, ic) = (pair / ic_count, pair % ic_count);
        let gs: Vec<&[f64]> = (0..n).map(|b| dy.plane(b, oc)).collect();
        let xs: Vec<&[f64]> = xps.iter().map(|xp| &xp[ic * ph * pw..(ic + 1) * ph * pw]).collect();
        weight_grad(&gs, &xs, oh, ow, pw, kh, kw, dw, simd);
    }

    // dx is the correlation of dy, padded by k − 1 − pad, with the flipped, transposed kernel.
    let (qy, qx) = (kh - 1 - pad, kw - 1 - pad);
    let wdata = p.weight.data();
    let mut flipped = vec![0.0; wdata.len()];
    for oc in 0..oc_count {
        for ic in 0..ic_count {
            for ky in 0..kh {
                for kx in 0..kw {
                    flipped[((ic * oc_count + oc) * kh + (kh - 1 - ky)) * kw + (kw - 1 - kx)] =
                        wdata[((oc * ic_count + ic) * kh + ky) * kw + kx];
                }
            }
        }
    }
    let packed = PackedWeights::new(&flipped, ic_count, oc_count * taps);
    let mut dx = Tensor::zeros(x.dims());
    let per_item = ic_count * h * w;
    for b in 0..n {
        let gp = padded(dy, b, qy, qx);
        let corr = Correlation {
            xp: &gp,
            in_c: oc_count,
            ph: oh + 2 * qy,
            pw: ow + 2 * qx,
            kh,
            kw,
            bias: None,
            oh: h,
            ow: w,
        };
        corr.run(&packed, &mut dx.data_mut()[b * per_item..(b + 1) * per_item]);
    }

    Ok(ConvGrads {
        dx,
        dweight,
        dbias,
    })
}
