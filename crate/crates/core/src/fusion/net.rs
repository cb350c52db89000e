//! The desk-scale two-stream fusion network.
//!
//! Each modality runs through five convolution blocks (two 3×3 conv + ReLU layers, with a
//! 2×2 max-pool closing blocks 2–5). Every block output is refined by that stream's CBAM and
//! the two refined maps are fused level by level. Pyramid pooling on the deepest fused map
//! yields a global guidance map; decoding runs from level 5 up to level 2, where each level
//! sums its fused map, the upsampled decoder state and the projected, upsampled guidance,
//! then applies a feature aggregation module and a ReLU. A 3×3 head with a sigmoid produces
//! the half-resolution saliency map, which is bilinearly upsampled to the input size.
//!
//! # Parameter order
//!
//! Initialisation draws and serialisation both follow [`AdfNetToy::named_convs`]:
//! `rgb.block{1..5}.conv{1,2}`, `thermal.block{1..5}.conv{1,2}`,
//! `rgb.cbam{1..5}.{ca_reduce,ca_expand,sa_conv}`, `thermal.cbam{1..5}.*`, `merge{2..5}`,
//! `ppm.branch{0..3}`, `ppm.fuse`, `guide{2..5}`, `fam{2..5}.fuse`, `head`.

use serde::{Deserialize, Serialize};

use super::cbam::{cbam_backward, cbam_forward, CbamCache, CbamParams};
use super::fam::{fam_backward, fam_forward_cached, FamCache, FamParams};
use super::ppm::{ppm_backward, ppm_forward_cached, PpmCache, PpmParams};
use super::stage::{fuse_stage_backward, fuse_stage_forward, FuseCache};
use crate::error::{Error, Result};
use crate::ops::{
    activation, activation_grad, conv2d, conv2d_grad, maxpool2, maxpool2_grad, upsample_bilinear,
    upsample_bilinear_grad, Activation, ArgMax,
};
use crate::tensor::{ConvParams, Rng, Tensor};

pub const LEVELS: usize = 5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Output channels of blocks 1..=5.
    pub channels: [usize; LEVELS],
    /// Channel-attention reduction ratio.
    pub reduction: usize,
    /// Spatial-attention kernel size (odd).
    pub spatial_kernel: usize,
    pub rgb_channels: usize,
    pub thermal_channels: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            channels: [8, 16, 32, 32, 32],
            reduction: 4,
            spatial_kernel: 7,
            rgb_channels: 3,
            thermal_channels: 1,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reduction == 0 {
            return Err(Error::Config("reduction ratio must be positive".into()));
        }
        for (i, &c) in self.channels.iter().enumerate() {
            if c == 0 || c % self.reduction != 0 {
                return Err(Error::Config(format!(
                    "block {} has {c} channels, not a positive multiple of reduction {}",
                    i + 1,
                    self.reduction
                )));
            }
        }
        if !self.channels[LEVELS - 1].is_multiple_of(4) {
            return Err(Error::Config(format!(
                "deepest block needs a multiple of 4 channels for pyramid pooling, got {}",
                self.channels[LEVELS - 1]
            )));
        }
        if self.spatial_kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "spatial kernel {} must be odd",
                self.spatial_kernel
            )));
        }
        if self.rgb_channels == 0 || self.thermal_channels == 0 {
            return Err(Error::Config("input channel counts must be positive".into()));
        }
        Ok(())
    }

    /// Channels entering decode level `level` (2..=5) from the level above, and leaving it.
    fn fam_out(&self, level: usize) -> usize {
        if level == 2 {
            self.channels[1]
        } else {
            self.channels[level - 2]
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlock {
    pub conv1: ConvParams,
    pub conv2: ConvParams,
}

impl ConvBlock {
    fn zeros_like(&self) -> Self {
        ConvBlock {
            conv1: self.conv1.zeros_like(),
            conv2: self.conv2.zeros_like(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdfNetToy {
    config: NetConfig,
    pub rgb_blocks: Vec<ConvBlock>,
    pub t_blocks: Vec<ConvBlock>,
    pub cbam_rgb: Vec<CbamParams>,
    pub cbam_t: Vec<CbamParams>,
    /// Carry convolutions of fusion levels 2..=5.
    pub merge_convs: Vec<ConvParams>,
    pub ppm: PpmParams,
    /// 1×1 projections of the guidance map onto decode levels 2..=5.
    pub guide_convs: Vec<ConvParams>,
    /// Aggregation modules of decode levels 2..=5.
    pub fams: Vec<FamParams>,
    pub head: ConvParams,
}

impl AdfNetToy {
    /// Xavier-uniform weights and zero biases, drawn from `Rng::new(seed)` in parameter order.
    pub fn init(config: &NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(seed);
        let ch = config.channels;
        let stream = |in_c: usize, rng: &mut Rng| -> Vec<ConvBlock> {
            let mut prev = in_c;
            ch.iter()
                .map(|&c| {
                    let conv1 = ConvParams::xavier_same(c, prev, 3, rng);
                    let conv2 = ConvParams::xavier_same(c, c, 3, rng);
                    prev = c;
                    ConvBlock { conv1, conv2 }
                })
                .collect()
        };
        let rgb_blocks = stream(config.rgb_channels, &mut rng);
        let t_blocks = stream(config.thermal_channels, &mut rng);
        let cbams = |rng: &mut Rng| -> Result<Vec<CbamParams>> {
            ch.iter()
                .map(|&c| CbamParams::init(c, config.reduction, config.spatial_kernel, rng))
                .collect()
        };
        let cbam_rgb = cbams(&mut rng)?;
        let cbam_t = cbams(&mut rng)?;
        let merge_convs = (2..=LEVELS)
            .map(|l| ConvParams::xavier_same(ch[l - 1], ch[l - 2], 3, &mut rng))
            .collect();
        let deepest = ch[LEVELS - 1];
        let ppm = PpmParams::init(deepest, deepest, &mut rng)?;
        let guide_convs = (2..=LEVELS)
            .map(|l| ConvParams::xavier_same(ch[l - 1], deepest, 1, &mut rng))
            .collect();
        let fams = (2..=LEVELS)
            .map(|l| FamParams::init(ch[l - 1], config.fam_out(l), &mut rng))
            .collect();
        let head = ConvParams::xavier_same(1, ch[1], 3, &mut rng);
        Ok(AdfNetToy {
            config: config.clone(),
            rgb_blocks,
            t_blocks,
            cbam_rgb,
            cbam_t,
            merge_convs,
            ppm,
            guide_convs,
            fams,
            head,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    /// Same structure with every weight and bias zeroed; gradients are returned in this form.
    pub fn zeros_like(&self) -> Self {
        AdfNetToy {
            config: self.config.clone(),
            rgb_blocks: self.rgb_blocks.iter().map(ConvBlock::zeros_like).collect(),
            t_blocks: self.t_blocks.iter().map(ConvBlock::zeros_like).collect(),
            cbam_rgb: self.cbam_rgb.iter().map(CbamParams::zeros_like).collect(),
            cbam_t: self.cbam_t.iter().map(CbamParams::zeros_like).collect(),
            merge_convs: self.merge_convs.iter().map(ConvParams::zeros_like).collect(),
            ppm: self.ppm.zeros_like(),
            guide_convs: self.guide_convs.iter().map(ConvParams::zeros_like).collect(),
            fams: self.fams.iter().map(FamParams::zeros_like).collect(),
            head: self.head.zeros_like(),
        }
    }

    /// Every convolution with its canonical name, in parameter order.
    pub fn named_convs(&self) -> Vec<(String, &ConvParams)> {
        let mut out = Vec::new();
        for (stream, blocks) in [("rgb", &self.rgb_blocks), ("thermal", &self.t_blocks)] {
            for (i, b) in blocks.iter().enumerate() {
                out.push((format!("{stream}.block{}.conv1", i + 1), &b.conv1));
                out.push((format!("{stream}.block{}.conv2", i + 1), &b.conv2));
            }
        }
        for (stream, cbams) in [("rgb", &self.cbam_rgb), ("thermal", &self.cbam_t)] {
            for (i, c) in cbams.iter().enumerate() {
                for (part, conv) in c.convs() {
                    out.push((format!("{stream}.cbam{}.{part}", i + 1), conv));
                }
            }
        }
        for (i, m) in self.merge_convs.iter().enumerate() {
            out.push((format!("merge{}", i + 2), m));
        }
        for (i, b) in self.ppm.branch_convs.iter().enumerate() {
            out.push((format!("ppm.branch{i}"), b));
        }
        out.push(("ppm.fuse".into(), &self.ppm.fuse_conv));
        for (i, g) in self.guide_convs.iter().enumerate() {
            out.push((format!("guide{}", i + 2), g));
        }
        for (i, f) in self.fams.iter().enumerate() {
            out.push((format!("fam{}.fuse", i + 2), &f.fuse_conv));
        }
        out.push(("head".into(), &self.head));
        out
    }

    /// Mutable view of every convolution, in the same order as [`named_convs`](Self::named_convs).
    pub fn convs_mut(&mut self) -> Vec<&mut ConvParams> {
        let mut out: Vec<&mut ConvParams> = Vec::new();
        for blocks in [&mut self.rgb_blocks, &mut self.t_blocks] {
            for b in blocks.iter_mut() {
                out.push(&mut b.conv1);
                out.push(&mut b.conv2);
            }
        }
        for cbams in [&mut self.cbam_rgb, &mut self.cbam_t] {
            for c in cbams.iter_mut() {
                out.extend(c.convs_mut());
            }
        }
        out.extend(self.merge_convs.iter_mut());
        out.extend(self.ppm.branch_convs.iter_mut());
        out.push(&mut self.ppm.fuse_conv);
        out.extend(self.guide_convs.iter_mut());
        out.extend(self.fams.iter_mut().map(|f| &mut f.fuse_conv));
        out.push(&mut self.head);
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_convs().iter().map(|(_, c)| c.param_count()).sum()
    }

    /// `self += k · other` over every parameter; structures must match.
    pub fn axpy(&mut self, k: f64, other: &AdfNetToy) -> Result<()> {
        let theirs = other.named_convs();
        let mine = self.convs_mut();
        if mine.len() != theirs.len() {
            return Err(Error::shape("parameter bundles differ in structure"));
        }
        for (m, (_, t)) in mine.into_iter().zip(theirs) {
            m.axpy(k, t)?;
        }
        Ok(())
    }

    /// Sum of squares of every parameter.
    pub fn squared_norm(&self) -> f64 {
        self.named_convs()
            .iter()
            .map(|(_, c)| {
                c.weight.data().iter().map(|v| v * v).sum::<f64>()
                    + c.bias.iter().map(|v| v * v).sum::<f64>()
            })
            .sum()
    }

    /// Weights and biases as tensors, alternating `weight, bias` per convolution in parameter
    /// order; biases have dims `(1, 1, 1, out_c)`.
    pub fn param_tensors(&self) -> Vec<Tensor> {
        let mut out = Vec::new();
        for (_, c) in self.named_convs() {
            out.push(c.weight.clone());
            out.push(Tensor::new([1, 1, 1, c.bias.len()], c.bias.clone()).expect("bias length"));
        }
        out
    }

    /// Copy of this network with parameters replaced by tensors laid out as in
    /// [`param_tensors`](Self::param_tensors).
    pub fn with_param_tensors(&self, tensors: &[Tensor]) -> Result<Self> {
        let mut net = self.clone();
        let slots = net.convs_mut();
        if tensors.len() != 2 * slots.len() {
            return Err(Error::shape(format!(
                "expected {} parameter tensors, got {}",
                2 * slots.len(),
                tensors.len()
            )));
        }
        for (slot, pair) in slots.into_iter().zip(tensors.chunks_exact(2)) {
            pair[0].expect_dims(slot.weight.dims(), "weight tensor")?;
            pair[1].expect_dims([1, 1, 1, slot.bias.len()], "bias tensor")?;
            slot.weight = pair[0].clone();
            slot.bias = pair[1].data().to_vec();
        }
        Ok(net)
    }

    /// Rebuilds a network from convolutions listed in parameter order.
    pub(crate) fn from_convs(config: &NetConfig, convs: Vec<ConvParams>) -> Result<Self> {
        let mut net = AdfNetToy::init(config, 0)?.zeros_like();
        let slots = net.convs_mut();
        if slots.len() != convs.len() {
            return Err(Error::shape(format!(
                "expected {} convolutions, got {}",
                slots.len(),
                convs.len()
            )));
        }
        for (slot, conv) in slots.into_iter().zip(convs) {
            if slot.weight.dims() != conv.weight.dims() || slot.bias.len() != conv.bias.len() {
                return Err(Error::shape(format!(
                    "convolution weight {:?} does not fit slot {:?}",
                    conv.weight.dims(),
                    slot.weight.dims()
                )));
            }
            *slot = conv;
        }
        Ok(net)
    }

    fn check_inputs(&self, rgb: &Tensor, t: &Tensor) -> Result<()> {
        let [n, c, h, w] = rgb.dims();
        if c != self.config.rgb_channels {
            return Err(Error::shape(format!(
                "RGB input has {c} channels, network expects {}",
                self.config.rgb_channels
            )));
        }
        t.expect_dims([n, self.config.thermal_channels, h, w], "thermal input")?;
        if h != w || h == 0 || h % 32 != 0 {
            return Err(Error::shape(format!(
                "input must be square with side divisible by 32, got {h}x{w}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct BlockCache {
    input: Tensor,
    z1: Tensor,
    a1: Tensor,
    z2: Tensor,
    a2: Tensor,
    pool_arg: Option<ArgMax>,
}

fn block_forward(x: &Tensor, b: &ConvBlock, pool: bool) -> Result<(Tensor, BlockCache)> {
    let z1 = conv2d(x, &b.conv1)?;
    let a1 = activation(&z1, Activation::Relu);
    let z2 = conv2d(&a1, &b.conv2)?;
    let a2 = activation(&z2, Activation::Relu);
    let (out, pool_arg) = if pool {
        let (y, arg) = maxpool2(&a2)?;
        (y, Some(arg))
    } else {
        (a2.clone(), None)
    };
    Ok((
        out,
        BlockCache {
            input: x.clone(),
            z1,
            a1,
            z2,
            a2,
            pool_arg,
        },
    ))
}

fn block_backward(b: &ConvBlock, cache: &BlockCache, dy: &Tensor, grads: &mut ConvBlock) -> Result<Tensor> {
    let da2 = match &cache.pool_arg {
        Some(arg) => maxpool2_grad(cache.a2.dims(), arg, dy)?,
        None => dy.clone(),
    };
    let dz2 = activation_grad(&cache.z2, &cache.a2, Activation::Relu, &da2)?;
    let g2 = conv2d_grad(&cache.a1, &b.conv2, &dz2)?;
    grads.conv2.axpy(1.0, &g2.param_grads(&b.conv2))?;
    let dz1 = activation_grad(&cache.z1, &cache.a1, Activation::Relu, &g2.dx)?;
    let g1 = conv2d_grad(&cache.input, &b.conv1, &dz1)?;
    grads.conv1.axpy(1.0, &g1.param_grads(&b.conv1))?;
    Ok(g1.dx)
}

#[derive(Clone, Debug)]
struct StreamCache {
    blocks: Vec<BlockCache>,
    outputs: Vec<Tensor>,
    cbams: Vec<CbamCache>,
    refined: Vec<Tensor>,
}

fn stream_forward(x: &Tensor, blocks: &[ConvBlock], cbams: &[CbamParams]) -> Result<StreamCache> {
    let mut cache = StreamCache {
        blocks: Vec::with_capacity(LEVELS),
        outputs: Vec::with_capacity(LEVELS),
        cbams: Vec::with_capacity(LEVELS),
        refined: Vec::with_capacity(LEVELS),
    };
    let mut cur = x.clone();
    for (i, (b, c)) in blocks.iter().zip(cbams).enumerate() {
        let (out, bc) = block_forward(&cur, b, i > 0)?;
        let (refined, cc) = cbam_forward(&out, c)?;
        cache.blocks.push(bc);
        cache.cbams.push(cc);
        cache.refined.push(refined);
        cache.outputs.push(out.clone());
        cur = out;
    }
    Ok(cache)
}

/// Back-propagates gradients arriving at each level's refined map through the stream.
fn stream_backward(
    blocks: &[ConvBlock],
    cbams: &[CbamParams],
    cache: &StreamCache,
    drefined: &[Tensor],
    block_grads: &mut [ConvBlock],
    cbam_grads: &mut [CbamParams],
) -> Result<()> {
    let mut dnext: Option<Tensor> = None;
    for i in (0..LEVELS).rev() {
        let mut dout = cbam_backward(&cache.outputs[i], &cbams[i], &cache.cbams[i], &drefined[i], &mut cbam_grads[i])?;
        if let Some(d) = dnext.take() {
            dout.add_assign(&d)?;
        }
        dnext = Some(block_backward(&blocks[i], &cache.blocks[i], &dout, &mut block_grads[i])?);
    }
    Ok(())
}

#[derive(Clone, Debug)]
struct DecodeCache {
    /// Projected guidance at level-5 resolution.
    guide_proj: Tensor,
    /// FAM input.
    merged: Tensor,
    fam: FamCache,
    fam_out: Tensor,
    state: Tensor,
}

/// Intermediate values of a forward pass, consumed by [`AdfNetToy::backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    rgb: StreamCache,
    thermal: StreamCache,
    fuse: Vec<FuseCache>,
    fused: Vec<Tensor>,
    ppm: PpmCache,
    guidance: Tensor,
    /// Decode levels 2..=5 at indices 0..4.
    decode: Vec<DecodeCache>,
    head_logits: Tensor,
    head_prob: Tensor,
    out_size: (usize, usize),
}

impl AdfNetToy {
    pub fn forward(&self, rgb: &Tensor, t: &Tensor) -> Result<Tensor> {
        Ok(self.forward_cached(rgb, t)?.0)
    }

    pub fn forward_cached(&self, rgb: &Tensor, t: &Tensor) -> Result<(Tensor, ForwardCache)> {
        self.check_inputs(rgb, t)?;
        let rgb_cache = stream_forward(rgb, &self.rgb_blocks, &self.cbam_rgb)?;
        let t_cache = stream_forward(t, &self.t_blocks, &self.cbam_t)?;

        let mut fused: Vec<Tensor> = Vec::with_capacity(LEVELS);
        let mut fuse = Vec::with_capacity(LEVELS);
        for i in 0..LEVELS {
            let (f, fc) = fuse_stage_forward(
                i + 1,
                i.checked_sub(1).map(|j| &fused[j]),
                &rgb_cache.refined[i],
                &t_cache.refined[i],
                i.checked_sub(1).map(|j| &self.merge_convs[j]),
            )?;
            fused.push(f);
            fuse.push(fc);
        }

        let (guidance, ppm_cache) = ppm_forward_cached(&fused[LEVELS - 1], &self.ppm)?;
        let mut decode: Vec<Option<DecodeCache>> = vec![None; LEVELS - 1];
        let mut state: Option<Tensor> = None;
        for level in (2..=LEVELS).rev() {
            let k = level - 2;
            let f = &fused[level - 1];
            let (h, w) = (f.h(), f.w());
            let guide_proj = conv2d(&guidance, &self.guide_convs[k])?;
            let mut merged = f.clone();
            merged.add_assign(&upsample_bilinear(&guide_proj, h, w)?)?;
            if let Some(s) = &state {
                merged.add_assign(&upsample_bilinear(s, h, w)?)?;
            }
            let (fam_out, fam) = fam_forward_cached(&merged, &self.fams[k])?;
            let next = activation(&fam_out, Activation::Relu);
            decode[k] = Some(DecodeCache {
                guide_proj,
                merged,
                fam,
                fam_out,
                state: next.clone(),
            });
            state = Some(next);
        }
        let decode: Vec<DecodeCache> = decode.into_iter().map(|d| d.expect("every level decoded")).collect();

        let head_logits = conv2d(&decode[0].state, &self.head)?;
        let head_prob = activation(&head_logits, Activation::Sigmoid);
        let (oh, ow) = (rgb.h(), rgb.w());
        let pred = upsample_bilinear(&head_prob, oh, ow)?;
        Ok((
            pred,
            ForwardCache {
                rgb: rgb_cache,
                thermal: t_cache,
                fuse,
                fused,
                ppm: ppm_cache,
                guidance,
                decode,
                head_logits,
                head_prob,
                out_size: (oh, ow),
            },
        ))
    }

    /// Gradients of `Σ dpred ⊙ forward(rgb, t)` with respect to every parameter.
    pub fn backward(&self, cache: &ForwardCache, dpred: &Tensor) -> Result<AdfNetToy> {
        let (oh, ow) = cache.out_size;
        dpred.expect_dims([cache.head_prob.n(), 1, oh, ow], "network output gradient")?;
        let mut grads = self.zeros_like();

        let dprob = upsample_bilinear_grad(cache.head_prob.dims(), dpred)?;
        let dlogits = activation_grad(&cache.head_logits, &cache.head_prob, Activation::Sigmoid, &dprob)?;
        let gh = conv2d_grad(&cache.decode[0].state, &self.head, &dlogits)?;
        grads.head = gh.param_grads(&self.head);

        let mut dfused: Vec<Tensor> = cache.fused.iter().map(|f| Tensor::zeros(f.dims())).collect();
        let mut dguidance = Tensor::zeros(cache.guidance.dims());
        let mut dstate = gh.dx;
        for level in 2..=LEVELS {
            let k = level - 2;
            let d = &cache.decode[k];
            let dfam_out = activation_grad(&d.fam_out, &d.state, Activation::Relu, &dstate)?;
            let dmerged = fam_backward(&d.merged, &self.fams[k], &d.fam, &dfam_out, &mut grads.fams[k])?;
            dfused[level - 1].add_assign(&dmerged)?;
            let dproj = upsample_bilinear_grad(d.guide_proj.dims(), &dmerged)?;
            let gg = conv2d_grad(&cache.guidance, &self.guide_convs[k], &dproj)?;
            grads.guide_convs[k] = gg.param_grads(&self.guide_convs[k]);
            dguidance.add_assign(&gg.dx)?;
            if level < LEVELS {
                let above = &cache.decode[k + 1].state;
                dstate = upsample_bilinear_grad(above.dims(), &dmerged)?;
            }
        }
        let dppm_in = ppm_backward(&cache.fused[LEVELS - 1], &self.ppm, &cache.ppm, &dguidance, &mut grads.ppm)?;
        dfused[LEVELS - 1].add_assign(&dppm_in)?;

        let mut drgb: Vec<Tensor> = Vec::with_capacity(LEVELS);
        let mut dt: Vec<Tensor> = Vec::with_capacity(LEVELS);
        for i in (0..LEVELS).rev() {
            let prev = i.checked_sub(1).map(|j| &cache.fused[j]);
            let merge = i.checked_sub(1).map(|j| &self.merge_convs[j]);
            let fg = fuse_stage_backward(prev, merge, &cache.fuse[i], &dfused[i])?;
            if let (Some(df), Some(dm)) = (fg.df_prev, fg.dmerge) {
                dfused[i - 1].add_assign(&df)?;
                grads.merge_convs[i - 1] = dm;
            }
            drgb.push(fg.dm_rgb);
            dt.push(fg.dm_t);
        }
        drgb.reverse();
        dt.reverse();

        stream_backward(&self.rgb_blocks, &self.cbam_rgb, &cache.rgb, &drgb, &mut grads.rgb_blocks, &mut grads.cbam_rgb)?;
        stream_backward(&self.t_blocks, &self.cbam_t, &cache.thermal, &dt, &mut grads.t_blocks, &mut grads.cbam_t)?;
        Ok(grads)
    }
}

fn record_signs(t: &Tensor, out: &mut Vec<usize>) {
    out.extend(t.data().iter().map(|&v| usize::from(v > 0.0)));
}

impl ForwardCache {
    /// Every piecewise choice made during the pass: ReLU input signs and the winning index of
    /// every max. Two passes with equal records lie on the same smooth piece of the network,
    /// so finite differences between them are meaningful.
    pub fn pieces(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for stream in [&self.rgb, &self.thermal] {
            for (b, c) in stream.blocks.iter().zip(&stream.cbams) {
                record_signs(&b.z1, &mut out);
                record_signs(&b.z2, &mut out);
                if let Some(arg) = &b.pool_arg {
                    out.extend_from_slice(arg);
                }
                c.record_pieces(&mut out);
            }
        }
        for f in &self.fuse {
            f.record_pieces(&mut out);
        }
        for d in &self.decode {
            record_signs(&d.fam_out, &mut out);
        }
        out
    }
}

pub fn adfnet_init(config: &NetConfig, seed: u64) -> Result<AdfNetToy> {
    AdfNetToy::init(config, seed)
}

pub fn adfnet_forward(net: &AdfNetToy, rgb: &Tensor, t: &Tensor) -> Result<Tensor> {
    net.forward(rgb, t)
}
