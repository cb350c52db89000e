//! Convolutional block attention: a per-channel gate from pooled descriptors followed by a
//! per-pixel gate from channel statistics.

use crate::error::{Error, Result};
use crate::ops::{
    activation, activation_grad, adaptive_avgpool, adaptive_avgpool_grad, argmax_grad, channel_max,
    channel_mean, channel_mean_grad, concat_channels, concat_channels_grad, conv2d, conv2d_grad,
    eltwise, eltwise_grad, global_maxpool, Activation, ArgMax, EltwiseOp,
};
use crate::tensor::{ConvParams, Rng, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct CbamParams {
    /// 1×1, `c → c / r`.
    pub ca_reduce: ConvParams,
    /// 1×1, `c / r → c`.
    pub ca_expand: ConvParams,
    /// `k × k`, 2 → 1, same padding.
    pub sa_conv: ConvParams,
    pub reduction: usize,
    pub kernel: usize,
}

fn check_config(channels: usize, reduction: usize, kernel: usize) -> Result<()> {
    if channels == 0 || reduction == 0 || !channels.is_multiple_of(reduction) {
        return Err(Error::Config(format!(
            "CBAM: {channels} channels not divisible by reduction {reduction}"
        )));
    }
    if kernel.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "CBAM: spatial kernel {kernel} must be odd"
        )));
    }
    Ok(())
}

impl CbamParams {
    /// Xavier-initialised parameters, drawn in the order reduce, expand, spatial.
    pub fn init(channels: usize, reduction: usize, kernel: usize, rng: &mut Rng) -> Result<Self> {
        check_config(channels, reduction, kernel)?;
        let hidden = channels / reduction;
        Ok(CbamParams {
            ca_reduce: ConvParams::xavier_same(hidden, channels, 1, rng),
            ca_expand: ConvParams::xavier_same(channels, hidden, 1, rng),
            sa_conv: ConvParams::xavier_same(1, 2, kernel, rng),
            reduction,
            kernel,
        })
    }

    pub fn zeros(channels: usize, reduction: usize, kernel: usize) -> Result<Self> {
        check_config(channels, reduction, kernel)?;
        let hidden = channels / reduction;
        Ok(CbamParams {
            ca_reduce: ConvParams::zeros_same(hidden, channels, 1),
            ca_expand: ConvParams::zeros_same(channels, hidden, 1),
            sa_conv: ConvParams::zeros_same(1, 2, kernel),
            reduction,
            kernel,
        })
    }

    pub fn channels(&self) -> usize {
        self.ca_reduce.in_c()
    }

    pub fn zeros_like(&self) -> Self {
        CbamParams {
            ca_reduce: self.ca_reduce.zeros_like(),
            ca_expand: self.ca_expand.zeros_like(),
            sa_conv: self.sa_conv.zeros_like(),
            reduction: self.reduction,
            kernel: self.kernel,
        }
    }

    pub fn convs(&self) -> [(&'static str, &ConvParams); 3] {
        [
            ("ca_reduce", &self.ca_reduce),
            ("ca_expand", &self.ca_expand),
            ("sa_conv", &self.sa_conv),
        ]
    }

    pub fn convs_mut(&mut self) -> [&mut ConvParams; 3] {
        [&mut self.ca_reduce, &mut self.ca_expand, &mut self.sa_conv]
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.c() != self.channels() {
            return Err(Error::shape(format!(
                "CBAM: input has {} channels, parameters expect {}",
                x.c(),
                self.channels()
            )));
        }
        Ok(())
    }
}

/// The shared two-layer 1×1 path applied to a pooled descriptor: `expand(relu(reduce(v)))`.
#[derive(Clone, Debug)]
struct MlpCache {
    input: Tensor,
    hidden_pre: Tensor,
    hidden: Tensor,
}

fn mlp_forward(v: &Tensor, p: &CbamParams) -> Result<(Tensor, MlpCache)> {
    let hidden_pre = conv2d(v, &p.ca_reduce)?;
    let hidden = activation(&hidden_pre, Activation::Relu);
    let out = conv2d(&hidden, &p.ca_expand)?;
    Ok((
        out,
        MlpCache {
            input: v.clone(),
            hidden_pre,
            hidden,
        },
    ))
}

fn mlp_backward(p: &CbamParams, cache: &MlpCache, dout: &Tensor, grads: &mut CbamParams) -> Result<Tensor> {
    let ge = conv2d_grad(&cache.hidden, &p.ca_expand, dout)?;
    grads.ca_expand.axpy(1.0, &ge.param_grads(&p.ca_expand))?;
    let dh = activation_grad(&cache.hidden_pre, &cache.hidden, Activation::Relu, &ge.dx)?;
    let gr = conv2d_grad(&cache.input, &p.ca_reduce, &dh)?;
    grads.ca_reduce.axpy(1.0, &gr.param_grads(&p.ca_reduce))?;
    Ok(gr.dx)
}

#[derive(Clone, Debug)]
pub struct ChannelAttentionCache {
    avg: MlpCache,
    max: MlpCache,
    max_arg: ArgMax,
    /// Gate `σ(mlp(avg) + mlp(max))`, `(n, c, 1, 1)`.
    pub gate: Tensor,
}

impl MlpCache {
    fn record_pieces(&self, out: &mut Vec<usize>) {
        out.extend(self.hidden_pre.data().iter().map(|&v| usize::from(v > 0.0)));
    }
}

impl ChannelAttentionCache {
    pub(crate) fn record_pieces(&self, out: &mut Vec<usize>) {
        self.avg.record_pieces(out);
        self.max.record_pieces(out);
        out.extend_from_slice(&self.max_arg);
    }
}

pub fn channel_attention(x: &Tensor, p: &CbamParams) -> Result<Tensor> {
    Ok(channel_attention_forward(x, p)?.0)
}

pub fn channel_attention_forward(x: &Tensor, p: &CbamParams) -> Result<(Tensor, ChannelAttentionCache)> {
    p.check_input(x)?;
    let avg = adaptive_avgpool(x, 1, 1)?;
    let (max, max_arg) = global_maxpool(x);
    let (a, avg_cache) = mlp_forward(&avg, p)?;
    let (m, max_cache) = mlp_forward(&max, p)?;
    let gate = activation(&eltwise(&a, &m, EltwiseOp::Add)?, Activation::Sigmoid);
    let out = eltwise(x, &gate, EltwiseOp::Mul)?;
    Ok((
        out,
        ChannelAttentionCache {
            avg: avg_cache,
            max: max_cache,
            max_arg,
            gate,
        },
    ))
}

/// Returns `dx` and accumulates parameter gradients into `grads`.
pub fn channel_attention_backward(
    x: &Tensor,
    p: &CbamParams,
    cache: &ChannelAttentionCache,
    dy: &Tensor,
    grads: &mut CbamParams,
) -> Result<Tensor> {
    let (mut dx, dgate) = eltwise_grad(x, &cache.gate, EltwiseOp::Mul, dy)?;
    let dlogit = dgate
        .data()
        .iter()
        .zip(cache.gate.data())
        .map(|(&g, &s)| g * s * (1.0 - s))
        .collect();
    let dlogit = Tensor::new(cache.gate.dims(), dlogit)?;
    let davg = mlp_backward(p, &cache.avg, &dlogit, grads)?;
    let dmax = mlp_backward(p, &cache.max, &dlogit, grads)?;
    dx.add_assign(&adaptive_avgpool_grad(x.dims(), 1, 1, &davg)?)?;
    dx.add_assign(&argmax_grad(x.dims(), &cache.max_arg, &dmax)?)?;
    Ok(dx)
}

#[derive(Clone, Debug)]
pub struct SpatialAttentionCache {
    descriptor: Tensor,
    max_arg: ArgMax,
    /// Gate `σ(conv([mean_c, max_c]))`, `(n, 1, h, w)`.
    pub gate: Tensor,
}

impl SpatialAttentionCache {
    pub(crate) fn record_pieces(&self, out: &mut Vec<usize>) {
        out.extend_from_slice(&self.max_arg);
    }
}

pub fn spatial_attention(x: &Tensor, p: &CbamParams) -> Result<Tensor> {
    Ok(spatial_attention_forward(x, p)?.0)
}

pub fn spatial_attention_forward(x: &Tensor, p: &CbamParams) -> Result<(Tensor, SpatialAttentionCache)> {
    p.check_input(x)?;
    let mean = channel_mean(x);
    let (max, max_arg) = channel_max(x);
    let descriptor = concat_channels(&[mean, max])?;
    let gate = activation(&conv2d(&descriptor, &p.sa_conv)?, Activation::Sigmoid);
    let out = eltwise(x, &gate, EltwiseOp::Mul)?;
    Ok((
        out,
        SpatialAttentionCache {
            descriptor,
            max_arg,
            gate,
        },
    ))
}

pub fn spatial_attention_backward(
    x: &Tensor,
    p: &CbamParams,
    cache: &SpatialAttentionCache,
    dy: &Tensor,
    grads: &mut CbamParams,
) -> Result<Tensor> {
    let (mut dx, dgate) = eltwise_grad(x, &cache.gate, EltwiseOp::Mul, dy)?;
    let dlogit = dgate
        .data()
        .iter()
        .zip(cache.gate.data())
        .map(|(&g, &s)| g * s * (1.0 - s))
        .collect();
    let dlogit = Tensor::new(cache.gate.dims(), dlogit)?;
    let gs = conv2d_grad(&cache.descriptor, &p.sa_conv, &dlogit)?;
    grads.sa_conv.axpy(1.0, &gs.param_grads(&p.sa_conv))?;
    let parts = concat_channels_grad(&[1, 1], &gs.dx)?;
    dx.add_assign(&channel_mean_grad(x.dims(), &parts[0])?)?;
    dx.add_assign(&argmax_grad(x.dims(), &cache.max_arg, &parts[1])?)?;
    Ok(dx)
}

#[derive(Clone, Debug)]
pub struct CbamCache {
    pub channel: ChannelAttentionCache,
    /// Output of the channel stage, input of the spatial stage.
    pub refined: Tensor,
    pub spatial: SpatialAttentionCache,
}

impl CbamCache {
    pub(crate) fn record_pieces(&self, out: &mut Vec<usize>) {
        self.channel.record_pieces(out);
        self.spatial.record_pieces(out);
    }
}

/// Channel attention followed by spatial attention.
pub fn cbam(x: &Tensor, p: &CbamParams) -> Result<Tensor> {
    Ok(cbam_forward(x, p)?.0)
}

pub fn cbam_forward(x: &Tensor, p: &CbamParams) -> Result<(Tensor, CbamCache)> {
    let (refined, channel) = channel_attention_forward(x, p)?;
    let (out, spatial) = spatial_attention_forward(&refined, p)?;
    Ok((
        out,
        CbamCache {
            channel,
            refined,
            spatial,
        },
    ))
}

pub fn cbam_backward(
    x: &Tensor,
    p: &CbamParams,
    cache: &CbamCache,
    dy: &Tensor,
    grads: &mut CbamParams,
) -> Result<Tensor> {
    let drefined = spatial_attention_backward(&cache.refined, p, &cache.spatial, dy, grads)?;
    channel_attention_backward(x, p, &cache.channel, &drefined, grads)
}
