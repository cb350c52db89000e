//! Built-in verification suites: optimized kernels against the brute-force references,
//! analytic gradients against central differences, and the histogram metric against
//! per-threshold binarization.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{
    cbam_backward, cbam_forward, channel_attention_backward, channel_attention_forward, fam_backward,
    fam_forward_cached, fuse_stage_backward, fuse_stage_forward, ppm_backward, ppm_forward_cached, CbamParams,
    FamParams, PpmParams,
};
use crate::gradcheck::{grad_check_at, relative_error, scalar_tensor};
use crate::losses::{
    cross_entropy, cross_entropy_grad, edge_loss, edge_loss_grad, laplacian, laplacian_boundary_grad,
    laplacian_boundary_with, total_loss, total_loss_grad, LAPLACE_KERNEL, LOG_EPS,
};
use crate::metrics::{dataset_curve, eval_image, f_measure, BinaryMask, EvalAccumulator, GrayImage};
use crate::ops::{
    activation, activation_grad, adaptive_avgpool, adaptive_avgpool_grad, argmax_grad, avgpool, avgpool_grad,
    channel_max, channel_mean, channel_mean_grad, concat_channels, concat_channels_grad, conv2d, conv2d_grad,
    conv2d_out_dims, eltwise, eltwise_grad, global_maxpool, maxpool2, maxpool2_grad, tanh, upsample_bilinear,
    upsample_bilinear_grad, Activation, EltwiseOp,
};
use crate::reference;
use crate::tensor::{ConvParams, Dims, Rng, Tensor};

pub const ORACLE_TOLERANCE: f64 = 1e-12;
pub const GRAD_TOLERANCE: f64 = 1e-5;
pub const FD_STEP: f64 = 1e-5;
pub const SPOT_TOLERANCE: f64 = 1e-6;

/// Stencil substituted for the Laplacian when [`SelfcheckConfig::corrupt_laplace`] is set.
pub const CORRUPT_LAPLACE_KERNEL: [[f64; 3]; 3] = [[0.0, 1.0, 0.0], [1.0, -3.5, 1.0], [0.0, 1.0, 0.0]];

pub const ORACLE_SUITES: [&str; 6] = [
    "conv2d",
    "avgpool",
    "adaptive_avgpool",
    "maxpool2",
    "upsample_bilinear",
    "laplacian_boundary",
];

pub const GRADIENT_SUITES: [&str; 25] = [
    "grad_conv2d",
    "grad_avgpool",
    "grad_adaptive_avgpool",
    "grad_maxpool2",
    "grad_upsample_bilinear",
    "grad_sigmoid",
    "grad_tanh",
    "grad_relu",
    "grad_abs",
    "grad_eltwise_add",
    "grad_eltwise_mul",
    "grad_concat_channels",
    "grad_channel_mean",
    "grad_channel_max",
    "grad_global_maxpool",
    "grad_laplacian_boundary",
    "grad_cross_entropy",
    "grad_edge_loss",
    "grad_total_loss",
    "grad_channel_attention",
    "grad_spatial_attention",
    "grad_cbam",
    "grad_fuse_stage",
    "grad_ppm_forward",
    "grad_fam_forward",
];

pub const METRIC_SUITES: [&str; 4] = [
    "eval_image_threshold_passes",
    "dataset_curve_permutation",
    "f_measure_spot_values",
    "loss_spot_values",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelfcheckConfig {
    pub seed: u64,
    pub oracle_instances: usize,
    pub grad_instances: usize,
    pub metric_instances: usize,
    /// Test hook: the Laplacian boundary under test uses [`CORRUPT_LAPLACE_KERNEL`].
    pub corrupt_laplace: bool,
}

impl Default for SelfcheckConfig {
    fn default() -> Self {
        SelfcheckConfig {
            seed: 0,
            oracle_instances: 100,
            grad_instances: 50,
            metric_instances: 200,
            corrupt_laplace: false,
        }
    }
}

impl SelfcheckConfig {
    fn kernel(&self) -> &'static [[f64; 3]; 3] {
        if self.corrupt_laplace {
            &CORRUPT_LAPLACE_KERNEL
        } else {
            &LAPLACE_KERNEL
        }
    }

    fn rng(&self, suite: &str) -> Rng {
        let salt = suite.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3));
        Rng::new(self.seed ^ salt)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuiteKind {
    Oracle,
    Gradient,
    Metric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub kind: SuiteKind,
    pub instances: usize,
    /// Largest error seen; relative for oracles and gradients, absolute for spot values, a
    /// mismatch count for the exact metric suites.
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// `<suite>#<case>` for every failing case.
    pub failures: Vec<String>,
}

impl SuiteResult {
    fn new(name: &str, kind: SuiteKind, tolerance: f64) -> Self {
        SuiteResult {
            name: name.to_string(),
            kind,
            instances: 0,
            max_error: 0.0,
            tolerance,
            passed: true,
            failures: Vec::new(),
        }
    }

    /// Records one case. `exact` cases fail on any nonzero error.
    fn record(&mut self, case: impl std::fmt::Display, err: f64, exact: bool) {
        self.instances += 1;
        if err.is_nan() {
            self.max_error = f64::INFINITY;
        } else {
            self.max_error = self.max_error.max(err);
        }
        let bad = err.is_nan() || err > self.tolerance || (exact && err != 0.0);
        if bad {
            self.passed = false;
            self.failures.push(format!("{}#{case}", self.name));
        }
    }

    fn record_result(&mut self, case: usize, r: Result<(f64, bool)>) {
        match r {
            Ok((err, exact)) => self.record(case, err, exact),
            Err(e) => {
                self.instances += 1;
                self.passed = false;
                self.failures.push(format!("{}#{case}: {e}", self.name));
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelfcheckReport {
    pub passed: bool,
    pub config: SelfcheckConfig,
    pub suites: Vec<SuiteResult>,
}

impl SelfcheckReport {
    fn from_suites(config: &SelfcheckConfig, suites: Vec<SuiteResult>) -> Self {
        SelfcheckReport {
            passed: suites.iter().all(|s| s.passed),
            config: config.clone(),
            suites,
        }
    }

    pub fn suite(&self, name: &str) -> Option<&SuiteResult> {
        self.suites.iter().find(|s| s.name == name)
    }

    pub fn failing_cases(&self) -> Vec<&str> {
        self.suites
            .iter()
            .flat_map(|s| s.failures.iter().map(String::as_str))
            .collect()
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        text
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

/// Every suite, in the order of [`ORACLE_SUITES`], [`GRADIENT_SUITES`], [`METRIC_SUITES`].
pub fn run_selfcheck(cfg: &SelfcheckConfig) -> SelfcheckReport {
    let mut suites = oracle_suites(cfg);
    suites.extend(gradient_suites(cfg));
    suites.extend(metric_suites(cfg));
    SelfcheckReport::from_suites(cfg, suites)
}

fn size(rng: &mut Rng, lo: usize, hi: usize) -> usize {
    lo + rng.below(hi - lo + 1)
}

/// Uniform in `[-1, 1)`, or small integers in `-4..=4`.
fn random_tensor(dims: Dims, integer: bool, rng: &mut Rng) -> Tensor {
    if integer {
        Tensor::from_fn(dims, |_, _, _, _| rng.below(9) as f64 - 4.0)
    } else {
        Tensor::uniform(dims, -1.0, 1.0, rng)
    }
}

fn max_rel(got: &Tensor, want: &Tensor) -> f64 {
    if got.dims() != want.dims() {
        return f64::INFINITY;
    }
    got.data()
        .iter()
        .zip(want.data())
        .map(|(&a, &b)| relative_error(a, b))
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------------------------
// Kernel oracles

pub fn oracle_suites(cfg: &SelfcheckConfig) -> Vec<SuiteResult> {
    ORACLE_SUITES
        .iter()
        .map(|&name| {
            let mut rng = cfg.rng(name);
            let mut suite = SuiteResult::new(name, SuiteKind::Oracle, ORACLE_TOLERANCE);
            for i in 0..cfg.oracle_instances {
                let integer = i % 2 == 1;
                let r = oracle_case(name, cfg, integer, &mut rng);
                suite.record_result(i, r);
            }
            suite
        })
        .collect()
}

/// One random instance; returns the error and whether it must be exact.
fn oracle_case(name: &str, cfg: &SelfcheckConfig, integer: bool, rng: &mut Rng) -> Result<(f64, bool)> {
    let (n, c) = (size(rng, 1, 3), size(rng, 1, 3));
    match name {
        "conv2d" => {
            let (h, w) = (size(rng, 1, 8), size(rng, 1, 8));
            let k = size(rng, 1, 3);
            let stride = size(rng, 1, 2);
            let mut pad = rng.below(3);
            if h + 2 * pad < k || w + 2 * pad < k {
                pad = k;
            }
            let x = random_tensor([n, c, h, w], integer, rng);
            let oc = size(rng, 1, 8);
            let weight = random_tensor([oc, c, k, k], integer, rng);
            let bias = random_tensor([1, 1, 1, oc], integer, rng).into_data();
            let p = ConvParams::new(weight, bias, stride, pad)?;
            Ok((max_rel(&conv2d(&x, &p)?, &reference::conv2d(&x, &p)?), integer))
        }
        "avgpool" => {
            let rate = size(rng, 1, 4);
            let (h, w) = (rate * size(rng, 1, 8 / rate), rate * size(rng, 1, 8 / rate));
            let x = random_tensor([n, c, h, w], integer, rng);
            Ok((max_rel(&avgpool(&x, rate)?, &reference::avgpool(&x, rate)?), integer))
        }
        "adaptive_avgpool" => {
            let (h, w) = (size(rng, 1, 8), size(rng, 1, 8));
            let (oh, ow) = (size(rng, 1, h), size(rng, 1, w));
            let x = random_tensor([n, c, h, w], integer, rng);
            Ok((
                max_rel(&adaptive_avgpool(&x, oh, ow)?, &reference::adaptive_avgpool(&x, oh, ow)?),
                integer,
            ))
        }
        "maxpool2" => {
            let (h, w) = (2 * size(rng, 1, 4), 2 * size(rng, 1, 4));
            let x = random_tensor([n, c, h, w], integer, rng);
            Ok((max_rel(&maxpool2(&x)?.0, &reference::maxpool2(&x)?), integer))
        }
        "upsample_bilinear" => {
            // Integer instances use power-of-two factors, where every interpolation weight is dyadic.
            let (h, w, oh, ow) = if integer {
                let (h, w) = (size(rng, 1, 4), size(rng, 1, 4));
                let s = [1, 2, 4];
                (h, w, h * s[rng.below(3)], w * s[rng.below(3)])
            } else {
                let (h, w) = (size(rng, 1, 8), size(rng, 1, 8));
                (h, w, h + rng.below(9), w + rng.below(9))
            };
            let x = random_tensor([n, c, h, w], integer, rng);
            Ok((
                max_rel(&upsample_bilinear(&x, oh, ow)?, &reference::upsample_bilinear(&x, oh, ow)?),
                integer,
            ))
        }
        "laplacian_boundary" => {
            let (h, w) = (size(rng, 1, 8), size(rng, 1, 8));
            let x = random_tensor([n, 1, h, w], integer, rng);
            let got = laplacian_boundary_with(&x, cfg.kernel())?;
            Ok((max_rel(&got, &reference::laplacian_boundary(&x)?), false))
        }
        other => Err(Error::contract(format!("unknown oracle suite {other}"))),
    }
}

// ---------------------------------------------------------------------------------------------
// Gradients

/// Central-difference check of `Σ r ⊙ f(inputs)`-style scalars at every coordinate whose ±h
/// perturbation leaves the piece signature (argmax choices, activation signs) unchanged.
fn fd_check<V, G, P>(value: V, gradient: G, pieces: P, inputs: &[Tensor]) -> Result<f64>
where
    V: Fn(&[Tensor]) -> Result<Tensor>,
    G: Fn(&[Tensor]) -> Result<Vec<Tensor>>,
    P: Fn(&[Tensor]) -> Result<Vec<usize>>,
{
    let base = pieces(inputs)?;
    let mut work = inputs.to_vec();
    let mut coords = Vec::new();
    let mut total = 0usize;
    for t in 0..inputs.len() {
        for i in 0..inputs[t].len() {
            total += 1;
            let orig = work[t].data()[i];
            let mut smooth = true;
            for step in [FD_STEP, -FD_STEP] {
                work[t].data_mut()[i] = orig + step;
                smooth &= pieces(&work)? == base;
            }
            work[t].data_mut()[i] = orig;
            if smooth {
                coords.push((t, i));
            }
        }
    }
    if coords.len() * 10 < total * 9 {
        return Err(Error::contract(format!(
            "only {} of {total} coordinates are away from kinks",
            coords.len()
        )));
    }
    grad_check_at(value, gradient, inputs, FD_STEP, &coords)
}

fn smooth(_: &[Tensor]) -> Result<Vec<usize>> {
    Ok(Vec::new())
}

fn projected(y: &Tensor, r: &Tensor) -> Result<Tensor> {
    Ok(scalar_tensor(y.dot(r)?))
}

fn row(v: &[f64]) -> Tensor {
    Tensor::new([1, 1, 1, v.len()], v.to_vec()).expect("row length matches")
}

fn signs(t: &Tensor) -> Vec<usize> {
    t.data().iter().map(|&v| usize::from(v > 0.0)).collect()
}

/// Parameters with the weight and bias replaced by `w` and `b`.
fn conv_from(like: &ConvParams, w: &Tensor, b: &Tensor) -> ConvParams {
    ConvParams {
        weight: w.clone(),
        bias: b.data().to_vec(),
        stride: like.stride,
        padding: like.padding,
    }
}

fn conv_tensors(p: &ConvParams) -> [Tensor; 2] {
    [p.weight.clone(), row(&p.bias)]
}

fn with_random_bias(mut p: ConvParams, rng: &mut Rng) -> ConvParams {
    for b in &mut p.bias {
        *b = rng.uniform(-0.5, 0.5);
    }
    p
}

pub fn gradient_suites(cfg: &SelfcheckConfig) -> Vec<SuiteResult> {
    GRADIENT_SUITES
        .iter()
        .map(|&name| {
            let mut rng = cfg.rng(name);
            let mut suite = SuiteResult::new(name, SuiteKind::Gradient, GRAD_TOLERANCE);
            for i in 0..cfg.grad_instances {
                let r = grad_case(name, cfg, &mut rng).map(|e| (e, false));
                suite.record_result(i, r);
            }
            suite
        })
        .collect()
}

fn grad_case(name: &str, cfg: &SelfcheckConfig, rng: &mut Rng) -> Result<f64> {
    let (n, c) = (size(rng, 1, 2), size(rng, 1, 3));
    match name {
        "grad_conv2d" => {
            let (h, w) = (size(rng, 2, 6), size(rng, 2, 6));
            let k = size(rng, 1, 3);
            let stride = size(rng, 1, 2);
            let mut pad = rng.below(2);
            if h + 2 * pad < k || w + 2 * pad < k {
                pad = 1;
            }
            let x = random_tensor([n, c, h, w], false, rng);
            let oc = size(rng, 1, 5);
            let p = with_random_bias(ConvParams::new(random_tensor([oc, c, k, k], false, rng), vec![0.0; oc], stride, pad)?, rng);
            let r = random_tensor(conv2d_out_dims(x.dims(), &p)?, false, rng);
            let [pw, pb] = conv_tensors(&p);
            fd_check(
                |xs| projected(&conv2d(&xs[0], &conv_from(&p, &xs[1], &xs[2]))?, &r),
                |xs| {
                    let g = conv2d_grad(&xs[0], &conv_from(&p, &xs[1], &xs[2]), &r)?;
                    Ok(vec![g.dx, g.dweight, row(&g.dbias)])
                },
                smooth,
                &[x, pw, pb],
            )
        }
        "grad_avgpool" => {
            let rate = size(rng, 1, 3);
            let dims = [n, c, rate * size(rng, 1, 3), rate * size(rng, 1, 3)];
            let x = random_tensor(dims, false, rng);
            let r = random_tensor([n, c, dims[2] / rate, dims[3] / rate], false, rng);
            fd_check(
                |xs| projected(&avgpool(&xs[0], rate)?, &r),
                |_| Ok(vec![avgpool_grad(dims, rate, &r)?]),
                smooth,
                &[x],
            )
        }
        "grad_adaptive_avgpool" => {
            let dims = [n, c, size(rng, 1, 6), size(rng, 1, 6)];
            let (oh, ow) = (size(rng, 1, dims[2]), size(rng, 1, dims[3]));
            let x = random_tensor(dims, false, rng);
            let r = random_tensor([n, c, oh, ow], false, rng);
            fd_check(
                |xs| projected(&adaptive_avgpool(&xs[0], oh, ow)?, &r),
                |_| Ok(vec![adaptive_avgpool_grad(dims, oh, ow, &r)?]),
                smooth,
                &[x],
            )
        }
        "grad_maxpool2" => {
            let dims = [n, c, 2 * size(rng, 1, 3), 2 * size(rng, 1, 3)];
            let x = random_tensor(dims, false, rng);
            let r = random_tensor([n, c, dims[2] / 2, dims[3] / 2], false, rng);
            fd_check(
                |xs| projected(&maxpool2(&xs[0])?.0, &r),
                |xs| Ok(vec![maxpool2_grad(dims, &maxpool2(&xs[0])?.1, &r)?]),
                |xs| Ok(maxpool2(&xs[0])?.1),
                &[x],
            )
        }
        "grad_upsample_bilinear" => {
            let dims = [n, c, size(rng, 1, 5), size(rng, 1, 5)];
            let (oh, ow) = (dims[2] + rng.below(dims[2] + 2), dims[3] + rng.below(dims[3] + 2));
            let x = random_tensor(dims, false, rng);
            let r = random_tensor([n, c, oh, ow], false, rng);
            fd_check(
                |xs| projected(&upsample_bilinear(&xs[0], oh, ow)?, &r),
                |_| Ok(vec![upsample_bilinear_grad(dims, &r)?]),
                smooth,
                &[x],
            )
        }
        "grad_sigmoid" | "grad_tanh" | "grad_relu" | "grad_abs" => {
            let kind = match name {
                "grad_sigmoid" => Activation::Sigmoid,
                "grad_tanh" => Activation::Tanh,
                "grad_relu" => Activation::Relu,
                _ => Activation::Abs,
            };
            let dims = [n, c, size(rng, 1, 5), size(rng, 1, 5)];
            let x = Tensor::uniform(dims, -3.0, 3.0, rng);
            let r = random_tensor(dims, false, rng);
            fd_check(
                |xs| projected(&activation(&xs[0], kind), &r),
                |xs| Ok(vec![activation_grad(&xs[0], &activation(&xs[0], kind), kind, &r)?]),
                |xs| Ok(signs(&xs[0])),
                &[x],
            )
        }
        "grad_eltwise_add" | "grad_eltwise_mul" => {
            let op = if name == "grad_eltwise_add" { EltwiseOp::Add } else { EltwiseOp::Mul };
            let dims = [n, c, size(rng, 1, 5), size(rng, 1, 5)];
            let bdims = match rng.below(3) {
                0 => dims,
                1 => [n, c, 1, 1],
                _ => [n, 1, dims[2], dims[3]],
            };
            let a = random_tensor(dims, false, rng);
            let b = random_tensor(bdims, false, rng);
            let r = random_tensor(dims, false, rng);
            fd_check(
                |xs| projected(&eltwise(&xs[0], &xs[1], op)?, &r),
                |xs| {
                    let (da, db) = eltwise_grad(&xs[0], &xs[1], op, &r)?;
                    Ok(vec![da, db])
                },
                smooth,
                &[a, b],
            )
        }
        "grad_concat_channels" => {
            let (h, w) = (size(rng, 1, 5), size(rng, 1, 5));
            let chans: Vec<usize> = (0..size(rng, 2, 3)).map(|_| size(rng, 1, 3)).collect();
            let parts: Vec<Tensor> = chans.iter().map(|&ci| random_tensor([n, ci, h, w], false, rng)).collect();
            let r = random_tensor([n, chans.iter().sum(), h, w], false, rng);
            fd_check(
                |xs| projected(&concat_channels(xs)?, &r),
                |_| concat_channels_grad(&chans, &r),
                smooth,
                &parts,
            )
        }
        "grad_channel_mean" => {
            let dims = [n, c, size(rng, 1, 5), size(rng, 1, 5)];
            let x = random_tensor(dims, false, rng);
            let r = random_tensor([n, 1, dims[2], dims[3]], false, rng);
            fd_check(
                |xs| projected(&channel_mean(&xs[0]), &r),
                |_| Ok(vec![channel_mean_grad(dims, &r)?]),
                smooth,
                &[x],
            )
        }
        "grad_channel_max" => {
            let dims = [n, size(rng, 2, 4), size(rng, 1, 5), size(rng, 1, 5)];
            let x = random_tensor(dims, false, rng);
            let r = random_tensor([n, 1, dims[2], dims[3]], false, rng);
            fd_check(
                |xs| projected(&channel_max(&xs[0]).0, &r),
                |xs| Ok(vec![argmax_grad(dims, &channel_max(&xs[0]).1, &r)?]),
                |xs| Ok(channel_max(&xs[0]).1),
                &[x],
            )
        }
        "grad_global_maxpool" => {
            let dims = [n, c, size(rng, 1, 5), size(rng, 1, 5)];
            let x = random_tensor(dims, false, rng);
            let r = random_tensor([n, c, 1, 1], false, rng);
            fd_check(
                |xs| projected(&global_maxpool(&xs[0]).0, &r),
                |xs| Ok(vec![argmax_grad(dims, &global_maxpool(&xs[0]).1, &r)?]),
                |xs| Ok(global_maxpool(&xs[0]).1),
                &[x],
            )
        }
        "grad_laplacian_boundary" => {
            let dims = [n, 1, size(rng, 1, 6), size(rng, 1, 6)];
            let x = random_tensor(dims, false, rng);
            let r = random_tensor(dims, false, rng);
            let kernel = cfg.kernel();
            fd_check(
                |xs| projected(&laplacian_boundary_with(&xs[0], kernel)?, &r),
                |xs| Ok(vec![laplacian_boundary_grad(&xs[0], &r)?]),
                |xs| Ok(signs(&laplacian(&xs[0])?)),
                &[x],
            )
        }
        "grad_cross_entropy" | "grad_edge_loss" | "grad_total_loss" => {
            let (pred, gt) = loss_instance(n, rng);
            let value = |xs: &[Tensor]| -> Result<f64> {
                match name {
                    "grad_cross_entropy" => cross_entropy(&xs[0], &gt),
                    "grad_edge_loss" => edge_loss(&xs[0], &gt),
                    _ => Ok(total_loss(&xs[0], &gt)?.total),
                }
            };
            let grad = |xs: &[Tensor]| -> Result<Tensor> {
                match name {
                    "grad_cross_entropy" => Ok(cross_entropy_grad(&xs[0], &gt)?.1),
                    "grad_edge_loss" => Ok(edge_loss_grad(&xs[0], &gt)?.1),
                    _ => Ok(total_loss_grad(&xs[0], &gt)?.1),
                }
            };
            fd_check(
                |xs| Ok(scalar_tensor(value(xs)?)),
                |xs| Ok(vec![grad(xs)?]),
                boundary_pieces,
                &[pred],
            )
        }
        "grad_channel_attention" => cbam_case(n, rng, channel_attention_forward, channel_attention_backward, |c, out| {
            c.record_pieces(out)
        }),
        "grad_spatial_attention" => cbam_case(
            n,
            rng,
            crate::fusion::spatial_attention_forward,
            crate::fusion::spatial_attention_backward,
            |c, out| c.record_pieces(out),
        ),
        "grad_cbam" => cbam_case(n, rng, cbam_forward, cbam_backward, |c, out| c.record_pieces(out)),
        "grad_fuse_stage" => fuse_case(n, rng),
        "grad_ppm_forward" => {
            let ch = 4 * size(rng, 1, 2);
            let dims = [n, ch, size(rng, 1, 6), size(rng, 1, 6)];
            let mut p = PpmParams::init(ch, size(rng, 1, 3), rng)?;
            for conv in p.branch_convs.iter_mut().chain([&mut p.fuse_conv]) {
                *conv = with_random_bias(conv.clone(), rng);
            }
            let x = random_tensor(dims, false, rng);
            let r = random_tensor([n, p.fuse_conv.out_c(), dims[2], dims[3]], false, rng);
            let rebuild = |xs: &[Tensor]| PpmParams {
                branch_convs: std::array::from_fn(|i| conv_from(&p.branch_convs[i], &xs[1 + 2 * i], &xs[2 + 2 * i])),
                fuse_conv: conv_from(&p.fuse_conv, &xs[9], &xs[10]),
            };
            let mut inputs = vec![x];
            for conv in p.branch_convs.iter().chain([&p.fuse_conv]) {
                inputs.extend(conv_tensors(conv));
            }
            fd_check(
                |xs| projected(&ppm_forward_cached(&xs[0], &rebuild(xs))?.0, &r),
                |xs| {
                    let q = rebuild(xs);
                    let (_, cache) = ppm_forward_cached(&xs[0], &q)?;
                    let mut g = q.zeros_like();
                    let dx = ppm_backward(&xs[0], &q, &cache, &r, &mut g)?;
                    let mut out = vec![dx];
                    for conv in g.branch_convs.iter().chain([&g.fuse_conv]) {
                        out.extend(conv_tensors(conv));
                    }
                    Ok(out)
                },
                smooth,
                &inputs,
            )
        }
        "grad_fam_forward" => {
            let side = [1, 2, 4, 8];
            let dims = [n, c, side[rng.below(4)], side[rng.below(4)]];
            let mut p = FamParams::init(c, size(rng, 1, 3), rng);
            p.fuse_conv = with_random_bias(p.fuse_conv, rng);
            let x = random_tensor(dims, false, rng);
            let r = random_tensor([n, p.fuse_conv.out_c(), dims[2], dims[3]], false, rng);
            let rebuild = |xs: &[Tensor]| FamParams {
                fuse_conv: conv_from(&p.fuse_conv, &xs[1], &xs[2]),
                branch_rates: p.branch_rates,
            };
            let [pw, pb] = conv_tensors(&p.fuse_conv);
            fd_check(
                |xs| projected(&fam_forward_cached(&xs[0], &rebuild(xs))?.0, &r),
                |xs| {
                    let q = rebuild(xs);
                    let (_, cache) = fam_forward_cached(&xs[0], &q)?;
                    let mut g = q.zeros_like();
                    let dx = fam_backward(&xs[0], &q, &cache, &r, &mut g)?;
                    let [gw, gb] = conv_tensors(&g.fuse_conv);
                    Ok(vec![dx, gw, gb])
                },
                smooth,
                &[x, pw, pb],
            )
        }
        other => Err(Error::contract(format!("unknown gradient suite {other}"))),
    }
}

/// A prediction in `(0, 1)` and a random binary mask. The prediction alternates high and low
/// values, so every Laplacian response stays far from zero, where `|tanh|` has a kink and the
/// log of the boundary map is singular.
fn loss_instance(n: usize, rng: &mut Rng) -> (Tensor, Tensor) {
    let dims = [n, 1, size(rng, 2, 6), size(rng, 2, 6)];
    let pred = Tensor::from_fn(dims, |_, _, y, x| {
        let base = if (x + y) % 2 == 0 { 0.8 } else { 0.2 };
        base + rng.uniform(-0.05, 0.05)
    });
    let density = rng.uniform(0.2, 0.8);
    let gt = Tensor::from_fn(dims, |_, _, _, _| if rng.next_f64() < density { 1.0 } else { 0.0 });
    (pred, gt)
}

/// Sign of each Laplacian response and whether its boundary value sits inside the log clamp.
fn boundary_pieces(xs: &[Tensor]) -> Result<Vec<usize>> {
    Ok(laplacian(&xs[0])?
        .data()
        .iter()
        .map(|&u| {
            let b = tanh(u).abs();
            usize::from(u > 0.0) + 2 * usize::from(b > LOG_EPS) + 4 * usize::from(b < 1.0 - LOG_EPS)
        })
        .collect())
}

fn cbam_from(like: &CbamParams, xs: &[Tensor]) -> CbamParams {
    CbamParams {
        ca_reduce: conv_from(&like.ca_reduce, &xs[1], &xs[2]),
        ca_expand: conv_from(&like.ca_expand, &xs[3], &xs[4]),
        sa_conv: conv_from(&like.sa_conv, &xs[5], &xs[6]),
        reduction: like.reduction,
        kernel: like.kernel,
    }
}

type Forward<C> = fn(&Tensor, &CbamParams) -> Result<(Tensor, C)>;
type Backward<C> = fn(&Tensor, &CbamParams, &C, &Tensor, &mut CbamParams) -> Result<Tensor>;

fn cbam_case<C>(n: usize, rng: &mut Rng, forward: Forward<C>, backward: Backward<C>, pieces: fn(&C, &mut Vec<usize>)) -> Result<f64> {
    let c = 2 * size(rng, 1, 2);
    let kernel = [1, 3][rng.below(2)];
    let mut p = CbamParams::init(c, 2, kernel, rng)?;
    for conv in p.convs_mut() {
        *conv = with_random_bias(conv.clone(), rng);
    }
    let dims = [n, c, size(rng, 2, 5), size(rng, 2, 5)];
    let x = Tensor::uniform(dims, -2.0, 2.0, rng);
    let r = random_tensor(dims, false, rng);
    let mut inputs = vec![x];
    for (_, conv) in p.convs() {
        inputs.extend(conv_tensors(conv));
    }
    fd_check(
        |xs| projected(&forward(&xs[0], &cbam_from(&p, xs))?.0, &r),
        |xs| {
            let q = cbam_from(&p, xs);
            let (_, cache) = forward(&xs[0], &q)?;
            let mut g = q.zeros_like();
            let dx = backward(&xs[0], &q, &cache, &r, &mut g)?;
            let mut out = vec![dx];
            for (_, conv) in g.convs() {
                out.extend(conv_tensors(conv));
            }
            Ok(out)
        },
        |xs| {
            let (_, cache) = forward(&xs[0], &cbam_from(&p, xs))?;
            let mut out = Vec::new();
            pieces(&cache, &mut out);
            Ok(out)
        },
        &inputs,
    )
}

fn fuse_case(n: usize, rng: &mut Rng) -> Result<f64> {
    let level = size(rng, 1, 5);
    let c = size(rng, 1, 3);
    let dims = [n, c, size(rng, 1, 4), size(rng, 1, 4)];
    let m_rgb = random_tensor(dims, false, rng);
    let m_t = random_tensor(dims, false, rng);
    let r = random_tensor(dims, false, rng);
    if level == 1 {
        return fd_check(
            |xs| projected(&fuse_stage_forward(1, None, &xs[0], &xs[1], None)?.0, &r),
            |xs| {
                let (_, cache) = fuse_stage_forward(1, None, &xs[0], &xs[1], None)?;
                let g = fuse_stage_backward(None, None, &cache, &r)?;
                Ok(vec![g.dm_rgb, g.dm_t])
            },
            smooth,
            &[m_rgb, m_t],
        );
    }
    let cp = size(rng, 1, 3);
    let prev = random_tensor([n, cp, 2 * dims[2], 2 * dims[3]], false, rng);
    let merge = with_random_bias(ConvParams::xavier_same(c, cp, 3, rng), rng);
    let [mw, mb] = conv_tensors(&merge);
    let run = |xs: &[Tensor]| {
        let conv = conv_from(&merge, &xs[3], &xs[4]);
        let out = fuse_stage_forward(level, Some(&xs[2]), &xs[0], &xs[1], Some(&conv));
        out.map(|(y, cache)| (y, cache, conv))
    };
    fd_check(
        |xs| projected(&run(xs)?.0, &r),
        |xs| {
            let (_, cache, conv) = run(xs)?;
            let g = fuse_stage_backward(Some(&xs[2]), Some(&conv), &cache, &r)?;
            let df = g.df_prev.ok_or_else(|| Error::contract("fuse_stage_backward: missing previous-map gradient"))?;
            let dm = g.dmerge.ok_or_else(|| Error::contract("fuse_stage_backward: missing merge gradient"))?;
            let [dw, db] = conv_tensors(&dm);
            Ok(vec![g.dm_rgb, g.dm_t, df, dw, db])
        },
        |xs| {
            let (_, cache, _) = run(xs)?;
            let mut out = Vec::new();
            cache.record_pieces(&mut out);
            Ok(out)
        },
        &[m_rgb, m_t, prev, mw, mb],
    )
}

// ---------------------------------------------------------------------------------------------
// Metric and spot checks

pub fn metric_suites(cfg: &SelfcheckConfig) -> Vec<SuiteResult> {
    METRIC_SUITES
        .iter()
        .map(|&name| {
            let mut rng = cfg.rng(name);
            match name {
                "eval_image_threshold_passes" => threshold_suite(name, cfg.metric_instances, &mut rng),
                "dataset_curve_permutation" => permutation_suite(name, &mut rng),
                "f_measure_spot_values" => f_spot_suite(name),
                _ => loss_spot_suite(name, cfg),
            }
        })
        .collect()
}

pub fn random_map(width: usize, height: usize, rng: &mut Rng) -> GrayImage {
    let pixels = (0..width * height).map(|_| rng.below(256) as u8).collect();
    GrayImage::new(width, height, pixels).expect("pixel count matches")
}

/// Random mask; roughly one in ten is all background and one in ten all foreground.
pub fn random_mask(width: usize, height: usize, rng: &mut Rng) -> BinaryMask {
    let density = match rng.below(10) {
        0 => 0.0,
        1 => 1.0,
        _ => rng.next_f64(),
    };
    let bits = (0..width * height).map(|_| rng.next_f64() < density).collect();
    BinaryMask { width, height, bits }
}

fn count_mismatches(a: &EvalAccumulator, b: &EvalAccumulator) -> f64 {
    let arrays = a.tp.iter().zip(&b.tp).chain(a.fp.iter().zip(&b.fp)).chain(a.fn_.iter().zip(&b.fn_));
    let mut diff = arrays.filter(|(x, y)| x != y).count();
    diff += usize::from(a.abs_err_sum != b.abs_err_sum);
    diff += usize::from(a.pixel_count != b.pixel_count);
    diff += usize::from(a.image_count != b.image_count);
    diff as f64
}

fn threshold_suite(name: &str, instances: usize, rng: &mut Rng) -> SuiteResult {
    let mut suite = SuiteResult::new(name, SuiteKind::Metric, 0.0);
    for i in 0..instances {
        let sal = random_map(32, 32, rng);
        let gt = random_mask(32, 32, rng);
        let r = eval_image(&sal, &gt)
            .and_then(|fast| Ok((count_mismatches(&fast, &reference::eval_image(&sal, &gt)?), true)));
        suite.record_result(i, r);
    }
    suite
}

fn permutation_suite(name: &str, rng: &mut Rng) -> SuiteResult {
    let mut suite = SuiteResult::new(name, SuiteKind::Metric, 0.0);
    let accs: Result<Vec<EvalAccumulator>> = (0..24)
        .map(|_| {
            let (w, h) = (size(rng, 4, 40), size(rng, 4, 40));
            eval_image(&random_map(w, h, rng), &random_mask(w, h, rng))
        })
        .collect();
    let mut accs = match accs {
        Ok(a) => a,
        Err(e) => {
            suite.record_result(0, Err(e));
            return suite;
        }
    };
    let csv_of = |accs: &[EvalAccumulator]| -> Result<(String, String)> {
        let r = dataset_curve(accs)?;
        let summary = serde_json::to_string(&r.summary()).expect("summary serializes");
        Ok((r.curve.to_csv_string(), summary))
    };
    let baseline = csv_of(&accs);
    for i in 0..20 {
        for k in (1..accs.len()).rev() {
            accs.swap(k, rng.below(k + 1));
        }
        let r = match (&baseline, csv_of(&accs)) {
            (Ok(base), Ok(now)) => Ok((f64::from(u8::from(*base != now)), true)),
            (Err(e), _) => Err(Error::contract(e.to_string())),
            (_, Err(e)) => Err(e),
        };
        suite.record_result(i, r);
    }
    suite
}

fn f_spot_suite(name: &str) -> SuiteResult {
    let mut suite = SuiteResult::new(name, SuiteKind::Metric, 1e-4);
    let cases = [("p1_r1", 1.0, 1.0, 1.0), ("r0", 0.7, 0.0, 0.0), ("p0.8_r0.5", 0.8, 0.5, 0.7027)];
    for (case, p, r, want) in cases {
        suite.record(case, (f_measure(p, r) - want).abs(), false);
    }
    suite
}

fn loss_spot_suite(name: &str, cfg: &SelfcheckConfig) -> SuiteResult {
    let mut suite = SuiteResult::new(name, SuiteKind::Metric, SPOT_TOLERANCE);
    let kernel = cfg.kernel();
    let constant = laplacian_boundary_with(&Tensor::full([1, 1, 5, 5], 0.37), kernel).map(|b| (b.max_abs(), false));
    suite.record_result(0, constant);
    let impulse = Tensor::from_fn([1, 1, 5, 5], |_, _, y, x| f64::from(u8::from(y == 2 && x == 2)));
    let centre = laplacian_boundary_with(&impulse, kernel).map(|b| ((b.get(0, 0, 2, 2) - 0.9993293).abs(), false));
    suite.record_result(1, centre);
    let ce = cross_entropy(&Tensor::full([1, 1, 4, 4], 0.5), &Tensor::full([1, 1, 4, 4], 1.0))
        .map(|v| ((v - std::f64::consts::LN_2).abs(), false));
    suite.record_result(2, ce);
    suite
}
