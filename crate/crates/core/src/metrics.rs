//! Saliency evaluation: 256-threshold precision/recall, F-measure and MAE.
//!
//! A map is binarized as `sal ≥ t` for every integer `t` in `0..=255`. Counts for all
//! thresholds come from two histograms (over ground-truth positive and negative pixels) and
//! their suffix sums. All counts, including the MAE numerator, are integers, so merging
//! accumulators is exact and order-independent.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const THRESHOLDS: usize = 256;
pub const BETA_SQ: f64 = 0.3;
pub const F_EPS: f64 = 1e-8;
pub const GT_THRESHOLD: u8 = 128;

/// An 8-bit single-channel image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::shape(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(GrayImage { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        GrayImage {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Values scaled to `[0, 1]` as a `(1, 1, h, w)` tensor.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
        Tensor::new([1, 1, self.height, self.width], data).expect("pixel count matches dims")
    }
}

/// Ground-truth mask with values in {0, 1}.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl BinaryMask {
    pub fn positives(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn to_tensor(&self) -> Tensor {
        let data = self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Tensor::new([1, 1, self.height, self.width], data).expect("pixel count matches dims")
    }

    /// Mask from a tensor already holding exact 0/1 values.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let [n, c, h, w] = t.dims();
        if n != 1 || c != 1 {
            return Err(Error::shape(format!("mask tensor must be (1, 1, h, w), got {:?}", t.dims())));
        }
        let bits = t
            .data()
            .iter()
            .map(|&v| {
                if v == 1.0 {
                    Ok(true)
                } else if v == 0.0 {
                    Ok(false)
                } else {
                    Err(Error::contract(format!("mask value {v} is not binary")))
                }
            })
            .collect::<Result<_>>()?;
        Ok(BinaryMask { width: w, height: h, bits })
    }
}

pub fn binarize_gt(mask: &GrayImage) -> BinaryMask {
    BinaryMask {
        width: mask.width,
        height: mask.height,
        bits: mask.pixels.iter().map(|&p| p >= GT_THRESHOLD).collect(),
    }
}

/// `round(255·s)` per pixel for a `(1, 1, h, w)` tensor in `[0, 1]`.
pub fn quantize(s: &Tensor) -> Result<GrayImage> {
    let [n, c, h, w] = s.dims();
    if n != 1 || c != 1 {
        return Err(Error::shape(format!("saliency tensor must be (1, 1, h, w), got {:?}", s.dims())));
    }
    let pixels = s
        .data()
        .iter()
        .map(|&v| (255.0 * v.clamp(0.0, 1.0)).round() as u8)
        .collect();
    GrayImage::new(w, h, pixels)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalAccumulator {
    pub tp: [u64; THRESHOLDS],
    pub fp: [u64; THRESHOLDS],
    pub fn_: [u64; THRESHOLDS],
    /// `Σ |sal − 255·gt|` over all pixels; the MAE is this over `255 · pixel_count`.
    pub abs_err_sum: u64,
    pub pixel_count: u64,
    pub image_count: u64,
}

impl Default for EvalAccumulator {
    fn default() -> Self {
        EvalAccumulator {
            tp: [0; THRESHOLDS],
            fp: [0; THRESHOLDS],
            fn_: [0; THRESHOLDS],
            abs_err_sum: 0,
            pixel_count: 0,
            image_count: 0,
        }
    }
}

impl EvalAccumulator {
    pub fn merge(&mut self, other: &EvalAccumulator) {
        for t in 0..THRESHOLDS {
            self.tp[t] += other.tp[t];
            self.fp[t] += other.fp[t];
            self.fn_[t] += other.fn_[t];
        }
        self.abs_err_sum += other.abs_err_sum;
        self.pixel_count += other.pixel_count;
        self.image_count += other.image_count;
    }

    /// `Σ |sal/255 − gt|`.
    pub fn mae_sum(&self) -> f64 {
        self.abs_err_sum as f64 / 255.0
    }
}

pub fn eval_image(sal: &GrayImage, gt: &BinaryMask) -> Result<EvalAccumulator> {
    if sal.dims() != (gt.width, gt.height) {
        return Err(Error::shape(format!(
            "saliency map is {}x{}, ground truth is {}x{}",
            sal.width, sal.height, gt.width, gt.height
        )));
    }
    let mut pos = [0u64; THRESHOLDS];
    let mut neg = [0u64; THRESHOLDS];
    let mut abs_err_sum = 0u64;
    for (&s, &g) in sal.pixels.iter().zip(&gt.bits) {
        if g {
            pos[s as usize] += 1;
            abs_err_sum += u64::from(255 - s);
        } else {
            neg[s as usize] += 1;
            abs_err_sum += u64::from(s);
        }
    }
    let total_pos: u64 = pos.iter().sum();
    let mut acc = EvalAccumulator {
        abs_err_sum,
        pixel_count: sal.pixels.len() as u64,
        image_count: 1,
        ..EvalAccumulator::default()
    };
    let (mut tp, mut fp) = (0u64, 0u64);
    for t in (0..THRESHOLDS).rev() {
        tp += pos[t];
        fp += neg[t];
        acc.tp[t] = tp;
        acc.fp[t] = fp;
        acc.fn_[t] = total_pos - tp;
    }
    Ok(acc)
}

pub fn f_measure(precision: f64, recall: f64) -> f64 {
    (1.0 + BETA_SQ) * precision * recall / (BETA_SQ * precision + recall + F_EPS)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: u32,
    pub precision: f64,
    pub recall: f64,
    pub f_beta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrCurve {
    pub rows: Vec<PrPoint>,
}

impl PrCurve {
    pub fn from_accumulator(acc: &EvalAccumulator) -> Self {
        let rows = (0..THRESHOLDS)
            .map(|t| {
                let tp = acc.tp[t] as f64;
                let precision = tp / (tp + acc.fp[t] as f64 + F_EPS);
                let recall = tp / (tp + acc.fn_[t] as f64 + F_EPS);
                PrPoint {
                    threshold: t as u32,
                    precision,
                    recall,
                    f_beta: f_measure(precision, recall),
                }
            })
            .collect();
        PrCurve { rows }
    }

    pub fn max_f(&self) -> f64 {
        self.rows.iter().map(|r| r.f_beta).fold(0.0, f64::max)
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.rows {
            wr.serialize(r).map_err(csv_error)?;
        }
        wr.flush().map_err(|e| Error::io("<csv>", e))
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is UTF-8")
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Format {
        path: "<csv>".into(),
        message: e.to_string(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub max_f: f64,
    pub mean_mae: f64,
    pub image_count: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetResult {
    pub curve: PrCurve,
    pub max_f: f64,
    pub mean_mae: f64,
    pub image_count: u64,
}

impl DatasetResult {
    pub fn summary(&self) -> Summary {
        Summary {
            max_f: self.max_f,
            mean_mae: self.mean_mae,
            image_count: self.image_count,
        }
    }
}

pub fn dataset_curve(accs: &[EvalAccumulator]) -> Result<DatasetResult> {
    if accs.is_empty() {
        return Err(Error::contract("dataset_curve needs at least one image"));
    }
    let mut total = EvalAccumulator::default();
    for a in accs {
        total.merge(a);
    }
    let curve = PrCurve::from_accumulator(&total);
    let mean_mae = if total.pixel_count == 0 {
        0.0
    } else {
        total.abs_err_sum as f64 / (255.0 * total.pixel_count as f64)
    };
    Ok(DatasetResult {
        max_f: curve.max_f(),
        curve,
        mean_mae,
        image_count: total.image_count,
    })
}

pub fn write_summary_json(summary: &Summary, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(summary).expect("summary serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
