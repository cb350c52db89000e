//! The hot-square toy task and its trainer.
//!
//! Each sample is a square object on a textured background. In the RGB image the object's
//! colour differs only slightly from the background and both are noisy, so colour alone is a
//! weak cue; in the thermal image the object is hot against a cold background.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{apply_gradients, clipped_step, loss_and_grads, AdfNetToy, NetConfig};
use crate::metrics::{dataset_curve, eval_image, quantize, BinaryMask, DatasetResult};
use crate::tensor::{Rng, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub train_count: usize,
    pub test_count: usize,
    pub size: usize,
    /// Square side as a fraction of the image side, drawn uniformly from this range.
    pub min_side: f64,
    pub max_side: f64,
    /// Largest per-channel colour offset between object and background in the RGB image.
    pub rgb_contrast: f64,
    /// Half-width of the uniform pixel noise.
    pub noise: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            train_count: 200,
            test_count: 50,
            size: 64,
            min_side: 0.2,
            max_side: 0.45,
            rgb_contrast: 0.08,
            noise: 0.1,
        }
    }
}

/// One sample as `(1, c, size, size)` tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub rgb: Tensor,
    pub thermal: Tensor,
    pub gt: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

fn sample(cfg: &CorpusConfig, rng: &mut Rng) -> Sample {
    let s = cfg.size;
    let side = ((cfg.min_side + (cfg.max_side - cfg.min_side) * rng.next_f64()) * s as f64).round() as usize;
    let side = side.clamp(1, s);
    let y0 = rng.below(s - side + 1);
    let x0 = rng.below(s - side + 1);
    let inside = |y: usize, x: usize| y >= y0 && y < y0 + side && x >= x0 && x < x0 + side;

    let bg: [f64; 3] = std::array::from_fn(|_| rng.uniform(0.2, 0.8));
    let fg: [f64; 3] = std::array::from_fn(|c| bg[c] + rng.uniform(-cfg.rgb_contrast, cfg.rgb_contrast));
    let cold = rng.uniform(0.05, 0.3);
    let hot = rng.uniform(0.7, 0.95);

    let mut rgb = Tensor::zeros([1, 3, s, s]);
    for c in 0..3 {
        for y in 0..s {
            for x in 0..s {
                let base = if inside(y, x) { fg[c] } else { bg[c] };
                let v = base + rng.uniform(-cfg.noise, cfg.noise);
                rgb.set(0, c, y, x, v.clamp(0.0, 1.0));
            }
        }
    }
    let mut thermal = Tensor::zeros([1, 1, s, s]);
    let mut gt = Tensor::zeros([1, 1, s, s]);
    for y in 0..s {
        for x in 0..s {
            let obj = inside(y, x);
            let base = if obj { hot } else { cold };
            let v = base + rng.uniform(-cfg.noise, cfg.noise);
            thermal.set(0, 0, y, x, v.clamp(0.0, 1.0));
            gt.set(0, 0, y, x, if obj { 1.0 } else { 0.0 });
        }
    }
    Sample { rgb, thermal, gt }
}

/// Draws the training samples then the test samples from `Rng::new(seed)`.
pub fn hot_square_corpus(cfg: &CorpusConfig, seed: u64) -> Result<Corpus> {
    if cfg.size == 0 || !cfg.size.is_multiple_of(32) {
        return Err(Error::Config(format!("image size {} must be a positive multiple of 32", cfg.size)));
    }
    if !(0.0 < cfg.min_side && cfg.min_side <= cfg.max_side && cfg.max_side <= 1.0) {
        return Err(Error::Config(format!(
            "square side range [{}, {}] must lie in (0, 1]",
            cfg.min_side, cfg.max_side
        )));
    }
    let mut rng = Rng::new(seed);
    let train = (0..cfg.train_count).map(|_| sample(cfg, &mut rng)).collect();
    let test = (0..cfg.test_count).map(|_| sample(cfg, &mut rng)).collect();
    Ok(Corpus { train, test })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Steps whose gradient norm exceeds this are shortened so that the update norm is at most
    /// `lr · max_grad_norm`. `None` takes every step at `lr`.
    pub max_grad_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 500,
            lr: 0.25,
            batch_size: 4,
            seed: 0,
            max_grad_norm: Some(1.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub total: f64,
    pub ce: f64,
    pub edge: f64,
    pub grad_norm: f64,
}

/// Stacks the listed samples into one batch.
pub fn batch(samples: &[Sample], idx: &[usize]) -> Result<Sample> {
    let pick = |f: fn(&Sample) -> &Tensor| -> Result<Tensor> {
        let parts: Vec<Tensor> = idx.iter().map(|&i| f(&samples[i]).clone()).collect();
        Tensor::stack_batch(&parts)
    };
    Ok(Sample {
        rgb: pick(|s| &s.rgb)?,
        thermal: pick(|s| &s.thermal)?,
        gt: pick(|s| &s.gt)?,
    })
}

/// Minibatch gradient descent over reshuffled epochs of the training set.
///
/// `on_step` sees every step's loss (measured before that step's update) and may stop training
/// by returning an error. Batch order is drawn from `Rng::new(cfg.seed)`. A non-finite loss or
/// gradient stops training with [`Error::Numerical`].
pub fn train(
    net: AdfNetToy,
    train_set: &[Sample],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&LogRow) -> Result<()>,
) -> Result<AdfNetToy> {
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    if !(cfg.lr >= 0.0 && cfg.lr.is_finite()) {
        return Err(Error::Config(format!("learning rate {} must be finite and non-negative", cfg.lr)));
    }
    if let Some(m) = cfg.max_grad_norm {
        if !(m > 0.0 && m.is_finite()) {
            return Err(Error::Config(format!("gradient norm cap {m} must be finite and positive")));
        }
    }
    if cfg.steps > 0 && train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut rng = Rng::new(cfg.seed);
    let mut order: Vec<usize> = Vec::new();
    let mut net = net;
    for step in 0..cfg.steps {
        let mut idx = Vec::with_capacity(cfg.batch_size);
        while idx.len() < cfg.batch_size {
            if order.is_empty() {
                order = (0..train_set.len()).collect();
                for i in (1..order.len()).rev() {
                    order.swap(i, rng.below(i + 1));
                }
            }
            idx.push(order.pop().expect("refilled above"));
        }
        let b = batch(train_set, &idx)?;
        let (loss, grads) = loss_and_grads(&net, &b.rgb, &b.thermal, &b.gt)?;
        let grad_norm = grads.squared_norm().sqrt();
        if !(loss.total.is_finite() && grad_norm.is_finite()) {
            return Err(Error::Numerical(format!(
                "step {step}: loss {} with gradient norm {grad_norm}",
                loss.total
            )));
        }
        on_step(&LogRow {
            step,
            total: loss.total,
            ce: loss.ce,
            edge: loss.edge,
            grad_norm,
        })?;
        let lr = match cfg.max_grad_norm {
            Some(m) => clipped_step(cfg.lr, grad_norm, m),
            None => cfg.lr,
        };
        net = apply_gradients(&net, &grads, lr)?;
    }
    Ok(net)
}

/// Max F-measure and MAE of the network on a sample set, evaluated on quantized maps.
pub fn evaluate(net: &AdfNetToy, samples: &[Sample]) -> Result<DatasetResult> {
    let accs = samples
        .iter()
        .map(|s| {
            let pred = net.forward(&s.rgb, &s.thermal)?;
            eval_image(&quantize(&pred)?, &BinaryMask::from_tensor(&s.gt)?)
        })
        .collect::<Result<Vec<_>>>()?;
    dataset_curve(&accs)
}

/// Network configuration of the default toy run.
pub fn default_net_config() -> NetConfig {
    NetConfig::default()
}
