//! SGD training with warmup + cosine learning-rate schedule, evaluation and
//! checkpoint selection.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use drsnet_tensor::ops;
use drsnet_tensor::{Param, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::dataset::{derive_seed, rain_image, resize_sample, Sample};
use crate::error::{Error, Result};
use crate::metrics::{binarize, summarize, Averaging, ImageMetrics, LossReduction, MetricSummary};
use crate::model::{check_input_size, DrsNet};
use crate::nn::{Mode, Module};
use crate::rain::DEFAULT_STREAK_COLOR;

/// When rain is composited onto training images.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RainMode {
    /// Fresh rain per image and epoch.
    #[default]
    OnTheFly,
    /// The same rain on an image every epoch.
    Fixed,
    Off,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub momentum: f64,
    pub weight_decay: f64,
    pub base_lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Fraction of the corpus used for training (the rest is the test split).
    pub train_fraction: f64,
    pub warmup_epochs: usize,
    pub seed: u64,
    /// (width, height)
    pub input_size: (usize, usize),
    pub loss_reduction: LossReduction,
    pub rain: RainMode,
    /// Rain the test split (fixed per image) before evaluation.
    pub rain_test: bool,
    pub streak_color: f64,
    pub threshold: f64,
    pub averaging: Averaging,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            momentum: 0.9,
            weight_decay: 1e-4,
            base_lr: 0.008,
            batch_size: 20,
            epochs: 20,
            train_fraction: 0.9,
            warmup_epochs: 1,
            seed: 0,
            input_size: (192, 128),
            loss_reduction: LossReduction::Mean,
            rain: RainMode::OnTheFly,
            rain_test: true,
            streak_color: DEFAULT_STREAK_COLOR,
            threshold: 0.5,
            averaging: Averaging::PerImage,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_input_size(self.input_size.0, self.input_size.1)?;
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch size and epochs must be positive".into()));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.base_lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::Config("momentum must be in [0, 1) and weight decay non-negative".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!("train fraction {} outside (0, 1)", self.train_fraction)));
        }
        if self.warmup_epochs >= self.epochs {
            return Err(Error::Config("warmup must be shorter than training".into()));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n_train: usize) -> usize {
        n_train.div_ceil(self.batch_size)
    }
}

/// Linear ramp from 0 to `base_lr` over `warmup_steps`, then cosine decay to
/// 0 at `total_steps`.
pub fn lr_schedule(step: usize, total_steps: usize, warmup_steps: usize, base_lr: f64) -> f64 {
    if step < warmup_steps {
        return base_lr * step as f64 / warmup_steps as f64;
    }
    let span = (total_steps - warmup_steps).max(1) as f64;
    let progress = ((step - warmup_steps) as f64 / span).min(1.0);
    base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Deterministic shuffled split into `(train, test)` index sets with
/// `round(train_fraction * n)` training samples.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 10 {
        return Err(Error::Data(format!("need at least 10 samples to split, got {n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[SPLIT_STREAM])));
    let n_train = (train_fraction * n as f64).round() as usize;
    let test = idx.split_off(n_train);
    Ok((idx, test))
}

pub fn split_dataset<T: Clone>(samples: &[T], train_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    let (tr, te) = split_indices(samples.len(), train_fraction, seed)?;
    Ok((
        tr.iter().map(|&i| samples[i].clone()).collect(),
        te.iter().map(|&i| samples[i].clone()).collect(),
    ))
}

const SPLIT_STREAM: u64 = 1;
const ORDER_STREAM: u64 = 2;
const TRAIN_RAIN_STREAM: u64 = 3;
const TEST_RAIN_STREAM: u64 = 4;

/// SGD with momentum and decoupled-from-norm weight decay: for every
/// trainable parameter `g += wd * w` (weights only), `v = mu * v + g`,
/// `w -= lr * v`.
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: HashMap<String, Tensor>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: HashMap::new(),
        }
    }

    /// Applies one update with the accumulated gradients and clears them.
    pub fn step(&mut self, params: &[Param], lr: f64) {
        for p in params {
            if !p.kind().trainable() {
                continue;
            }
            let Some(mut g) = p.take_grad() else { continue };
            if p.kind().decays() && self.weight_decay != 0.0 {
                let w = p.value();
                for (gv, &wv) in g.data_mut().iter_mut().zip(w.data()) {
                    *gv += self.weight_decay * wv;
                }
            }
            let v = self
                .velocity
                .entry(p.name().to_string())
                .or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
            for (vv, &gv) in v.data_mut().iter_mut().zip(g.data()) {
                *vv = self.momentum * *vv + gv;
            }
            let v = &*v;
            p.update(|w| {
                for (wv, &vv) in w.data_mut().iter_mut().zip(v.data()) {
                    *wv -= lr * vv;
                }
            });
        }
    }
}

/// Names of the parameters that receive weight decay.
pub fn decayed_params(model: &dyn Module) -> Vec<String> {
    model
        .params()
        .iter()
        .filter(|p| p.kind().trainable() && p.kind().decays())
        .map(|p| p.name().to_string())
        .collect()
}

/// Packs images (scaled to [0, 1]) and masks into (N,3,H,W) and (N,1,H,W).
pub fn batch_tensors(samples: &[&Sample]) -> Result<(Tensor, Tensor)> {
    let first = samples.first().ok_or_else(|| Error::Data("empty batch".into()))?;
    let (w, h) = first.size();
    let hw = w * h;
    let mut x = Vec::with_capacity(samples.len() * 3 * hw);
    let mut y = Vec::with_capacity(samples.len() * hw);
    for s in samples {
        if s.size() != (w, h) {
            return Err(Error::Shape(format!(
                "{} is {}x{}, batch expects {w}x{h}",
                s.source_id,
                s.size().0,
                s.size().1
            )));
        }
        let raw = s.image.as_raw();
        for c in 0..3 {
            x.extend((0..hw).map(|i| raw[i * 3 + c] as f64 / 255.0));
        }
        y.extend(s.mask.data.iter().map(|&v| v as f64));
    }
    Ok((
        Tensor::new([samples.len(), 3, h, w], x)?,
        Tensor::new([samples.len(), 1, h, w], y)?,
    ))
}

/// Resizes to the training size and, if enabled, applies the fixed
/// evaluation rain.
pub fn prepare_test_set(samples: &[Sample], cfg: &TrainConfig) -> Result<Vec<Sample>> {
    let (w, h) = cfg.input_size;
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut s = resize_sample(s, w, h)?;
            if cfg.rain_test {
                s.image = rain_image(&s.image, derive_seed(cfg.seed, &[TEST_RAIN_STREAM, i as u64]), cfg.streak_color)?.0;
            }
            Ok(s)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Learning rate at the first step of the epoch.
    pub lr: f64,
    pub train_loss: f64,
    pub test_foreground_accuracy: Option<f64>,
    pub test_foreground_recall: Option<f64>,
    pub test_miou: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub step_losses: Vec<f64>,
    pub step_lrs: Vec<f64>,
    /// Epoch whose model scored the best test foreground accuracy.
    pub best_epoch: Option<usize>,
}

/// Where the trainer writes its history log and checkpoints.
pub struct TrainOutput<'a> {
    pub dir: &'a Path,
}

/// Trains `model` in place on `train_set`, evaluating on `test_set` (already
/// prepared, see [`prepare_test_set`]) after every epoch when it is not
/// empty.
///
/// With an output directory, `history.jsonl` receives one record per epoch,
/// and `best.ckpt` / `final.ckpt` hold the best-test-accuracy and last
/// models.
pub fn train(
    model: &DrsNet,
    train_set: &[Sample],
    test_set: &[Sample],
    cfg: &TrainConfig,
    output: Option<TrainOutput<'_>>,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let (w, h) = cfg.input_size;
    let train_set: Vec<Sample> = train_set.iter().map(|s| resize_sample(s, w, h)).collect::<Result<_>>()?;
    let params = model.params();
    let mut sgd = Sgd::new(cfg.momentum, cfg.weight_decay);
    let steps_per_epoch = cfg.steps_per_epoch(train_set.len());
    let total_steps = steps_per_epoch * cfg.epochs;
    let warmup_steps = steps_per_epoch * cfg.warmup_epochs;
    let mut history = TrainHistory::default();
    let mut best_fa = f64::NEG_INFINITY;
    let mut log = match &output {
        Some(o) => {
            fs::create_dir_all(o.dir).map_err(|e| Error::io(o.dir, e))?;
            let p = o.dir.join("history.jsonl");
            Some((fs::File::create(&p).map_err(|e| Error::io(&p, e))?, p))
        }
        None => None,
    };

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[ORDER_STREAM, epoch as u64])));
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let step = epoch * steps_per_epoch + b;
            let lr = lr_schedule(step, total_steps, warmup_steps, cfg.base_lr);
            let batch: Vec<Sample> = chunk
                .iter()
                .map(|&i| rained_training_sample(&train_set[i], i, epoch, cfg))
                .collect::<Result<_>>()?;
            let refs: Vec<&Sample> = batch.iter().collect();
            let (x, y) = batch_tensors(&refs)?;
            let logits = model.forward(&Var::constant(x), Mode::TRAIN)?;
            let loss = ops::bce_with_logits(&logits, &y, cfg.loss_reduction.into())?;
            let loss_value = loss.value().item();
            if !loss_value.is_finite() {
                return Err(Error::NonFinite { epoch, batch: b, lr });
            }
            loss.backward();
            drop(loss);
            drop(logits);
            sgd.step(&params, lr);
            history.step_losses.push(loss_value);
            history.step_lrs.push(lr);
            loss_sum += loss_value;
        }
        if params.iter().any(|p| !p.value().is_finite()) {
            return Err(Error::NonFinite {
                epoch,
                batch: steps_per_epoch - 1,
                lr: *history.step_lrs.last().unwrap_or(&0.0),
            });
        }

        let summary = if test_set.is_empty() {
            None
        } else {
            Some(evaluate(model, test_set, cfg.threshold, cfg.averaging)?.summary)
        };
        let record = EpochRecord {
            epoch,
            lr: lr_schedule(epoch * steps_per_epoch, total_steps, warmup_steps, cfg.base_lr),
            train_loss: loss_sum / steps_per_epoch as f64,
            test_foreground_accuracy: summary.map(|s| s.foreground_accuracy),
            test_foreground_recall: summary.map(|s| s.foreground_recall),
            test_miou: summary.map(|s| s.miou),
        };
        if let Some((f, p)) = log.as_mut() {
            let line = serde_json::to_string(&record).expect("record serializes");
            writeln!(f, "{line}").map_err(|e| Error::io(&*p, e))?;
        }
        if let Some(s) = summary {
            if s.foreground_accuracy > best_fa {
                best_fa = s.foreground_accuracy;
                history.best_epoch = Some(epoch);
                if let Some(o) = &output {
                    checkpoint::save(model, &o.dir.join("best.ckpt"))?;
                }
            }
        }
        history.epochs.push(record);
    }
    if let Some(o) = &output {
        checkpoint::save(model, &o.dir.join("final.ckpt"))?;
    }
    Ok(history)
}

/// The training images as the trainer sees them in `epoch` (resized and
/// rained per [`TrainConfig::rain`]).
pub fn training_view(samples: &[Sample], cfg: &TrainConfig, epoch: usize) -> Result<Vec<Sample>> {
    let (w, h) = cfg.input_size;
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| rained_training_sample(&resize_sample(s, w, h)?, i, epoch, cfg))
        .collect()
}

fn rained_training_sample(sample: &Sample, index: usize, epoch: usize, cfg: &TrainConfig) -> Result<Sample> {
    let seed = match cfg.rain {
        RainMode::Off => return Ok(sample.clone()),
        RainMode::Fixed => derive_seed(cfg.seed, &[TRAIN_RAIN_STREAM, index as u64]),
        RainMode::OnTheFly => derive_seed(cfg.seed, &[TRAIN_RAIN_STREAM, index as u64, epoch as u64]),
    };
    let (image, _) = rain_image(&sample.image, seed, cfg.streak_color)?;
    Ok(Sample {
        image,
        mask: sample.mask.clone(),
        source_id: sample.source_id.clone(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub source_id: String,
    pub metrics: ImageMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_image: Vec<ImageRecord>,
    pub summary: MetricSummary,
    pub averaging: Averaging,
    pub ms_per_image: f64,
}

const EVAL_BATCH: usize = 8;

/// Predicts every sample (inference mode) and scores it against its mask.
pub fn evaluate(model: &DrsNet, samples: &[Sample], threshold: f64, averaging: Averaging) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Data("empty evaluation set".into()));
    }
    let start = Instant::now();
    let mut per_image = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (x, _) = batch_tensors(&refs)?;
        let out = model.segment(&Var::constant(x), Mode::EVAL)?;
        let probs = out.probabilities.value().data();
        let hw = probs.len() / chunk.len();
        for (s, p) in chunk.iter().zip(probs.chunks(hw)) {
            per_image.push(ImageRecord {
                source_id: s.source_id.clone(),
                metrics: ImageMetrics::compute(&binarize(p, threshold), &s.mask.data)?,
            });
        }
    }
    let ms_per_image = start.elapsed().as_secs_f64() * 1e3 / samples.len() as f64;
    let metrics: Vec<ImageMetrics> = per_image.iter().map(|r| r.metrics.clone()).collect();
    Ok(EvalReport {
        summary: summarize(&metrics, averaging)?,
        per_image,
        averaging,
        ms_per_image,
    })
}

/// Probability map of a single image, shape (H, W) row-major.
pub fn predict(model: &DrsNet, sample_image: &image::RgbImage) -> Result<Vec<f64>> {
    let s = Sample {
        image: sample_image.clone(),
        mask: crate::dataset::Mask {
            width: sample_image.width() as usize,
            height: sample_image.height() as usize,
            data: vec![0; (sample_image.width() * sample_image.height()) as usize],
        },
        source_id: String::new(),
    };
    let (x, _) = batch_tensors(&[&s])?;
    Ok(model.segment(&Var::constant(x), Mode::EVAL)?.probabilities.value().data().to_vec())
}
