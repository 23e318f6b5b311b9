//! Binary cross-entropy, confusion tallies, foreground accuracy and mIoU.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]` inside the loss.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossReduction {
    #[default]
    Mean,
    Sum,
}

impl From<LossReduction> for drsnet_tensor::ops::Reduction {
    fn from(r: LossReduction) -> Self {
        match r {
            LossReduction::Mean => drsnet_tensor::ops::Reduction::Mean,
            LossReduction::Sum => drsnet_tensor::ops::Reduction::Sum,
        }
    }
}

fn check_lengths(op: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{op}: {a} predictions for {b} targets")));
    }
    Ok(())
}

fn check_binary_labels(y: &[f64]) -> Result<()> {
    if let Some(v) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::Data(format!("labels must be 0 or 1, found {v}")));
    }
    Ok(())
}

/// `sum -y log p - (1 - y) log(1 - p)` over pixels, optionally averaged.
pub fn bce_loss(target: &[f64], prob: &[f64], reduction: LossReduction) -> Result<f64> {
    check_lengths("bce_loss", prob.len(), target.len())?;
    check_binary_labels(target)?;
    let sum: f64 = target
        .iter()
        .zip(prob)
        .map(|(&y, &p)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            -y * p.ln() - (1.0 - y) * (1.0 - p).ln()
        })
        .sum();
    Ok(match reduction {
        LossReduction::Sum => sum,
        LossReduction::Mean => sum / target.len().max(1) as f64,
    })
}

/// Derivative of [`bce_loss`] with respect to each probability. Zero where
/// the probability is clamped.
pub fn bce_loss_grad(target: &[f64], prob: &[f64], reduction: LossReduction) -> Result<Vec<f64>> {
    check_lengths("bce_loss_grad", prob.len(), target.len())?;
    check_binary_labels(target)?;
    let scale = match reduction {
        LossReduction::Sum => 1.0,
        LossReduction::Mean => 1.0 / target.len().max(1) as f64,
    };
    Ok(target
        .iter()
        .zip(prob)
        .map(|(&y, &p)| {
            if !(BCE_EPS..=1.0 - BCE_EPS).contains(&p) {
                0.0
            } else {
                scale * (-y / p + (1.0 - y) / (1.0 - p))
            }
        })
        .collect())
}

/// `1` where `p >= threshold`.
pub fn binarize(prob: &[f64], threshold: f64) -> Vec<u8> {
    prob.iter().map(|&p| (p >= threshold) as u8).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

/// A ratio together with a flag set when its denominator was zero (the value
/// is then reported as 0).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub value: f64,
    pub degenerate: bool,
}

impl Ratio {
    fn of(num: u64, den: u64) -> Self {
        if den == 0 {
            Ratio {
                value: 0.0,
                degenerate: true,
            }
        } else {
            Ratio {
                value: num as f64 / den as f64,
                degenerate: false,
            }
        }
    }
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `TP / (TP + FP)`: the fraction of predicted foreground that is correct.
    pub fn foreground_accuracy(&self) -> Ratio {
        Ratio::of(self.tp, self.tp + self.fp)
    }

    /// `TP / (TP + FN)`: the fraction of true foreground that is found.
    pub fn foreground_recall(&self) -> Ratio {
        Ratio::of(self.tp, self.tp + self.fn_)
    }

    /// Two-class matrix with class 0 = background, class 1 = foreground.
    pub fn to_matrix(&self) -> ConfusionMatrix {
        ConfusionMatrix {
            classes: 2,
            counts: vec![self.tn, self.fp, self.fn_, self.tp],
        }
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = ConfusionCounts;
    fn add(self, o: ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

/// Tallies a binary prediction against a binary target.
pub fn confusion(pred: &[u8], target: &[u8]) -> Result<ConfusionCounts> {
    check_lengths("confusion", pred.len(), target.len())?;
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.iter().zip(target) {
        match (p, t) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 1) => c.fn_ += 1,
            (0, 0) => c.tn += 1,
            _ => return Err(Error::Data(format!("masks must be binary, found ({p}, {t})"))),
        }
    }
    Ok(c)
}

pub fn foreground_accuracy(counts: &ConfusionCounts) -> Ratio {
    counts.foreground_accuracy()
}

pub fn foreground_recall(counts: &ConfusionCounts) -> Ratio {
    counts.foreground_recall()
}

/// Square count matrix; entry `(i, j)` counts pixels of true class `i`
/// predicted as class `j`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn from_labels(pred: &[usize], target: &[usize], classes: usize) -> Result<Self> {
        check_lengths("confusion matrix", pred.len(), target.len())?;
        let mut counts = vec![0; classes * classes];
        for (&p, &t) in pred.iter().zip(target) {
            if p >= classes || t >= classes {
                return Err(Error::Data(format!("label outside 0..{classes}: ({p}, {t})")));
            }
            counts[t * classes + p] += 1;
        }
        Ok(Self { classes, counts })
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    /// `P_ii / (sum_j P_ij + sum_j P_ji - P_ii)`, or `None` when the class is
    /// absent from both prediction and target.
    pub fn class_iou(&self, i: usize) -> Option<f64> {
        let row: u64 = (0..self.classes).map(|j| self.get(i, j)).sum();
        let col: u64 = (0..self.classes).map(|j| self.get(j, i)).sum();
        let den = row + col - self.get(i, i);
        (den > 0).then(|| self.get(i, i) as f64 / den as f64)
    }
}

/// Mean IoU over classes; classes with an empty union are left out of the
/// mean. Returns 0 for an empty matrix.
pub fn miou(matrix: &ConfusionMatrix) -> f64 {
    let ious: Vec<f64> = (0..matrix.classes).filter_map(|i| matrix.class_iou(i)).collect();
    if ious.is_empty() {
        0.0
    } else {
        ious.iter().sum::<f64>() / ious.len() as f64
    }
}

/// Metrics of one image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub counts: ConfusionCounts,
    pub foreground_accuracy: Ratio,
    pub foreground_recall: Ratio,
    pub miou: f64,
}

impl ImageMetrics {
    pub fn from_counts(counts: ConfusionCounts) -> Self {
        Self {
            counts,
            foreground_accuracy: counts.foreground_accuracy(),
            foreground_recall: counts.foreground_recall(),
            miou: miou(&counts.to_matrix()),
        }
    }

    pub fn compute(pred: &[u8], target: &[u8]) -> Result<Self> {
        Ok(Self::from_counts(confusion(pred, target)?))
    }
}

/// How per-image results are combined into dataset-level numbers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Mean of per-image values.
    #[default]
    PerImage,
    /// Metrics of the summed confusion counts.
    Pooled,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub foreground_accuracy: f64,
    pub foreground_recall: f64,
    pub miou: f64,
    pub n_images: usize,
    /// Images whose foreground accuracy had no predicted foreground.
    pub degenerate_images: usize,
}

pub fn summarize(images: &[ImageMetrics], averaging: Averaging) -> Result<MetricSummary> {
    if images.is_empty() {
        return Err(Error::Data("no images to summarize".into()));
    }
    let n = images.len();
    let degenerate_images = images.iter().filter(|m| m.foreground_accuracy.degenerate).count();
    Ok(match averaging {
        Averaging::PerImage => MetricSummary {
            foreground_accuracy: images.iter().map(|m| m.foreground_accuracy.value).sum::<f64>() / n as f64,
            foreground_recall: images.iter().map(|m| m.foreground_recall.value).sum::<f64>() / n as f64,
            miou: images.iter().map(|m| m.miou).sum::<f64>() / n as f64,
            n_images: n,
            degenerate_images,
        },
        Averaging::Pooled => {
            let total = images.iter().fold(ConfusionCounts::default(), |a, m| a + m.counts);
            MetricSummary {
                foreground_accuracy: total.foreground_accuracy().value,
                foreground_recall: total.foreground_recall().value,
                miou: miou(&total.to_matrix()),
                n_images: n,
                degenerate_images,
            }
        }
    })
}
