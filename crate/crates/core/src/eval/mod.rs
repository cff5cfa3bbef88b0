//! Pixel metrics, complexity accounting and report artifacts.
//!
//! Undefined ratios (zero denominators, single-class AUC) are `None` and
//! written as `NA`.

mod overlay;
mod report;

use vesseldistill_autograd::{Float, Tensor};

pub use overlay::{render_overlay, write_overlay, FN_COLOR, FP_COLOR};
pub use report::{mean_defined, read_metrics_csv, render_report, write_metrics_csv, MetricsReport, METRICS_HEADER};

use crate::nets::{SegmentationNetwork, Topology};
use crate::synthdata::AngiogramSample;
use crate::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }

    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn sensitivity(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> Option<f64> {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    /// Mean of vessel IoU and background IoU.
    pub fn miou(&self) -> Option<f64> {
        let fg = ratio(self.tp, self.tp + self.fp + self.fn_)?;
        let bg = ratio(self.tn, self.tn + self.fp + self.fn_)?;
        Some((fg + bg) / 2.0)
    }
}

fn check_threshold(threshold: f64) -> Result<()> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Argument(format!("threshold {threshold} must lie in (0,1)")));
    }
    Ok(())
}

/// Pixel counts with `pred >= threshold` taken as vessel.
pub fn confusion(pred: &[f64], gt: &[u8], threshold: f64) -> Result<ConfusionCounts> {
    check_threshold(threshold)?;
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!(
            "prediction has {} pixels, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &y) in pred.iter().zip(gt) {
        match (p >= threshold, y != 0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Area under the ROC curve from the Mann-Whitney statistic, ties at midrank.
/// `None` when only one class is present.
pub fn auc(pred: &[f64], gt: &[u8]) -> Result<Option<f64>> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!(
            "prediction has {} pixels, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    if let Some(p) = pred.iter().find(|p| p.is_nan()) {
        return Err(Error::Numeric(format!("prediction contains {p}")));
    }
    let pos = gt.iter().filter(|&&y| y != 0).count() as u128;
    let neg = gt.len() as u128 - pos;
    if pos == 0 || neg == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..pred.len()).collect();
    order.sort_by(|&a, &b| pred[a].total_cmp(&pred[b]));
    // twice the rank sum of positives, kept in integers
    let mut rank2_pos: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && pred[order[j + 1]] == pred[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share the midrank (i + j + 2) / 2
        let mid2 = (i + j + 2) as u128;
        let k = order[i..=j].iter().filter(|&&o| gt[o] != 0).count() as u128;
        rank2_pos += mid2 * k;
        i = j + 1;
    }
    let u2 = rank2_pos - pos * (pos + 1);
    Ok(Some(u2 as f64 / (2 * pos * neg) as f64))
}

/// Trainable scalar count of a topology.
pub fn count_params(t: &Topology) -> u64 {
    t.param_count() as u64
}

/// Forward operation count of `t` at `input_shape`: two per multiply-add,
/// one per bias add, elementwise add/multiply and pooled element.
pub fn count_flops(t: &Topology, input_shape: &[usize]) -> Result<u64> {
    t.count_flops(input_shape)
}

/// Dataset-level metrics from pixel counts pooled over all samples.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMetrics {
    pub counts: ConfusionCounts,
    pub acc: Option<f64>,
    pub se: Option<f64>,
    pub auc: Option<f64>,
    pub miou: Option<f64>,
    pub f1: Option<f64>,
}

impl DatasetMetrics {
    pub fn from_pixels(pred: &[f64], gt: &[u8], threshold: f64) -> Result<Self> {
        let counts = confusion(pred, gt, threshold)?;
        Ok(Self {
            counts,
            acc: counts.accuracy(),
            se: counts.sensitivity(),
            auc: auc(pred, gt)?,
            miou: counts.miou(),
            f1: counts.f1(),
        })
    }
}

/// Stacks samples into `[B, 1, H, W]` image and mask tensors.
pub fn batch_tensors<F: Float>(samples: &[AngiogramSample]) -> Result<(Tensor<F>, Tensor<F>)> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Data("empty batch".into()))?;
    let (h, w) = (first.height, first.width);
    let mut img = Vec::with_capacity(samples.len() * h * w);
    let mut msk = Vec::with_capacity(samples.len() * h * w);
    for s in samples {
        if (s.height, s.width) != (h, w) {
            return Err(Error::Data(format!(
                "{} is {}x{}, batch expects {h}x{w}",
                s.id, s.height, s.width
            )));
        }
        img.extend(s.image.iter().map(|&v| F::of(v as f64)));
        msk.extend(s.mask.iter().map(|&m| F::of(m as f64)));
    }
    let shape = vec![samples.len(), 1, h, w];
    Ok((Tensor::new(shape.clone(), img)?, Tensor::new(shape, msk)?))
}

/// Runs `net` over `samples` in batches; probabilities in sample order.
pub fn predict_all<F: Float>(net: &SegmentationNetwork<F>, samples: &[AngiogramSample], batch: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch.max(1)) {
        let (x, _) = batch_tensors::<F>(chunk)?;
        let p = net.predict(&x)?;
        let per = p.numel() / chunk.len();
        for s in p.data().chunks(per) {
            out.push(s.iter().map(|v| v.as_f64()).collect());
        }
    }
    Ok(out)
}

/// Micro-averaged metrics of `net` on `samples`.
pub fn evaluate<F: Float>(
    net: &SegmentationNetwork<F>,
    samples: &[AngiogramSample],
    batch: usize,
    threshold: f64,
) -> Result<DatasetMetrics> {
    check_threshold(threshold)?;
    let preds = predict_all(net, samples, batch)?;
    let pred: Vec<f64> = preds.into_iter().flatten().collect();
    let gt: Vec<u8> = samples.iter().flat_map(|s| s.mask.iter().copied()).collect();
    DatasetMetrics::from_pixels(&pred, &gt, threshold)
}
