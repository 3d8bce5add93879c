//! Classification and segmentation metrics on integer counts.
//!
//! Every ratio is computed from exact counts with a single final division.
//! Classes absent from the ground truth (pixel accuracy) or with an empty
//! union (IoU) are excluded from means.

use crate::error::{Error, Result};

/// An `H×W` grid of class ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl LabelMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::dim("LabelMask::new", &[height, width], &[data.len()]));
        }
        Ok(LabelMask { height, width, data })
    }

    pub fn filled(height: usize, width: usize, label: u8) -> Self {
        LabelMask {
            height,
            width,
            data: vec![label; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    /// Pixel count per label for labels `0..classes`; errors on larger labels.
    pub fn histogram(&self, classes: usize) -> Result<Vec<usize>> {
        let mut h = vec![0; classes];
        for &v in &self.data {
            *h.get_mut(v as usize)
                .ok_or_else(|| Error::Contract(format!("mask label {v} outside [0, {classes})")))? += 1;
        }
        Ok(h)
    }
}

/// Per-class scores with their mean over the defined classes.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassScores {
    pub per_class: Vec<Option<f64>>,
    pub mean: Option<f64>,
}

impl ClassScores {
    fn from_ratios(ratios: Vec<Option<f64>>) -> Self {
        let defined: Vec<f64> = ratios.iter().flatten().copied().collect();
        let mean = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
        ClassScores { per_class: ratios, mean }
    }
}

/// Fraction of equal entries.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::dim("accuracy", &[pred.len()], &[truth.len()]));
    }
    if truth.is_empty() {
        return Err(Error::Contract("accuracy of an empty label set".into()));
    }
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// `K×K` counts; entry `(i, j)` counts samples of true class `i` predicted as `j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.counts[truth * self.classes..(truth + 1) * self.classes]
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }
}

pub fn confusion_matrix(pred: &[usize], truth: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if pred.len() != truth.len() {
        return Err(Error::dim("confusion_matrix", &[pred.len()], &[truth.len()]));
    }
    let mut counts = vec![0; classes * classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if p >= classes || t >= classes {
            return Err(Error::Contract(format!("label pair ({t}, {p}) outside [0, {classes})")));
        }
        counts[t * classes + p] += 1;
    }
    Ok(ConfusionMatrix { classes, counts })
}

/// Running pixel counts, accumulated over any number of mask pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PixelCounts {
    pub hits: Vec<u64>,
    pub truth: Vec<u64>,
    pub predicted: Vec<u64>,
}

impl PixelCounts {
    pub fn new(classes: usize) -> Self {
        PixelCounts {
            hits: vec![0; classes],
            truth: vec![0; classes],
            predicted: vec![0; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.hits.len()
    }

    pub fn add(&mut self, pred: &LabelMask, gt: &LabelMask) -> Result<()> {
        if (pred.height, pred.width) != (gt.height, gt.width) {
            return Err(Error::dim(
                "pixel metrics",
                &[pred.height, pred.width],
                &[gt.height, gt.width],
            ));
        }
        let k = self.classes();
        for (&p, &g) in pred.data.iter().zip(&gt.data) {
            let (p, g) = (p as usize, g as usize);
            if p >= k || g >= k {
                return Err(Error::Contract(format!("mask labels ({g}, {p}) outside [0, {k})")));
            }
            self.truth[g] += 1;
            self.predicted[p] += 1;
            if p == g {
                self.hits[g] += 1;
            }
        }
        Ok(())
    }

    /// `|gt_c ∩ pred_c| / |gt_c|` per class.
    pub fn pixel_accuracy(&self) -> ClassScores {
        ClassScores::from_ratios(
            (0..self.classes())
                .map(|c| (self.truth[c] > 0).then(|| self.hits[c] as f64 / self.truth[c] as f64))
                .collect(),
        )
    }

    /// `|gt_c ∩ pred_c| / |gt_c ∪ pred_c|` per class.
    pub fn iou(&self) -> ClassScores {
        ClassScores::from_ratios(
            (0..self.classes())
                .map(|c| {
                    let union = self.truth[c] + self.predicted[c] - self.hits[c];
                    (union > 0).then(|| self.hits[c] as f64 / union as f64)
                })
                .collect(),
        )
    }
}

pub fn per_class_pixel_accuracy(pred: &LabelMask, gt: &LabelMask, classes: usize) -> Result<ClassScores> {
    let mut counts = PixelCounts::new(classes);
    counts.add(pred, gt)?;
    Ok(counts.pixel_accuracy())
}

pub fn mean_iou(pred: &LabelMask, gt: &LabelMask, classes: usize) -> Result<ClassScores> {
    let mut counts = PixelCounts::new(classes);
    counts.add(pred, gt)?;
    Ok(counts.iou())
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
