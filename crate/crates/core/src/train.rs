//! Stratified splitting, the three training stages and evaluation.
//!
//! Stage A fits the ROI subnetwork to the masks, Stage B fits a 6-channel
//! classifier on images stacked with frozen ROI probabilities, and Stage C
//! fine-tunes the fused network end to end with the classification loss only.

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Sgd, Tape, Var};
use crate::data::{batch_images, Dataset, Sample, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::metrics::{argmax, confusion_matrix, ClassScores, ConfusionMatrix, LabelMask, PixelCounts};
use crate::network::{self, Network, ROI_CLASSES};
use crate::nn;
use crate::tensor::Tensor;

/// Samples per inference chunk; bounds memory without affecting results.
const INFER_CHUNK: usize = 16;

/// Epoch count and learning rate of one stage.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub epochs: usize,
    pub learning_rate: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClassWeightMode {
    /// `w_c = total / (K · count_c)` from the training masks.
    InverseFrequency,
    Uniform,
}

/// Which ROI map the Stage-B classifier sees next to the image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RoiSource {
    /// Softmax output of the frozen Stage-A network.
    Predicted,
    /// One-hot encoding of the ground-truth mask.
    GroundTruth,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub momentum: f64,
    /// Global L2 bound on each batch gradient; 0 disables clipping.
    pub clip_norm: f64,
    pub roi: Schedule,
    pub cls: Schedule,
    pub e2e: Schedule,
    pub class_weights: ClassWeightMode,
    pub roi_source: RoiSource,
    pub split_ratio: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 20190101,
            batch_size: 8,
            momentum: 0.9,
            clip_norm: 5.0,
            roi: Schedule {
                epochs: 20,
                learning_rate: 0.02,
            },
            cls: Schedule {
                epochs: 20,
                learning_rate: 0.01,
            },
            e2e: Schedule {
                epochs: 10,
                learning_rate: 0.005,
            },
            class_weights: ClassWeightMode::InverseFrequency,
            roi_source: RoiSource::Predicted,
            split_ratio: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Config(format!("split ratio {} outside (0, 1)", self.split_ratio)));
        }
        for s in [self.roi, self.cls, self.e2e] {
            if !(s.learning_rate >= 0.0 && s.learning_rate.is_finite()) {
                return Err(Error::Config(format!("learning rate {} must be >= 0", s.learning_rate)));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if !(self.clip_norm >= 0.0 && self.clip_norm.is_finite()) {
            return Err(Error::Config(format!("clip norm {} must be >= 0", self.clip_norm)));
        }
        Ok(())
    }
}

/// Disjoint train/test index sets into a dataset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified split: each class contributes `round(ratio · n_c)` training samples.
pub fn split_dataset(ds: &Dataset, ratio: f64, seed: u64) -> Result<Split> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Contract(format!("split ratio {ratio} must lie strictly inside (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for class in 0..NUM_CLASSES {
        let mut members: Vec<usize> = (0..ds.len()).filter(|&i| ds.samples[i].label == class).collect();
        if members.len() < 2 {
            return Err(Error::Data(format!(
                "class {class} has {} samples; a split needs at least 2",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        let k = (ratio * members.len() as f64).round() as usize;
        let (a, b) = members.split_at(k);
        train.extend_from_slice(a);
        test.extend_from_slice(b);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

/// Pixel-loss class weights from training masks.
pub fn class_weights(masks: &[&LabelMask], mode: ClassWeightMode) -> Result<Vec<f64>> {
    if mode == ClassWeightMode::Uniform {
        return Ok(vec![1.0; ROI_CLASSES]);
    }
    let mut counts = [0usize; ROI_CLASSES];
    for m in masks {
        for (c, n) in m.histogram(ROI_CLASSES)?.into_iter().enumerate() {
            counts[c] += n;
        }
    }
    let total: usize = counts.iter().sum();
    Ok(counts
        .iter()
        .map(|&n| if n == 0 { 1.0 } else { total as f64 / (ROI_CLASSES * n) as f64 })
        .collect())
}

/// Per-epoch mean training losses of one stage.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub stage: String,
    pub epoch_losses: Vec<f64>,
}

fn stage_seed(seed: u64, stage: &str) -> u64 {
    stage.bytes().fold(seed ^ 0x5851_f42d_4c95_7f2d, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm` (0 leaves them alone).
/// Returns the norm before clipping.
pub fn clip_gradients(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().flat_map(|g| g.data()).map(|v| v * v).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let k = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= k);
        }
    }
    norm
}

/// Mini-batch SGD over `n` samples; `loss` records one batch and returns the loss
/// with the parameter handles it used.
fn fit<F>(net: &mut Network, n: usize, schedule: Schedule, cfg: &TrainConfig, stage: &str, mut loss: F) -> Result<TrainLog>
where
    F: FnMut(&mut Tape, &Network, &[usize]) -> Result<(Var, Vec<Var>)>,
{
    cfg.validate()?;
    let mut log = TrainLog {
        stage: stage.to_string(),
        epoch_losses: Vec::with_capacity(schedule.epochs),
    };
    if schedule.epochs == 0 {
        return Ok(log);
    }
    if n == 0 {
        return Err(Error::Data(format!("stage {stage} has no training samples")));
    }
    let mut opt = Sgd::new(schedule.learning_rate, cfg.momentum)?;
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(cfg.seed, stage));
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 1..=schedule.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let as_training = |e: Error| match e {
                Error::NonFinite { op } => Error::Training {
                    epoch,
                    msg: format!("non-finite value in {op}"),
                },
                other => other,
            };
            let mut tape = Tape::new();
            let (l, params) = loss(&mut tape, net, batch).map_err(as_training)?;
            let value = tape.value(l).item()?;
            if !value.is_finite() {
                return Err(Error::Training {
                    epoch,
                    msg: format!("loss became {value}"),
                });
            }
            let grads = tape.backward(l).map_err(as_training)?;
            let mut grads = params.iter().map(|&p| grads.get(p)).collect::<Result<Vec<_>>>()?;
            let norm = clip_gradients(&mut grads, cfg.clip_norm);
            debug!("{stage} epoch {epoch}: batch loss {value:.4}, gradient norm {norm:.4}");
            opt.step(net.params_mut(), &grads)?;
            total += value * batch.len() as f64;
        }
        let mean = total / n as f64;
        info!("{stage} epoch {epoch}/{}: loss {mean:.6}", schedule.epochs);
        log.epoch_losses.push(mean);
    }
    Ok(log)
}

fn mask_batch(samples: &[&Sample]) -> Vec<u8> {
    samples.iter().flat_map(|s| s.mask.data().iter().copied()).collect()
}

/// Stage A: fits the ROI subnetwork to the ground-truth masks.
pub fn train_roi_stage(net: &mut Network, train: &Dataset, cfg: &TrainConfig) -> Result<TrainLog> {
    let masks: Vec<&LabelMask> = train.samples.iter().map(|s| &s.mask).collect();
    let weights = class_weights(&masks, cfg.class_weights)?;
    let images = batch_images(&train.samples)?;
    fit(net, train.len(), cfg.roi, cfg, "roi", |tape, net, batch| {
        let x = tape.constant(images.gather(batch)?);
        let fwd = net.forward(tape, x, true)?;
        let picked: Vec<&Sample> = batch.iter().map(|&i| &train.samples[i]).collect();
        let loss = nn::pixel_softmax_loss(tape, fwd.output(), &mask_batch(&picked), &weights)?;
        Ok((loss, fwd.params))
    })
}

/// Images stacked with per-pixel ROI probabilities, `N×6×H×W`.
pub fn roi_augmented_inputs(samples: &[Sample], roi: Option<&Network>, source: RoiSource) -> Result<Tensor> {
    let mut parts = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(INFER_CHUNK) {
        let images = batch_images(chunk)?;
        let probs = match (source, roi) {
            (RoiSource::Predicted, Some(roi)) => network::roi_probabilities(roi, &images)?,
            (RoiSource::Predicted, None) => {
                return Err(Error::Config("predicted ROI inputs need a Stage-A network".into()))
            }
            (RoiSource::GroundTruth, _) => one_hot_masks(chunk)?,
        };
        let mut tape = Tape::new();
        let (a, b) = (tape.constant(images), tape.constant(probs));
        let joined = nn::concat_channels(&mut tape, a, b)?;
        parts.push(tape.value(joined).clone());
    }
    concat_batches(parts)
}

fn one_hot_masks(samples: &[Sample]) -> Result<Tensor> {
    let (h, w) = (samples[0].mask.height(), samples[0].mask.width());
    let plane = h * w;
    let mut data = vec![0.0; samples.len() * ROI_CLASSES * plane];
    for (b, s) in samples.iter().enumerate() {
        for (px, &label) in s.mask.data().iter().enumerate() {
            data[(b * ROI_CLASSES + label as usize) * plane + px] = 1.0;
        }
    }
    Tensor::new(vec![samples.len(), ROI_CLASSES, h, w], data)
}

fn concat_batches(parts: Vec<Tensor>) -> Result<Tensor> {
    let first = parts.first().ok_or_else(|| Error::Contract("no samples".into()))?;
    let mut shape = first.shape().to_vec();
    shape[0] = parts.iter().map(|p| p.shape()[0]).sum();
    let data = parts.into_iter().flat_map(Tensor::into_data).collect();
    Tensor::new(shape, data)
}

/// Cross-entropy training of a classifier on precomputed inputs `N×C×H×W`.
pub fn train_classifier_on(
    net: &mut Network,
    inputs: &Tensor,
    labels: &[usize],
    schedule: Schedule,
    cfg: &TrainConfig,
    stage: &str,
) -> Result<TrainLog> {
    if inputs.shape().first() != Some(&labels.len()) {
        return Err(Error::dim("train_classifier_on", inputs.shape(), &[labels.len()]));
    }
    fit(net, labels.len(), schedule, cfg, stage, |tape, net, batch| {
        let x = tape.constant(inputs.gather(batch)?);
        let fwd = net.forward(tape, x, true)?;
        let ys: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
        let loss = nn::cross_entropy(tape, fwd.output(), &ys)?;
        Ok((loss, fwd.params))
    })
}

/// Stage B: trains a 6-channel classifier on images plus ROI maps from `roi_frozen`,
/// which is only read.
pub fn train_cls_stage(cls: &mut Network, roi_frozen: &Network, train: &Dataset, cfg: &TrainConfig) -> Result<TrainLog> {
    let inputs = roi_augmented_inputs(&train.samples, Some(roi_frozen), cfg.roi_source)?;
    train_classifier_on(cls, &inputs, &train.labels(), cfg.cls, cfg, "cls")
}

/// Stage C: classification loss through the whole fused network.
pub fn train_end_to_end(fused: &mut Network, train: &Dataset, cfg: &TrainConfig) -> Result<TrainLog> {
    let images = batch_images(&train.samples)?;
    train_classifier_on(fused, &images, &train.labels(), cfg.e2e, cfg, "e2e")
}

/// The 3-channel comparison classifier, trained on the Stage-B schedule followed
/// by the Stage-C schedule so it sees the same number of epochs as the fused path.
pub fn train_plain_classifier(cls: &mut Network, train: &Dataset, cfg: &TrainConfig) -> Result<Vec<TrainLog>> {
    let images = batch_images(&train.samples)?;
    let labels = train.labels();
    Ok(vec![
        train_classifier_on(cls, &images, &labels, cfg.cls, cfg, "plain")?,
        train_classifier_on(cls, &images, &labels, cfg.e2e, cfg, "plain-ft")?,
    ])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalMode {
    Classification,
    Segmentation,
}

/// Classification and/or segmentation quality on a test set.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub n_test: usize,
    pub accuracy: Option<f64>,
    pub confusion: Option<ConfusionMatrix>,
    pub pixel_accuracy: Option<ClassScores>,
    pub iou: Option<ClassScores>,
}

impl MetricsReport {
    pub fn classification(confusion: ConfusionMatrix) -> Self {
        MetricsReport {
            n_test: confusion.total() as usize,
            accuracy: Some(confusion.accuracy()),
            confusion: Some(confusion),
            pixel_accuracy: None,
            iou: None,
        }
    }

    pub fn segmentation(counts: &PixelCounts, n_test: usize) -> Self {
        MetricsReport {
            n_test,
            accuracy: None,
            confusion: None,
            pixel_accuracy: Some(counts.pixel_accuracy()),
            iou: Some(counts.iou()),
        }
    }

    pub fn mean_pixel_accuracy(&self) -> Option<f64> {
        self.pixel_accuracy.as_ref().and_then(|s| s.mean)
    }

    pub fn mean_iou(&self) -> Option<f64> {
        self.iou.as_ref().and_then(|s| s.mean)
    }
}

/// Class probabilities `N×K` of a network taking `N×C×H×W` inputs.
pub fn predict_probabilities(net: &Network, inputs: &Tensor) -> Result<Tensor> {
    let n = inputs.shape().first().copied().unwrap_or(0);
    let mut parts = Vec::new();
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(INFER_CHUNK) {
        parts.push(net.infer(&inputs.gather(chunk)?)?);
    }
    concat_batches(parts)
}

/// Argmax class per sample, ties toward the lowest index.
pub fn predict_labels(net: &Network, inputs: &Tensor) -> Result<Vec<usize>> {
    let probs = predict_probabilities(net, inputs)?;
    let k = probs.shape()[1];
    Ok(probs.data().chunks(k).map(argmax).collect())
}

/// Per-pixel argmax labels of an ROI network.
pub fn predict_masks(roi: &Network, samples: &[Sample]) -> Result<Vec<LabelMask>> {
    let mut masks = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(INFER_CHUNK) {
        let scores = roi.infer(&batch_images(chunk)?)?;
        let (n, k, h, w) = scores.dims4()?;
        let plane = h * w;
        let d = scores.data();
        for b in 0..n {
            let labels = (0..plane)
                .map(|px| {
                    let fiber: Vec<f64> = (0..k).map(|c| d[(b * k + c) * plane + px]).collect();
                    argmax(&fiber) as u8
                })
                .collect();
            masks.push(LabelMask::new(h, w, labels)?);
        }
    }
    Ok(masks)
}

/// Evaluates `net` on `test`.
///
/// Classification accepts any network with 3-channel image input (plain or fused);
/// segmentation expects an ROI network. Pixel counts are pooled over the whole set.
pub fn evaluate(net: &Network, test: &Dataset, mode: EvalMode) -> Result<MetricsReport> {
    if test.is_empty() {
        return Err(Error::Contract("evaluation on an empty test set".into()));
    }
    match mode {
        EvalMode::Classification => {
            if net.spec().input_channels != 3 {
                return Err(Error::Config(format!(
                    "network {} takes {} channels; evaluate the fused network instead",
                    net.spec().name,
                    net.spec().input_channels
                )));
            }
            let pred = predict_labels(net, &batch_images(&test.samples)?)?;
            Ok(MetricsReport::classification(confusion_matrix(
                &pred,
                &test.labels(),
                net.spec().classes,
            )?))
        }
        EvalMode::Segmentation => {
            let masks = predict_masks(net, &test.samples)?;
            let mut counts = PixelCounts::new(ROI_CLASSES);
            for (p, s) in masks.iter().zip(&test.samples) {
                counts.add(p, &s.mask)?;
            }
            Ok(MetricsReport::segmentation(&counts, test.len()))
        }
    }
}

/// Networks and reports of one full run of the three stages plus the plain comparison.
pub struct PipelineOutcome {
    pub roi: Network,
    pub cls: Network,
    pub fused: Network,
    pub plain: Network,
    pub segmentation: MetricsReport,
    pub fused_report: MetricsReport,
    pub plain_report: MetricsReport,
    pub logs: Vec<TrainLog>,
}

/// Seeds of the four networks, derived from the training seed.
pub fn init_seeds(seed: u64) -> [u64; 3] {
    [stage_seed(seed, "init-roi"), stage_seed(seed, "init-cls"), stage_seed(seed, "init-plain")]
}

/// Runs Stage A, B and C plus the plain comparison classifier and evaluates all on `test`.
pub fn run_pipeline(train: &Dataset, test: &Dataset, cfg: &TrainConfig) -> Result<PipelineOutcome> {
    cfg.validate()?;
    let size = train
        .samples
        .first()
        .ok_or_else(|| Error::Data("empty training set".into()))?
        .mask
        .height();
    let [s_roi, s_cls, s_plain] = init_seeds(cfg.seed);
    let mut logs = Vec::new();

    let mut roi = Network::init(network::roi_spec(), s_roi)?;
    logs.push(train_roi_stage(&mut roi, train, cfg)?);
    let segmentation = evaluate(&roi, test, EvalMode::Segmentation)?;

    let mut cls = Network::init(network::classifier_spec(6, NUM_CLASSES, size)?, s_cls)?;
    logs.push(train_cls_stage(&mut cls, &roi, train, cfg)?);

    let mut fused = network::fuse(&roi, &cls)?;
    logs.push(train_end_to_end(&mut fused, train, cfg)?);
    let fused_report = evaluate(&fused, test, EvalMode::Classification)?;

    let mut plain = Network::init(network::classifier_spec(3, NUM_CLASSES, size)?, s_plain)?;
    logs.extend(train_plain_classifier(&mut plain, train, cfg)?);
    let plain_report = evaluate(&plain, test, EvalMode::Classification)?;

    Ok(PipelineOutcome {
        roi,
        cls,
        fused,
        plain,
        segmentation,
        fused_report,
        plain_report,
        logs,
    })
}
