//! Plain-text `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Absent keys keep their defaults;
//! unknown keys are rejected. Lists are comma separated.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::baselines::BaselineConfig;
use crate::data::GenConfig;
use crate::error::{Error, Result};
use crate::train::{ClassWeightMode, RoiSource, TrainConfig};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub gen: GenConfig,
    pub train: TrainConfig,
    pub baseline: BaselineConfig,
}

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("gen.seed", "master seed of the scene generator"),
    ("gen.size", "image width and height in pixels (multiple of 16)"),
    ("gen.counts", "samples per class: normal,blotch,spot"),
    ("gen.clutter", "mean number of distractor leaves per scene"),
    ("gen.distractor_spot_prob", "probability that a distractor leaf has lesions"),
    ("gen.blotch_overlap", "blend of blotch colors toward leaf greens, 0..1"),
    ("gen.spot_count", "lesions per diseased leaf: min,max"),
    ("gen.blotch_radius", "blotch lesion radius in pixels: min,max"),
    ("gen.spot_radius", "spot lesion radius in pixels: min,max"),
    ("gen.pixel_noise", "standard deviation of additive pixel noise"),
    ("train.seed", "seed for initialization, splitting and batch order"),
    ("train.split_ratio", "fraction of each class used for training"),
    ("train.batch_size", "mini-batch size"),
    ("train.momentum", "SGD momentum in [0, 1)"),
    ("train.clip_norm", "bound on the L2 norm of each batch gradient, 0 = off"),
    ("train.roi_epochs", "Stage A epochs"),
    ("train.roi_lr", "Stage A learning rate"),
    ("train.cls_epochs", "Stage B epochs"),
    ("train.cls_lr", "Stage B learning rate"),
    ("train.e2e_epochs", "Stage C epochs"),
    ("train.e2e_lr", "Stage C learning rate"),
    ("train.class_weights", "pixel-loss weighting: inverse or uniform"),
    ("train.roi_source", "Stage B ROI channels: predicted or ground_truth"),
    ("baseline.seed", "seed for descriptor subsampling and mixture seeding"),
    ("baseline.svm_lambda", "L2 regularization of the linear classifier"),
    ("baseline.svm_epochs", "subgradient iterations of the linear classifier"),
    ("baseline.svm_step", "initial subgradient step size"),
    ("baseline.thresholds", "color-distance thresholds swept by the clustering baseline"),
    ("baseline.gmm_components", "mixture components for Fisher encoding"),
    ("baseline.gmm_iterations", "EM iterations"),
    ("baseline.gmm_max_descriptors", "descriptors sampled to fit the mixture"),
    ("baseline.scales", "image scales for multiscale descriptors"),
    ("baseline.tap_layer", "classifier layer tapped for deep descriptors"),
];

fn parse<T: std::str::FromStr>(key: &str, v: &str, line: usize) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("line {line}: cannot parse {key} = {v:?}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str, line: usize) -> Result<Vec<T>> {
    v.split(',').map(|p| parse(key, p.trim(), line)).collect()
}

fn parse_pair<T: std::str::FromStr + Copy>(key: &str, v: &str, line: usize) -> Result<(T, T)> {
    match parse_list::<T>(key, v, line)?.as_slice() {
        [a, b] => Ok((*a, *b)),
        _ => Err(Error::Config(format!("line {line}: {key} needs two values"))),
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Sets every seed at once.
    pub fn set_seed(&mut self, seed: u64) {
        self.gen.seed = seed;
        self.train.seed = seed;
        self.baseline.seed = seed;
    }

    pub fn set(&mut self, key: &str, v: &str, line: usize) -> Result<()> {
        let (g, t, b) = (&mut self.gen, &mut self.train, &mut self.baseline);
        match key {
            "gen.seed" => g.seed = parse(key, v, line)?,
            "gen.size" => g.size = parse(key, v, line)?,
            "gen.counts" => {
                g.counts = parse_list::<usize>(key, v, line)?
                    .try_into()
                    .map_err(|_| Error::Config(format!("line {line}: gen.counts needs three values")))?
            }
            "gen.clutter" => g.clutter = parse(key, v, line)?,
            "gen.distractor_spot_prob" => g.distractor_spot_prob = parse(key, v, line)?,
            "gen.blotch_overlap" => g.blotch_overlap = parse(key, v, line)?,
            "gen.spot_count" => g.spot_count = parse_pair(key, v, line)?,
            "gen.blotch_radius" => g.blotch_radius = parse_pair(key, v, line)?,
            "gen.spot_radius" => g.spot_radius = parse_pair(key, v, line)?,
            "gen.pixel_noise" => g.pixel_noise = parse(key, v, line)?,
            "train.seed" => t.seed = parse(key, v, line)?,
            "train.split_ratio" => t.split_ratio = parse(key, v, line)?,
            "train.batch_size" => t.batch_size = parse(key, v, line)?,
            "train.momentum" => t.momentum = parse(key, v, line)?,
            "train.clip_norm" => t.clip_norm = parse(key, v, line)?,
            "train.roi_epochs" => t.roi.epochs = parse(key, v, line)?,
            "train.roi_lr" => t.roi.learning_rate = parse(key, v, line)?,
            "train.cls_epochs" => t.cls.epochs = parse(key, v, line)?,
            "train.cls_lr" => t.cls.learning_rate = parse(key, v, line)?,
            "train.e2e_epochs" => t.e2e.epochs = parse(key, v, line)?,
            "train.e2e_lr" => t.e2e.learning_rate = parse(key, v, line)?,
            "train.class_weights" => {
                t.class_weights = match v {
                    "inverse" => ClassWeightMode::InverseFrequency,
                    "uniform" => ClassWeightMode::Uniform,
                    _ => return Err(Error::Config(format!("line {line}: class_weights must be inverse or uniform"))),
                }
            }
            "train.roi_source" => {
                t.roi_source = match v {
                    "predicted" => RoiSource::Predicted,
                    "ground_truth" => RoiSource::GroundTruth,
                    _ => {
                        return Err(Error::Config(format!(
                            "line {line}: roi_source must be predicted or ground_truth"
                        )))
                    }
                }
            }
            "baseline.seed" => b.seed = parse(key, v, line)?,
            "baseline.svm_lambda" => b.svm.lambda = parse(key, v, line)?,
            "baseline.svm_epochs" => b.svm.epochs = parse(key, v, line)?,
            "baseline.svm_step" => b.svm.step = parse(key, v, line)?,
            "baseline.thresholds" => b.thresholds = parse_list(key, v, line)?,
            "baseline.gmm_components" => b.gmm_components = parse(key, v, line)?,
            "baseline.gmm_iterations" => b.gmm_iterations = parse(key, v, line)?,
            "baseline.gmm_max_descriptors" => b.gmm_max_descriptors = parse(key, v, line)?,
            "baseline.scales" => b.scales = parse_list(key, v, line)?,
            "baseline.tap_layer" => b.tap_layer = v.to_string(),
            _ => return Err(Error::Config(format!("line {line}: unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            cfg.set(k.trim(), v.trim(), i + 1)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        self.train.validate()?;
        if self.baseline.gmm_components == 0 || self.baseline.scales.is_empty() || self.baseline.thresholds.is_empty() {
            return Err(Error::Config("baseline needs components, scales and thresholds".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        RunConfig::parse(&fs::read_to_string(path)?)
    }

    /// Every key with its current value, preceded by its description.
    pub fn to_text(&self) -> String {
        let (g, t, b) = (&self.gen, &self.train, &self.baseline);
        let value = |key: &str| -> String {
            match key {
                "gen.seed" => g.seed.to_string(),
                "gen.size" => g.size.to_string(),
                "gen.counts" => join(&g.counts),
                "gen.clutter" => g.clutter.to_string(),
                "gen.distractor_spot_prob" => g.distractor_spot_prob.to_string(),
                "gen.blotch_overlap" => g.blotch_overlap.to_string(),
                "gen.spot_count" => join(&[g.spot_count.0, g.spot_count.1]),
                "gen.blotch_radius" => join(&[g.blotch_radius.0, g.blotch_radius.1]),
                "gen.spot_radius" => join(&[g.spot_radius.0, g.spot_radius.1]),
                "gen.pixel_noise" => g.pixel_noise.to_string(),
                "train.seed" => t.seed.to_string(),
                "train.split_ratio" => t.split_ratio.to_string(),
                "train.batch_size" => t.batch_size.to_string(),
                "train.momentum" => t.momentum.to_string(),
                "train.clip_norm" => t.clip_norm.to_string(),
                "train.roi_epochs" => t.roi.epochs.to_string(),
                "train.roi_lr" => t.roi.learning_rate.to_string(),
                "train.cls_epochs" => t.cls.epochs.to_string(),
                "train.cls_lr" => t.cls.learning_rate.to_string(),
                "train.e2e_epochs" => t.e2e.epochs.to_string(),
                "train.e2e_lr" => t.e2e.learning_rate.to_string(),
                "train.class_weights" => match t.class_weights {
                    ClassWeightMode::InverseFrequency => "inverse".into(),
                    ClassWeightMode::Uniform => "uniform".into(),
                },
                "train.roi_source" => match t.roi_source {
                    RoiSource::Predicted => "predicted".into(),
                    RoiSource::GroundTruth => "ground_truth".into(),
                },
                "baseline.seed" => b.seed.to_string(),
                "baseline.svm_lambda" => b.svm.lambda.to_string(),
                "baseline.svm_epochs" => b.svm.epochs.to_string(),
                "baseline.svm_step" => b.svm.step.to_string(),
                "baseline.thresholds" => join(&b.thresholds),
                "baseline.gmm_components" => b.gmm_components.to_string(),
                "baseline.gmm_iterations" => b.gmm_iterations.to_string(),
                "baseline.gmm_max_descriptors" => b.gmm_max_descriptors.to_string(),
                "baseline.scales" => join(&b.scales),
                "baseline.tap_layer" => b.tap_layer.clone(),
                _ => unreachable!("key table and serializer out of sync: {key}"),
            }
        };
        let mut out = String::new();
        for (key, doc) in KEYS {
            let _ = writeln!(out, "# {doc}\n{key} = {}", value(key));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn overrides_apply() {
        let cfg = RunConfig::parse("# comment\ntrain.roi_epochs = 3\ngen.counts = 4, 5, 6 # trailing\n\n").unwrap();
        assert_eq!(cfg.train.roi.epochs, 3);
        assert_eq!(cfg.gen.counts, [4, 5, 6]);
    }

    #[test]
    fn unknown_and_malformed_keys() {
        assert!(matches!(RunConfig::parse("train.warmup = 3"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("train.roi_epochs"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("train.roi_epochs = many"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("gen.size = 100"), Err(Error::Config(_))));
    }

    #[test]
    fn every_key_is_documented_and_settable() {
        let text = RunConfig::default().to_text();
        for (key, _) in KEYS {
            assert!(text.contains(&format!("{key} = ")), "{key}");
        }
    }
}
