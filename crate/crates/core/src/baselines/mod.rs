//! Comparison methods: color clustering with handcrafted features, multiscale
//! deep features with Fisher vector pooling, and bilinear pooling. Each ends in a
//! one-vs-rest linear classifier.

mod deep;
mod gmm;
mod handcrafted;
mod svm;

use std::fmt;
use std::str::FromStr;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use deep::{
    bilinear_pool, bilinear_pool_raw, default_scales, extract_deep_features, extract_deep_features_batch, fibers,
    resize_bilinear, scaled_extent, FeatureTap, MIN_EXTENT,
};
pub use gmm::{fisher_encode, fisher_encode_raw, gmm_fit, power_l2_normalize, GmmFit, GmmModel, WEIGHT_FLOOR};
pub use handcrafted::{
    cluster_segment, lbp_codes, mean_disease_color, region_features, BLOCK_DIM, LBP_BINS, MIN_REGION_PIXELS,
    REGION_FEATURE_DIM, RGB_BINS,
};
pub use svm::{train_linear_classifier, LinearClassifier, Standardizer, SvmConfig};

use crate::data::{batch_images, Dataset, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::metrics::confusion_matrix;
use crate::network::{Network, BLOCK3_TAP};
use crate::train::MetricsReport;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Clustering,
    Mdfep,
    Bilinear,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Clustering, Method::Mdfep, Method::Bilinear];

    pub fn name(self) -> &'static str {
        match self {
            Method::Clustering => "clustering",
            Method::Mdfep => "mdfep",
            Method::Bilinear => "bilinear",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown baseline method {s:?} (expected clustering, mdfep or bilinear)")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineConfig {
    pub svm: SvmConfig,
    /// Candidate color-distance thresholds; the best on the training split is kept.
    pub thresholds: Vec<f64>,
    pub gmm_components: usize,
    pub gmm_iterations: usize,
    /// Training descriptors used to fit the mixture (a seeded subsample).
    pub gmm_max_descriptors: usize,
    pub scales: Vec<f64>,
    pub tap_layer: String,
    pub seed: u64,
}

/// `count` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![lo],
        _ => (0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect(),
    }
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            svm: SvmConfig::default(),
            thresholds: linspace(0.05, 0.8, 16),
            gmm_components: 16,
            gmm_iterations: 30,
            gmm_max_descriptors: 40_000,
            scales: default_scales(),
            tap_layer: BLOCK3_TAP.to_string(),
            seed: 20190101,
        }
    }
}

/// Trained networks the deep baselines draw on.
#[derive(Clone, Copy, Default)]
pub struct BaselineNets<'a> {
    /// 3-channel classifier, tapped by the multiscale Fisher baseline.
    pub plain: Option<&'a Network>,
    /// Stage-B classifier and its frozen ROI network, tapped by the bilinear baseline.
    pub stage_b: Option<(&'a Network, &'a Network)>,
}

fn fit_and_score(
    train_x: &[Vec<f64>],
    train_y: &[usize],
    test_x: &[Vec<f64>],
    test_y: &[usize],
    svm: &SvmConfig,
) -> Result<MetricsReport> {
    let scaler = Standardizer::fit(train_x)?;
    let model = train_linear_classifier(&scaler.transform_all(train_x), train_y, NUM_CLASSES, svm)?;
    let pred = model.predict_all(&scaler.transform_all(test_x))?;
    Ok(MetricsReport::classification(confusion_matrix(&pred, test_y, NUM_CLASSES)?))
}

fn clustering_features(ds: &Dataset, color: [f64; 3], threshold: f64) -> Result<Vec<Vec<f64>>> {
    ds.samples
        .iter()
        .map(|s| region_features(&s.image, &cluster_segment(&s.image, color, threshold)?))
        .collect()
}

fn run_clustering(train: &Dataset, test: &Dataset, cfg: &BaselineConfig) -> Result<MetricsReport> {
    let color = mean_disease_color(&train.samples)?;
    let ty = train.labels();
    let mut best: Option<(f64, f64)> = None;
    for &t in &cfg.thresholds {
        let x = clustering_features(train, color, t)?;
        let acc = fit_and_score(&x, &ty, &x, &ty, &cfg.svm)?.accuracy.unwrap_or(0.0);
        if best.is_none_or(|(_, b)| acc > b) {
            best = Some((t, acc));
        }
    }
    let (threshold, train_acc) = best.ok_or_else(|| Error::Config("no clustering thresholds configured".into()))?;
    info!("clustering: threshold {threshold:.3} (training accuracy {train_acc:.4})");
    fit_and_score(
        &clustering_features(train, color, threshold)?,
        &ty,
        &clustering_features(test, color, threshold)?,
        &test.labels(),
        &cfg.svm,
    )
}

fn descriptor_sets(ds: &Dataset, tap: &FeatureTap, scales: &[f64]) -> Result<Vec<Vec<Vec<f64>>>> {
    let images: Vec<&crate::tensor::Tensor> = ds.samples.iter().map(|s| &s.image).collect();
    extract_deep_features_batch(&images, tap, scales)
}

fn run_mdfep(train: &Dataset, test: &Dataset, net: &Network, cfg: &BaselineConfig) -> Result<MetricsReport> {
    let tap = FeatureTap::new(net, None, &cfg.tap_layer)?;
    let train_sets = descriptor_sets(train, &tap, &cfg.scales)?;
    let test_sets = descriptor_sets(test, &tap, &cfg.scales)?;
    let mut pool: Vec<&Vec<f64>> = train_sets.iter().flatten().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    pool.shuffle(&mut rng);
    pool.truncate(cfg.gmm_max_descriptors);
    let pool: Vec<Vec<f64>> = pool.into_iter().cloned().collect();
    let fit = gmm_fit(&pool, cfg.gmm_components, cfg.gmm_iterations, cfg.seed)?;
    info!(
        "mdfep: {} descriptors, final log-likelihood {:.3}",
        pool.len(),
        fit.log_likelihood.last().copied().unwrap_or(f64::NAN)
    );
    let encode = |sets: &[Vec<Vec<f64>>]| -> Result<Vec<Vec<f64>>> {
        sets.iter().map(|s| fisher_encode(s, &fit.model)).collect()
    };
    fit_and_score(&encode(&train_sets)?, &train.labels(), &encode(&test_sets)?, &test.labels(), &cfg.svm)
}

fn bilinear_features(ds: &Dataset, tap: &FeatureTap) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(ds.len());
    for chunk in ds.samples.chunks(16) {
        let maps = tap.maps(&batch_images(chunk)?)?;
        for b in 0..chunk.len() {
            let m = maps.sample(b)?;
            let shape = m.shape()[1..].to_vec();
            let m = m.reshape(&shape)?;
            out.push(bilinear_pool(&m, &m)?);
        }
    }
    Ok(out)
}

fn run_bilinear(train: &Dataset, test: &Dataset, cls: &Network, roi: &Network, cfg: &BaselineConfig) -> Result<MetricsReport> {
    let tap = FeatureTap::new(cls, Some(roi), &cfg.tap_layer)?;
    fit_and_score(
        &bilinear_features(train, &tap)?,
        &train.labels(),
        &bilinear_features(test, &tap)?,
        &test.labels(),
        &cfg.svm,
    )
}

/// Feature extraction on `train`, classifier training, evaluation on `test`.
pub fn run_baseline(
    method: Method,
    train: &Dataset,
    test: &Dataset,
    nets: BaselineNets,
    cfg: &BaselineConfig,
) -> Result<MetricsReport> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::Contract("baselines need non-empty train and test splits".into()));
    }
    match method {
        Method::Clustering => run_clustering(train, test, cfg),
        Method::Mdfep => {
            let net = nets
                .plain
                .ok_or_else(|| Error::Config("the mdfep baseline needs a trained 3-channel classifier".into()))?;
            run_mdfep(train, test, net, cfg)
        }
        Method::Bilinear => {
            let (cls, roi) = nets
                .stage_b
                .ok_or_else(|| Error::Config("the bilinear baseline needs the Stage-B classifier and ROI network".into()))?;
            run_bilinear(train, test, cls, roi, cfg)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!(matches!("sift".parse::<Method>(), Err(Error::Config(_))));
    }

    #[test]
    fn threshold_sweep_has_sixteen_values() {
        let t = BaselineConfig::default().thresholds;
        assert_eq!(t.len(), 16);
        assert_eq!((t[0], t[15]), (0.05, 0.8));
    }

    #[test]
    fn deep_baselines_need_networks() {
        let ds = crate::data::gen_dataset(&crate::data::GenConfig {
            size: 32,
            counts: [1, 1, 1],
            ..Default::default()
        })
        .unwrap();
        for m in [Method::Mdfep, Method::Bilinear] {
            let err = run_baseline(m, &ds, &ds, BaselineNets::default(), &BaselineConfig::default()).unwrap_err();
            assert!(matches!(err, Error::Config(_)));
        }
    }
}
