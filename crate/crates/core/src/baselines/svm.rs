use crate::error::{Error, Result};
use crate::metrics::argmax;

/// Hyperparameters of the one-vs-rest hinge-loss classifier.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SvmConfig {
    pub lambda: f64,
    pub epochs: usize,
    /// Initial step; step `t` uses `step / √t`.
    pub step: f64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            lambda: 1e-3,
            epochs: 300,
            step: 0.5,
        }
    }
}

/// One weight vector and bias per class; prediction is the argmax score.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearClassifier {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl LinearClassifier {
    pub fn dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::dim("LinearClassifier::scores", &[self.dim()], &[x.len()]));
        }
        Ok(self
            .weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| dot(w, x) + b)
            .collect())
    }

    /// Ties resolve to the lowest class index.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.scores(x)?))
    }

    pub fn predict_all(&self, xs: &[Vec<f64>]) -> Result<Vec<usize>> {
        xs.iter().map(|x| self.predict(x)).collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One-vs-rest L2-regularized hinge loss, minimized by full-batch proximal
/// subgradient steps: `w ← (w − η·g) / (1 + η·λ)` with an unregularized bias.
///
/// Fully deterministic: no sampling is involved.
pub fn train_linear_classifier(
    features: &[Vec<f64>],
    labels: &[usize],
    classes: usize,
    cfg: &SvmConfig,
) -> Result<LinearClassifier> {
    if features.len() != labels.len() || features.is_empty() {
        return Err(Error::dim("train_linear_classifier", &[features.len()], &[labels.len()]));
    }
    let dim = features[0].len();
    if let Some(bad) = features.iter().find(|f| f.len() != dim) {
        return Err(Error::dim("train_linear_classifier", &[dim], &[bad.len()]));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::Contract(format!("label {bad} outside [0, {classes})")));
    }
    let first = labels[0];
    if labels.iter().all(|&y| y == first) {
        return Err(Error::Contract("linear classifier needs at least two classes".into()));
    }
    if !(cfg.lambda >= 0.0 && cfg.step > 0.0) {
        return Err(Error::Config(format!("invalid SVM settings {cfg:?}")));
    }
    let n = features.len() as f64;
    let mut model = LinearClassifier {
        weights: vec![vec![0.0; dim]; classes],
        bias: vec![0.0; classes],
    };
    let mut grad = vec![0.0; dim];
    for (c, (w, b)) in model.weights.iter_mut().zip(&mut model.bias).enumerate() {
        for t in 1..=cfg.epochs {
            let eta = cfg.step / (t as f64).sqrt();
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut gb = 0.0;
            for (x, &label) in features.iter().zip(labels) {
                let y = if label == c { 1.0 } else { -1.0 };
                if y * (dot(w, x) + *b) < 1.0 {
                    for (g, xv) in grad.iter_mut().zip(x) {
                        *g -= y * xv;
                    }
                    gb -= y;
                }
            }
            let shrink = 1.0 / (1.0 + eta * cfg.lambda);
            for (wv, g) in w.iter_mut().zip(&grad) {
                *wv = (*wv - eta * g / n) * shrink;
            }
            *b -= eta * gb / n;
        }
    }
    Ok(model)
}

/// Per-dimension standardization fitted on training features.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(features: &[Vec<f64>]) -> Result<Self> {
        let first = features
            .first()
            .ok_or_else(|| Error::Contract("standardizer needs at least one sample".into()))?;
        let (n, d) = (features.len() as f64, first.len());
        let mut mean = vec![0.0; d];
        for f in features {
            if f.len() != d {
                return Err(Error::dim("Standardizer::fit", &[d], &[f.len()]));
            }
            mean.iter_mut().zip(f).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for f in features {
            for ((s, v), m) in var.iter_mut().zip(f).zip(&mean) {
                *s += (v - m).powi(2);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    1.0 / sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Standardizer { mean, scale })
    }

    pub fn transform(&self, f: &[f64]) -> Vec<f64> {
        f.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) * s)
            .collect()
    }

    pub fn transform_all(&self, fs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        fs.iter().map(|f| self.transform(f)).collect()
    }
}
