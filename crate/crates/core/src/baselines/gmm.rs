//! Diagonal-covariance Gaussian mixtures and Fisher vector encoding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Mixture weights are kept at or above this value.
pub const WEIGHT_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
}

/// A fitted model with the total log-likelihood recorded before each M-step.
#[derive(Clone, Debug, PartialEq)]
pub struct GmmFit {
    pub model: GmmModel,
    pub log_likelihood: Vec<f64>,
}

impl GmmModel {
    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    /// `ln(w_k) + ln N(x | μ_k, diag σ²_k)` for every component.
    fn joint_log(&self, x: &[f64], out: &mut [f64]) {
        let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        for (k, o) in out.iter_mut().enumerate() {
            let mut s = self.weights[k].ln();
            for ((xv, m), v) in x.iter().zip(&self.means[k]).zip(&self.variances[k]) {
                s -= half_log_2pi + 0.5 * v.ln() + 0.5 * (xv - m).powi(2) / v;
            }
            *o = s;
        }
    }

    /// Posterior responsibilities of `x` (written to `out`) and `ln p(x)`.
    fn posteriors(&self, x: &[f64], out: &mut [f64]) -> f64 {
        self.joint_log(x, out);
        let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = out.iter().map(|l| (l - max).exp()).sum();
        let log_px = max + total.ln();
        for o in out.iter_mut() {
            *o = (*o - log_px).exp();
        }
        log_px
    }

    /// Total log-likelihood `Σ_n ln p(x_n)`.
    pub fn log_likelihood(&self, xs: &[Vec<f64>]) -> f64 {
        let mut buf = vec![0.0; self.components()];
        xs.iter().map(|x| self.posteriors(x, &mut buf)).sum()
    }
}

fn check_descriptors(xs: &[Vec<f64>]) -> Result<usize> {
    let d = xs.first().map_or(0, Vec::len);
    if let Some(bad) = xs.iter().find(|x| x.len() != d) {
        return Err(Error::dim("descriptors", &[d], &[bad.len()]));
    }
    Ok(d)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// k-means++ style seeding: first center uniform, then proportional to squared distance.
fn seed_centers(xs: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut centers = vec![xs[rng.random_range(0..xs.len())].clone()];
    let mut d2: Vec<f64> = xs.iter().map(|x| sq_dist(x, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut idx = xs.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    idx = i;
                    break;
                }
                r -= d;
            }
            idx
        } else {
            rng.random_range(0..xs.len())
        };
        centers.push(xs[pick].clone());
        for (d, x) in d2.iter_mut().zip(xs) {
            *d = d.min(sq_dist(x, &centers[centers.len() - 1]));
        }
    }
    centers
}

/// Variance floor per dimension: a small fraction of the data variance.
fn variance_floor(xs: &[Vec<f64>], d: usize) -> Vec<f64> {
    let n = xs.len() as f64;
    (0..d)
        .map(|j| {
            let m = xs.iter().map(|x| x[j]).sum::<f64>() / n;
            let v = xs.iter().map(|x| (x[j] - m).powi(2)).sum::<f64>() / n;
            (1e-3 * v).max(1e-6)
        })
        .collect()
}

/// Weighted M-step given responsibilities `resp[n][k]`.
fn m_step(xs: &[Vec<f64>], resp: &[Vec<f64>], prev: Option<&GmmModel>, floor: &[f64], k: usize) -> GmmModel {
    let d = floor.len();
    let mut mass = vec![0.0; k];
    let mut means = vec![vec![0.0; d]; k];
    for (x, r) in xs.iter().zip(resp) {
        for c in 0..k {
            mass[c] += r[c];
            for (m, xv) in means[c].iter_mut().zip(x) {
                *m += r[c] * xv;
            }
        }
    }
    let mut variances = vec![vec![0.0; d]; k];
    for c in 0..k {
        if mass[c] > 0.0 {
            means[c].iter_mut().for_each(|m| *m /= mass[c]);
        }
    }
    for (x, r) in xs.iter().zip(resp) {
        for c in 0..k {
            for ((v, xv), m) in variances[c].iter_mut().zip(x).zip(&means[c]) {
                *v += r[c] * (xv - m).powi(2);
            }
        }
    }
    let n = xs.len() as f64;
    let mut weights = vec![0.0; k];
    for c in 0..k {
        if mass[c] > 1e-300 {
            for (v, f) in variances[c].iter_mut().zip(floor) {
                *v = (*v / mass[c]).max(*f);
            }
        } else if let Some(p) = prev {
            // an empty component keeps its shape; its likelihood term is zero anyway
            means[c] = p.means[c].clone();
            variances[c] = p.variances[c].clone();
        } else {
            variances[c] = floor.to_vec();
        }
        weights[c] = (mass[c] / n).max(WEIGHT_FLOOR);
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    GmmModel {
        weights,
        means,
        variances,
    }
}

/// Expectation-maximization for a `k`-component diagonal GMM.
///
/// Initialized from a k-means++ seeding and a hard-assignment M-step. The
/// variance floor is applied in every M-step.
pub fn gmm_fit(xs: &[Vec<f64>], k: usize, iterations: usize, seed: u64) -> Result<GmmFit> {
    if k == 0 || xs.len() < k {
        return Err(Error::Contract(format!(
            "gmm_fit needs at least {k} descriptors (and k >= 1), got {}",
            xs.len()
        )));
    }
    let d = check_descriptors(xs)?;
    let floor = variance_floor(xs, d);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = seed_centers(xs, k, &mut rng);
    let hard: Vec<Vec<f64>> = xs
        .iter()
        .map(|x| {
            let mut best = 0;
            for c in 1..k {
                if sq_dist(x, &centers[c]) < sq_dist(x, &centers[best]) {
                    best = c;
                }
            }
            (0..k).map(|c| if c == best { 1.0 } else { 0.0 }).collect()
        })
        .collect();
    let mut model = m_step(xs, &hard, None, &floor, k);
    for (m, c) in model.means.iter_mut().zip(&centers) {
        if m.iter().all(|v| *v == 0.0) {
            *m = c.clone();
        }
    }
    let mut history = Vec::with_capacity(iterations);
    let mut resp = vec![vec![0.0; k]; xs.len()];
    for _ in 0..iterations {
        let ll: f64 = xs.iter().zip(&mut resp).map(|(x, r)| model.posteriors(x, r)).sum();
        history.push(ll);
        model = m_step(xs, &resp, Some(&model), &floor, k);
    }
    Ok(GmmFit {
        model,
        log_likelihood: history,
    })
}

/// Unnormalized Fisher vector: for each component the mean block
/// `(1/(T√w)) Σ γ (x−μ)/σ`, then the variance block
/// `(1/(T√(2w))) Σ γ ((x−μ)²/σ² − 1)`. Dimension `2·K·D`.
pub fn fisher_encode_raw(xs: &[Vec<f64>], gmm: &GmmModel) -> Result<Vec<f64>> {
    let (k, d) = (gmm.components(), gmm.dim());
    if xs.is_empty() {
        return Err(Error::Contract("fisher encoding of an empty descriptor set".into()));
    }
    if let Some(bad) = xs.iter().find(|x| x.len() != d) {
        return Err(Error::dim("fisher_encode", &[d], &[bad.len()]));
    }
    let mut out = vec![0.0; 2 * k * d];
    let mut post = vec![0.0; k];
    for x in xs {
        gmm.posteriors(x, &mut post);
        for c in 0..k {
            let g = post[c];
            if g == 0.0 {
                continue;
            }
            let (mu_block, var_block) = out[2 * c * d..2 * (c + 1) * d].split_at_mut(d);
            for j in 0..d {
                let sd = gmm.variances[c][j].sqrt();
                let z = (x[j] - gmm.means[c][j]) / sd;
                mu_block[j] += g * z;
                var_block[j] += g * (z * z - 1.0);
            }
        }
    }
    let t = xs.len() as f64;
    for c in 0..k {
        let w = gmm.weights[c];
        let (mu_block, var_block) = out[2 * c * d..2 * (c + 1) * d].split_at_mut(d);
        mu_block.iter_mut().for_each(|v| *v /= t * w.sqrt());
        var_block.iter_mut().for_each(|v| *v /= t * (2.0 * w).sqrt());
    }
    Ok(out)
}

/// Signed square root followed by L2 normalization; a zero vector is left as is.
pub fn power_l2_normalize(v: &mut [f64]) {
    for x in v.iter_mut() {
        *x = x.signum() * x.abs().sqrt();
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Normalized Fisher vector.
pub fn fisher_encode(xs: &[Vec<f64>], gmm: &GmmModel) -> Result<Vec<f64>> {
    let mut v = fisher_encode_raw(xs, gmm)?;
    power_l2_normalize(&mut v);
    Ok(v)
}
