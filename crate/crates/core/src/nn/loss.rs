//! Softmax normalizations and the log losses built on them.

use crate::autodiff::{Backward, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Lower clamp applied to every log argument.
pub const LOG_FLOOR: f64 = 1e-12;

/// Softmax over `count` values spaced `stride` apart starting at `base`.
fn softmax_strided(src: &[f64], dst: &mut [f64], base: usize, count: usize, stride: usize) {
    let mut max = f64::NEG_INFINITY;
    for k in 0..count {
        max = max.max(src[base + k * stride]);
    }
    let mut total = 0.0;
    for k in 0..count {
        let e = (src[base + k * stride] - max).exp();
        dst[base + k * stride] = e;
        total += e;
    }
    for k in 0..count {
        dst[base + k * stride] /= total;
    }
}

/// Backward of softmax along the same strided fiber: `dz = p ⊙ (g − Σ g·p)`.
fn softmax_strided_backward(p: &[f64], g: &[f64], dz: &mut [f64], base: usize, count: usize, stride: usize) {
    let mut dot = 0.0;
    for k in 0..count {
        let i = base + k * stride;
        dot += g[i] * p[i];
    }
    for k in 0..count {
        let i = base + k * stride;
        dz[i] = p[i] * (g[i] - dot);
    }
}

/// Fibers of a softmax: (outer count, classes, inner stride).
#[derive(Clone, Copy)]
struct Fibers {
    outer: usize,
    classes: usize,
    inner: usize,
}

impl Fibers {
    fn for_each(&self, mut f: impl FnMut(usize)) {
        for o in 0..self.outer {
            for i in 0..self.inner {
                f(o * self.classes * self.inner + i);
            }
        }
    }
}

struct SoftmaxRule(Fibers);

impl Backward for SoftmaxRule {
    fn backward(&self, _: &Tape, _: &[Var], output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let p = output.data();
        let mut dz = vec![0.0; p.len()];
        let fib = self.0;
        fib.for_each(|base| softmax_strided_backward(p, grad, &mut dz, base, fib.classes, fib.inner));
        vec![Some(dz)]
    }
}

fn softmax_along(tape: &mut Tape, x: Var, fib: Fibers, op: &'static str) -> Result<Var> {
    let xd = tape.value(x).data();
    let mut out = vec![0.0; xd.len()];
    fib.for_each(|base| softmax_strided(xd, &mut out, base, fib.classes, fib.inner));
    let out = Tensor::from_parts(tape.shape(x).to_vec(), out);
    tape.push(op, out, vec![x], SoftmaxRule(fib))
}

/// Softmax along the last axis, with max subtraction.
pub fn softmax(tape: &mut Tape, logits: Var) -> Result<Var> {
    tape.check(logits)?;
    let shape = tape.shape(logits);
    let classes = *shape
        .last()
        .ok_or_else(|| Error::Contract("softmax of a rank-0 tensor".into()))?;
    if classes < 2 {
        return Err(Error::Contract(format!("softmax needs at least 2 classes, got {classes}")));
    }
    let outer = shape[..shape.len() - 1].iter().product();
    softmax_along(tape, logits, Fibers { outer, classes, inner: 1 }, "softmax")
}

/// Per-pixel softmax over the channel axis of `N×K×H×W` scores.
pub fn channel_softmax(tape: &mut Tape, scores: Var) -> Result<Var> {
    tape.check(scores)?;
    let (n, k, h, w) = tape.value(scores).dims4()?;
    if k < 2 {
        return Err(Error::Contract(format!("softmax needs at least 2 classes, got {k}")));
    }
    softmax_along(
        tape,
        scores,
        Fibers {
            outer: n,
            classes: k,
            inner: h * w,
        },
        "channel_softmax",
    )
}

struct CrossEntropyRule {
    labels: Vec<usize>,
    classes: usize,
}

impl Backward for CrossEntropyRule {
    fn backward(&self, tape: &Tape, inputs: &[Var], _: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let p = tape.value(inputs[0]).data();
        let n = self.labels.len() as f64;
        let mut dp = vec![0.0; p.len()];
        for (i, &y) in self.labels.iter().enumerate() {
            let idx = i * self.classes + y;
            if p[idx] >= LOG_FLOOR {
                dp[idx] = -grad[0] / (n * p[idx]);
            }
        }
        vec![Some(dp)]
    }
}

/// Mean negative log-likelihood of `labels` under row-stochastic `probs[N×K]`.
pub fn cross_entropy(tape: &mut Tape, probs: Var, labels: &[usize]) -> Result<Var> {
    tape.check(probs)?;
    let (n, k) = match *tape.shape(probs) {
        [n, k] => (n, k),
        _ => return Err(Error::dim("cross_entropy", tape.shape(probs), &[labels.len(), 0])),
    };
    if n != labels.len() || n == 0 {
        return Err(Error::dim("cross_entropy", tape.shape(probs), &[labels.len()]));
    }
    if k < 2 {
        return Err(Error::Contract(format!("cross_entropy needs at least 2 classes, got {k}")));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::Contract(format!("label {bad} outside [0, {k})")));
    }
    let p = tape.value(probs).data();
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -p[i * k + y].max(LOG_FLOOR).ln())
        .sum();
    let rule = CrossEntropyRule {
        labels: labels.to_vec(),
        classes: k,
    };
    tape.push("cross_entropy", Tensor::scalar(total / n as f64), vec![probs], rule)
}

struct PixelLossRule {
    probs: Vec<f64>,
    labels: Vec<u8>,
    weights: Vec<f64>,
    classes: usize,
    plane: usize,
}

impl Backward for PixelLossRule {
    fn backward(&self, _: &Tape, _: &[Var], _: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (k, plane) = (self.classes, self.plane);
        let norm = grad[0] / self.labels.len() as f64;
        let mut ds = vec![0.0; self.probs.len()];
        for (i, &y) in self.labels.iter().enumerate() {
            let (b, px) = (i / plane, i % plane);
            let base = b * k * plane + px;
            let y = y as usize;
            if self.probs[base + y * plane] < LOG_FLOOR {
                continue;
            }
            let scale = norm * self.weights[y];
            for c in 0..k {
                let idx = base + c * plane;
                let target = if c == y { 1.0 } else { 0.0 };
                ds[idx] = scale * (self.probs[idx] - target);
            }
        }
        vec![Some(ds)]
    }
}

/// Class-weighted per-pixel softmax log loss, averaged over batch and pixels.
///
/// `labels` holds `N·H·W` class ids in row-major order; `class_weights` has one
/// entry per class.
pub fn pixel_softmax_loss(tape: &mut Tape, scores: Var, labels: &[u8], class_weights: &[f64]) -> Result<Var> {
    tape.check(scores)?;
    let (n, k, h, w) = tape.value(scores).dims4()?;
    if labels.len() != n * h * w {
        return Err(Error::dim("pixel_softmax_loss", tape.shape(scores), &[labels.len()]));
    }
    if k < 2 {
        return Err(Error::Contract(format!("pixel loss needs at least 2 classes, got {k}")));
    }
    if class_weights.len() != k {
        return Err(Error::dim("pixel_softmax_loss weights", &[k], &[class_weights.len()]));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y as usize >= k) {
        return Err(Error::Contract(format!("mask label {bad} outside [0, {k})")));
    }
    let plane = h * w;
    let sd = tape.value(scores).data();
    let mut probs = vec![0.0; sd.len()];
    let fib = Fibers {
        outer: n,
        classes: k,
        inner: plane,
    };
    fib.for_each(|base| softmax_strided(sd, &mut probs, base, k, plane));
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let (b, px) = (i / plane, i % plane);
        let p = probs[b * k * plane + y as usize * plane + px];
        total += class_weights[y as usize] * -p.max(LOG_FLOOR).ln();
    }
    let loss = Tensor::scalar(total / labels.len().max(1) as f64);
    let rule = PixelLossRule {
        probs,
        labels: labels.to_vec(),
        weights: class_weights.to_vec(),
        classes: k,
        plane,
    };
    tape.push("pixel_softmax_loss", loss, vec![scores], rule)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::zeros(&[1, 3]));
        let p = softmax(&mut tape, z).unwrap();
        for &v in tape.value(p).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let l = cross_entropy(&mut tape, p, &[1]).unwrap();
        assert!((tape.value(l).data()[0] - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::new(vec![1, 3], vec![0.0, 1.0, 0.0]).unwrap());
        let l = cross_entropy(&mut tape, p, &[1]).unwrap();
        assert_eq!(tape.value(l).data(), &[0.0]);
    }

    #[test]
    fn clamped_log_stays_finite() {
        let mut tape = Tape::new();
        let p = tape.param(Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap());
        let l = cross_entropy(&mut tape, p, &[1]).unwrap();
        assert!((tape.value(l).data()[0] - -LOG_FLOOR.ln()).abs() < 1e-9);
        assert!(tape.backward(l).is_ok());
    }

    #[test]
    fn label_out_of_range() {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::full(&[1, 3], 1.0 / 3.0));
        assert!(matches!(cross_entropy(&mut tape, p, &[3]), Err(Error::Contract(_))));
        let s = tape.constant(Tensor::zeros(&[1, 3, 1, 2]));
        assert!(matches!(
            pixel_softmax_loss(&mut tape, s, &[0, 3], &[1.0; 3]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn huge_logits_normalize() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::new(vec![2, 3], vec![1e3, -1e3, 999.0, -1e3, -1e3, -999.5]).unwrap());
        let p = softmax(&mut tape, z).unwrap();
        for row in tape.value(p).data().chunks(3) {
            assert!(row.iter().all(|&v| v >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn channel_softmax_sums_per_pixel() {
        let mut rng = rand::rng();
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::randn(&[2, 3, 4, 5], 10.0, &mut rng));
        let p = channel_softmax(&mut tape, z).unwrap();
        let d = tape.value(p).data();
        for b in 0..2 {
            for px in 0..20 {
                let s: f64 = (0..3).map(|c| d[b * 60 + c * 20 + px]).sum();
                assert!((s - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn uniform_scores_pixel_loss_is_ln_k() {
        let mut tape = Tape::new();
        let s = tape.constant(Tensor::zeros(&[1, 3, 2, 2]));
        let l = pixel_softmax_loss(&mut tape, s, &[0, 1, 2, 1], &[1.0; 3]).unwrap();
        assert!((tape.value(l).data()[0] - 3f64.ln()).abs() < 1e-12);
    }
}
