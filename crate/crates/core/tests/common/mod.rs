//! Randomized instance suites shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use leafroi::autodiff::check::{gradient_check, random_projection, GradCheck};
use leafroi::autodiff::{Tape, Var};
use leafroi::nn;
use leafroi::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// Values in `±[0.05, 1]`, clear of the kinks at zero.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Distinct values spaced 0.01 apart in shuffled order, so pooling windows have no ties.
fn distinct(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    use rand::seq::SliceRandom;
    let n: usize = shape.iter().product();
    let mut data: Vec<f64> = (0..n).map(|i| i as f64 * 0.01 - 0.3).collect();
    data.shuffle(rng);
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, rng)
}

type Instance = (Vec<Tensor>, Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>);

fn conv_instance(rng: &mut ChaCha8Rng) -> Instance {
    let (n, c, o) = (rng.random_range(1..=2), rng.random_range(1..=3), rng.random_range(1..=3));
    let k = rng.random_range(1..=3);
    let stride = rng.random_range(1..=2);
    let pad = rng.random_range(0..k.min(2));
    let oh = rng.random_range(1..=3);
    let ow = rng.random_range(1..=3);
    let h = (oh - 1) * stride + k - 2 * pad;
    let w = (ow - 1) * stride + k - 2 * pad;
    let with_bias = rng.random_bool(0.5);
    let mut inputs = vec![uniform(&[n, c, h, w], rng), uniform(&[o, c, k, k], rng)];
    if with_bias {
        inputs.push(uniform(&[o], rng));
    }
    let seed = rng.random();
    let f = move |t: &mut Tape, v: &[Var]| {
        let y = nn::conv2d(t, v[0], v[1], v.get(2).copied(), stride, pad)?;
        random_projection(t, y, seed)
    };
    (inputs, Box::new(f))
}

fn tconv_instance(rng: &mut ChaCha8Rng) -> Instance {
    let (n, c, o) = (rng.random_range(1..=2), rng.random_range(1..=3), rng.random_range(1..=3));
    let k = rng.random_range(1..=4);
    let stride = rng.random_range(1..=3);
    let (h, w) = (rng.random_range(1..=3), rng.random_range(1..=3));
    let inputs = vec![uniform(&[n, c, h, w], rng), uniform(&[c, o, k, k], rng)];
    let seed = rng.random();
    let f = move |t: &mut Tape, v: &[Var]| {
        let y = nn::tconv2d(t, v[0], v[1], stride)?;
        random_projection(t, y, seed)
    };
    (inputs, Box::new(f))
}

fn maxpool_instance(rng: &mut ChaCha8Rng) -> Instance {
    let (n, c) = (rng.random_range(1..=2), rng.random_range(1..=3));
    let (h, w) = (2 * rng.random_range(1..=3), 2 * rng.random_range(1..=3));
    let seed = rng.random();
    let f = move |t: &mut Tape, v: &[Var]| {
        let y = nn::maxpool2(t, v[0])?;
        random_projection(t, y, seed)
    };
    (vec![distinct(&[n, c, h, w], rng)], Box::new(f))
}

fn relu_instance(rng: &mut ChaCha8Rng) -> Instance {
    let shape = [rng.random_range(1..=2), rng.random_range(1..=3), rng.random_range(1..=4), rng.random_range(1..=4)];
    let seed = rng.random();
    let f = move |t: &mut Tape, v: &[Var]| {
        let y = nn::relu(t, v[0])?;
        random_projection(t, y, seed)
    };
    (vec![away_from_zero(&shape, rng)], Box::new(f))
}

fn dense_instance(rng: &mut ChaCha8Rng) -> Instance {
    let (n, i, o) = (rng.random_range(1..=3), rng.random_range(1..=6), rng.random_range(1..=5));
    let inputs = vec![uniform(&[n, i], rng), uniform(&[i, o], rng), uniform(&[o], rng)];
    let seed = rng.random();
    let f = move |t: &mut Tape, v: &[Var]| {
        let y = nn::fully_connected(t, v[0], v[1], v[2])?;
        random_projection(t, y, seed)
    };
    (inputs, Box::new(f))
}

/// Rotates through softmax + cross-entropy, projected softmax, projected
/// channel softmax and the weighted pixel loss.
fn softmax_loss_instance(rng: &mut ChaCha8Rng, variant: usize) -> Instance {
    let seed = rng.random();
    match variant % 4 {
        0 => {
            let (n, k) = (rng.random_range(1..=4), rng.random_range(2..=5));
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            let f = move |t: &mut Tape, v: &[Var]| {
                let p = nn::softmax(t, v[0])?;
                nn::cross_entropy(t, p, &labels)
            };
            (vec![uniform(&[n, k], rng)], Box::new(f))
        }
        1 => {
            let (n, k) = (rng.random_range(1..=4), rng.random_range(2..=5));
            let f = move |t: &mut Tape, v: &[Var]| {
                let p = nn::softmax(t, v[0])?;
                random_projection(t, p, seed)
            };
            (vec![uniform(&[n, k], rng)], Box::new(f))
        }
        2 => {
            let shape = [rng.random_range(1..=2), rng.random_range(2..=4), rng.random_range(1..=3), rng.random_range(1..=3)];
            let f = move |t: &mut Tape, v: &[Var]| {
                let p = nn::channel_softmax(t, v[0])?;
                random_projection(t, p, seed)
            };
            (vec![uniform(&shape, rng)], Box::new(f))
        }
        _ => {
            let (n, k, h, w) = (rng.random_range(1..=2), 3, rng.random_range(1..=4), rng.random_range(1..=4));
            let labels: Vec<u8> = (0..n * h * w).map(|_| rng.random_range(0..k as u8)).collect();
            let weights: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..3.0)).collect();
            let f = move |t: &mut Tape, v: &[Var]| nn::pixel_softmax_loss(t, v[0], &labels, &weights);
            (vec![uniform(&[n, k, h, w], rng)], Box::new(f))
        }
    }
}

fn crop_instance(rng: &mut ChaCha8Rng) -> Instance {
    let (n, c) = (rng.random_range(1..=2), rng.random_range(1..=3));
    let (h, w) = (rng.random_range(2..=6), rng.random_range(2..=6));
    let (ch, cw) = (rng.random_range(1..=h), rng.random_range(1..=w));
    let offset = (rng.random_range(0..=h - ch), rng.random_range(0..=w - cw));
    let seed = rng.random();
    let f = move |t: &mut Tape, v: &[Var]| {
        let y = nn::crop_to(t, v[0], (ch, cw), offset)?;
        random_projection(t, y, seed)
    };
    (vec![uniform(&[n, c, h, w], rng)], Box::new(f))
}

fn add_instance(rng: &mut ChaCha8Rng) -> Instance {
    let shape = [rng.random_range(1..=2), rng.random_range(1..=3), rng.random_range(1..=4), rng.random_range(1..=4)];
    let seed = rng.random();
    let f = move |t: &mut Tape, v: &[Var]| {
        let y = nn::add_elementwise(t, v[0], v[1])?;
        random_projection(t, y, seed)
    };
    (vec![uniform(&shape, rng), uniform(&shape, rng)], Box::new(f))
}

fn concat_instance(rng: &mut ChaCha8Rng) -> Instance {
    let (n, h, w) = (rng.random_range(1..=2), rng.random_range(1..=4), rng.random_range(1..=4));
    let (ca, cb) = (rng.random_range(1..=3), rng.random_range(1..=3));
    let seed = rng.random();
    let f = move |t: &mut Tape, v: &[Var]| {
        let y = nn::concat_channels(t, v[0], v[1])?;
        random_projection(t, y, seed)
    };
    (vec![uniform(&[n, ca, h, w], rng), uniform(&[n, cb, h, w], rng)], Box::new(f))
}

pub const LAYERS: [&str; 9] = [
    "conv2d",
    "tconv2d",
    "maxpool2",
    "relu",
    "fully_connected",
    "softmax+losses",
    "crop",
    "add",
    "concat",
];

/// Worst finite-difference agreement of `layer` over `instances` random instances.
pub fn gradient_suite(layer: &str, instances: usize, seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = GradCheck::default();
    for i in 0..instances {
        let (inputs, f) = match layer {
            "conv2d" => conv_instance(&mut rng),
            "tconv2d" => tconv_instance(&mut rng),
            "maxpool2" => maxpool_instance(&mut rng),
            "relu" => relu_instance(&mut rng),
            "fully_connected" => dense_instance(&mut rng),
            "softmax+losses" => softmax_loss_instance(&mut rng, i),
            "crop" => crop_instance(&mut rng),
            "add" => add_instance(&mut rng),
            "concat" => concat_instance(&mut rng),
            other => panic!("unknown layer {other}"),
        };
        let r = gradient_check(&inputs, FD_STEP, f).unwrap_or_else(|e| panic!("{layer} instance {i}: {e}"));
        worst = worst.merge(r);
    }
    worst
}

fn inner(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Largest `|⟨conv(x, K), y⟩ − ⟨x, tconv(y, K)⟩|` over random instances.
pub fn adjoint_suite(instances: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let (n, c, o) = (rng.random_range(1..=2), rng.random_range(1..=4), rng.random_range(1..=4));
        let k = rng.random_range(1..=4);
        let stride = rng.random_range(1..=3);
        let (oh, ow) = (rng.random_range(1..=5), rng.random_range(1..=5));
        let (h, w) = ((oh - 1) * stride + k, (ow - 1) * stride + k);
        let x = uniform(&[n, c, h, w], &mut rng);
        let kernel = uniform(&[o, c, k, k], &mut rng);
        let y = uniform(&[n, o, oh, ow], &mut rng);
        let mut t = Tape::new();
        let (xv, kv, yv) = (t.constant(x.clone()), t.constant(kernel), t.constant(y.clone()));
        let ax = nn::conv2d(&mut t, xv, kv, None, stride, 0).unwrap();
        let aty = nn::tconv2d(&mut t, yv, kv, stride).unwrap();
        assert_eq!(t.shape(aty), x.shape());
        worst = worst.max((inner(t.value(ax), &y) - inner(&x, t.value(aty))).abs());
    }
    worst
}

/// Mean of the defined ratios, summed in class order.
fn oracle_mean(ratios: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = ratios.iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Per-class pixel accuracy and IoU from explicit pixel-coordinate sets.
pub fn set_oracle(pred: &[u8], gt: &[u8], classes: usize) -> (Vec<Option<f64>>, Vec<Option<f64>>) {
    use std::collections::BTreeSet;
    let set = |m: &[u8], c: usize| -> BTreeSet<usize> { (0..m.len()).filter(|&i| m[i] as usize == c).collect() };
    let mut acc = Vec::new();
    let mut iou = Vec::new();
    for c in 0..classes {
        let (p, g) = (set(pred, c), set(gt, c));
        let inter = p.intersection(&g).count();
        let union = p.union(&g).count();
        acc.push((!g.is_empty()).then(|| inter as f64 / g.len() as f64));
        iou.push((union > 0).then(|| inter as f64 / union as f64));
    }
    (acc, iou)
}

/// Number of random 8×8 mask pairs (plus the worked 2×2 case) on which the metric
/// functions disagree with [`set_oracle`] in any bit.
pub fn metric_oracle_mismatches(instances: usize, seed: u64) -> usize {
    use leafroi::metrics::{mean_iou, per_class_pixel_accuracy, LabelMask};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases: Vec<(usize, usize, Vec<u8>, Vec<u8>)> = vec![(2, 2, vec![0, 1, 1, 1], vec![0, 0, 1, 1])];
    for _ in 0..instances {
        // skew some masks toward fewer labels so absent classes occur
        let top = rng.random_range(1..=3u8);
        let mut draw = || (0..64).map(|_| rng.random_range(0..top)).collect::<Vec<u8>>();
        let (p, g) = (draw(), draw());
        cases.push((8, 8, p, g));
    }
    let mut bad = 0;
    for (h, w, p, g) in &cases {
        let pm = LabelMask::new(*h, *w, p.clone()).unwrap();
        let gm = LabelMask::new(*h, *w, g.clone()).unwrap();
        let acc = per_class_pixel_accuracy(&pm, &gm, 3).unwrap();
        let iou = mean_iou(&pm, &gm, 3).unwrap();
        let (oacc, oiou) = set_oracle(p, g, 3);
        let same = acc.per_class == oacc
            && iou.per_class == oiou
            && acc.mean == oracle_mean(&oacc)
            && iou.mean == oracle_mean(&oiou);
        if !same {
            bad += 1;
        }
    }
    let worked = mean_iou(
        &LabelMask::new(2, 2, vec![0, 1, 1, 1]).unwrap(),
        &LabelMask::new(2, 2, vec![0, 0, 1, 1]).unwrap(),
        3,
    )
    .unwrap();
    if (worked.mean.unwrap() - 7.0 / 12.0).abs() > 1e-15 {
        bad += 1;
    }
    bad
}

/// Descriptors drawn around `k` random centers.
fn clustered(rng: &mut ChaCha8Rng, n: usize, d: usize, k: usize) -> Vec<Vec<f64>> {
    let centers: Vec<Vec<f64>> = (0..k).map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
    (0..n)
        .map(|_| {
            let c = &centers[rng.random_range(0..k)];
            let s = rng.random_range(0.2..1.0);
            c.iter().map(|m| m + s * rng.random_range(-1.0..1.0)).collect()
        })
        .collect()
}

/// Largest per-iteration decrease of the recorded log-likelihood over seeded EM runs
/// (negative or zero when every run is monotone).
pub fn em_worst_decrease(runs: usize, seed: u64) -> f64 {
    use leafroi::baselines::gmm_fit;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    for r in 0..runs {
        let k = rng.random_range(1..=8);
        let d = rng.random_range(1..=16);
        let n = rng.random_range(4 * k.max(4)..=300);
        let planted = rng.random_range(1..=6);
        let xs = clustered(&mut rng, n, d, planted);
        let fit = gmm_fit(&xs, k, 25, seed + r as u64).unwrap();
        for pair in fit.log_likelihood.windows(2) {
            worst = worst.max(pair[0] - pair[1]);
        }
    }
    worst
}

/// Largest relative disagreement between the unnormalized Fisher vector and
/// `σ/(T√w)·∂L/∂μ`, `σ/(T√(2w))·∂L/∂σ` from central differences of the log-likelihood.
pub fn fisher_fd_worst(instances: usize, seed: u64) -> f64 {
    use leafroi::baselines::{fisher_encode_raw, GmmModel};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let (k, d, t) = (rng.random_range(1..=4), rng.random_range(1..=5), rng.random_range(1..=12));
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let model = GmmModel {
            weights: raw.iter().map(|w| w / total).collect(),
            means: (0..k).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
            variances: (0..k).map(|_| (0..d).map(|_| rng.random_range(0.3..2.0)).collect()).collect(),
        };
        let xs: Vec<Vec<f64>> = (0..t).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let fv = fisher_encode_raw(&xs, &model).unwrap();
        for c in 0..k {
            let w = model.weights[c];
            for j in 0..d {
                let sigma = model.variances[c][j].sqrt();
                let mut m = model.clone();
                m.means[c][j] += h;
                let up = m.log_likelihood(&xs);
                m.means[c][j] -= 2.0 * h;
                let down = m.log_likelihood(&xs);
                let g_mu = sigma / (t as f64 * w.sqrt()) * (up - down) / (2.0 * h);
                let mut m = model.clone();
                m.variances[c][j] = (sigma + h).powi(2);
                let up = m.log_likelihood(&xs);
                m.variances[c][j] = (sigma - h).powi(2);
                let down = m.log_likelihood(&xs);
                let g_sigma = sigma / (t as f64 * (2.0 * w).sqrt()) * (up - down) / (2.0 * h);
                let base = 2 * c * d;
                for (enc, fd) in [(fv[base + j], g_mu), (fv[base + d + j], g_sigma)] {
                    let rel = (enc - fd).abs() / enc.abs().max(fd.abs()).max(1e-6);
                    worst = worst.max(rel);
                }
            }
        }
    }
    worst
}

/// Number of random instances where bilinear pooling differs in any bit from the
/// naive `z[i][j] = Σ_l a[i][l]·b[j][l]` double loop.
pub fn bilinear_mismatches(instances: usize, seed: u64) -> usize {
    use leafroi::baselines::bilinear_pool_raw;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for _ in 0..instances {
        let (ca, cb) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let (h, w) = (rng.random_range(1..=5), rng.random_range(1..=5));
        let a = uniform(&[ca, h, w], &mut rng);
        let b = uniform(&[cb, h, w], &mut rng);
        let z = bilinear_pool_raw(&a, &b).unwrap();
        let hw = h * w;
        let mut naive = vec![0.0; ca * cb];
        for i in 0..ca {
            for j in 0..cb {
                let mut s = 0.0;
                for l in 0..hw {
                    s += a.data()[i * hw + l] * b.data()[j * hw + l];
                }
                naive[i * cb + j] = s;
            }
        }
        if z != naive {
            bad += 1;
        }
    }
    bad
}
