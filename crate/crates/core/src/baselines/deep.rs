//! Local descriptors tapped from an intermediate classifier layer, and bilinear pooling.

use log::warn;

use super::gmm::power_l2_normalize;
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::network::{roi_probabilities, Network};
use crate::nn;
use crate::tensor::Tensor;

/// Smallest input extent the tap accepts (one cell after four poolings).
pub const MIN_EXTENT: usize = 16;
const CHUNK: usize = 16;

/// Bilinear resize of a `C×H×W` tensor with half-pixel centers.
///
/// Resizing to the same extent returns the input unchanged.
pub fn resize_bilinear(image: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (c, h, w) = match *image.shape() {
        [c, h, w] if h > 0 && w > 0 => (c, h, w),
        _ => return Err(Error::dim("resize_bilinear", image.shape(), &[0, out_h, out_w])),
    };
    let axis = |out: usize, src: usize| -> Vec<(usize, usize, f64)> {
        let ratio = src as f64 / out as f64;
        (0..out)
            .map(|i| {
                let s = ((i as f64 + 0.5) * ratio - 0.5).clamp(0.0, (src - 1) as f64);
                let i0 = s.floor() as usize;
                (i0, (i0 + 1).min(src - 1), s - i0 as f64)
            })
            .collect()
    };
    let (ys, xs) = (axis(out_h, h), axis(out_w, w));
    let d = image.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let base = ch * h * w;
        for &(y0, y1, ty) in &ys {
            for &(x0, x1, tx) in &xs {
                let at = |y: usize, x: usize| d[base + y * w + x];
                let top = at(y0, x0) + (at(y0, x1) - at(y0, x0)) * tx;
                let bottom = at(y1, x0) + (at(y1, x1) - at(y1, x0)) * tx;
                out.push(top + (bottom - top) * ty);
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], out)
}

/// Nine geometric scales `2^(i/4)`, `i = −4..=4`.
pub fn default_scales() -> Vec<f64> {
    (-4..=4).map(|i| 2f64.powf(i as f64 / 4.0)).collect()
}

/// Extent of a rescaled image, rounded to a multiple of 16; `None` below [`MIN_EXTENT`].
pub fn scaled_extent(size: usize, scale: f64) -> Option<usize> {
    let e = ((size as f64 * scale / 16.0).round() as usize) * 16;
    (e >= MIN_EXTENT).then_some(e)
}

/// A truncated forward pass to one layer of a classifier.
///
/// A 6-channel classifier needs the ROI network that produces its extra channels.
pub struct FeatureTap<'a> {
    net: &'a Network,
    roi: Option<&'a Network>,
    slot: usize,
}

impl<'a> FeatureTap<'a> {
    pub fn new(net: &'a Network, roi: Option<&'a Network>, layer: &str) -> Result<Self> {
        let slot = net
            .spec()
            .slot_of(layer)
            .ok_or_else(|| Error::Lookup(format!("network {} has no layer {layer}", net.spec().name)))?;
        match (net.spec().input_channels, roi) {
            (3, _) => {}
            (6, Some(_)) => {}
            (c, _) => {
                return Err(Error::Config(format!(
                    "a {c}-channel classifier tap needs an ROI network for its extra channels"
                )))
            }
        }
        Ok(FeatureTap { net, roi, slot })
    }

    /// Tap activations `N×C×h×w` for `N×3×H×W` images.
    pub fn maps(&self, images: &Tensor) -> Result<Tensor> {
        let input = match (self.net.spec().input_channels, self.roi) {
            (6, Some(roi)) => {
                let probs = roi_probabilities(roi, images)?;
                let mut tape = Tape::new();
                let (a, b) = (tape.constant(images.clone()), tape.constant(probs));
                let joined = nn::concat_channels(&mut tape, a, b)?;
                tape.value(joined).clone()
            }
            _ => images.clone(),
        };
        self.net.infer_slot(&input, self.slot)
    }
}

/// Channel fibers of sample `b` of an `N×C×h×w` map, one per location in row-major order.
pub fn fibers(map: &Tensor, b: usize) -> Result<Vec<Vec<f64>>> {
    let (n, c, h, w) = map.dims4()?;
    if b >= n {
        return Err(Error::Contract(format!("sample {b} out of batch {n}")));
    }
    let plane = h * w;
    let d = &map.data()[b * c * plane..(b + 1) * c * plane];
    Ok((0..plane).map(|p| (0..c).map(|ch| d[ch * plane + p]).collect()).collect())
}

/// Descriptor sets of several images: every tap location at every usable scale.
pub fn extract_deep_features_batch(images: &[&Tensor], tap: &FeatureTap, scales: &[f64]) -> Result<Vec<Vec<Vec<f64>>>> {
    if scales.is_empty() {
        return Err(Error::Contract("no scales given".into()));
    }
    let mut out = vec![Vec::new(); images.len()];
    let mut used = 0;
    for &scale in scales {
        let mut ok = true;
        for (start, chunk) in images.chunks(CHUNK).enumerate() {
            let mut resized = Vec::with_capacity(chunk.len());
            for img in chunk {
                let (h, w) = match *img.shape() {
                    [3, h, w] => (h, w),
                    _ => return Err(Error::dim("extract_deep_features", img.shape(), &[3, 0, 0])),
                };
                match (scaled_extent(h, scale), scaled_extent(w, scale)) {
                    (Some(sh), Some(sw)) => resized.push(resize_bilinear(img, sh, sw)?),
                    _ => {
                        ok = false;
                        break;
                    }
                }
            }
            if !ok {
                break;
            }
            let refs: Vec<&Tensor> = resized.iter().collect();
            let maps = tap.maps(&Tensor::stack(&refs)?)?;
            for b in 0..chunk.len() {
                out[start * CHUNK + b].extend(fibers(&maps, b)?);
            }
        }
        if ok {
            used += 1;
        } else {
            warn!("scale {scale:.3} is below the minimum input extent; skipped");
        }
    }
    if used == 0 {
        return Err(Error::Data("every scale was below the minimum input extent".into()));
    }
    Ok(out)
}

/// Descriptor set of one `3×H×W` image.
pub fn extract_deep_features(image: &Tensor, tap: &FeatureTap, scales: &[f64]) -> Result<Vec<Vec<f64>>> {
    Ok(extract_deep_features_batch(&[image], tap, scales)?.remove(0))
}

/// `Σ_l a_l ⊗ b_l` over locations, flattened row-major (`Ca·Cb` entries).
pub fn bilinear_pool_raw(a: &Tensor, b: &Tensor) -> Result<Vec<f64>> {
    let (ca, cb, plane) = match (a.shape(), b.shape()) {
        ([ca, ha, wa], [cb, hb, wb]) if (ha, wa) == (hb, wb) => (*ca, *cb, ha * wa),
        _ => return Err(Error::dim("bilinear_pool", a.shape(), b.shape())),
    };
    let (ad, bd) = (a.data(), b.data());
    let mut acc = vec![0.0; ca * cb];
    for l in 0..plane {
        for i in 0..ca {
            let ai = ad[i * plane + l];
            let row = &mut acc[i * cb..(i + 1) * cb];
            for (j, r) in row.iter_mut().enumerate() {
                *r += ai * bd[j * plane + l];
            }
        }
    }
    Ok(acc)
}

/// Bilinear pooling followed by signed square root and L2 normalization.
pub fn bilinear_pool(a: &Tensor, b: &Tensor) -> Result<Vec<f64>> {
    let mut v = bilinear_pool_raw(a, b)?;
    power_l2_normalize(&mut v);
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{classifier_spec, BLOCK3_TAP};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn outer_product_single_location() {
        let a = Tensor::new(vec![2, 1, 1], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(vec![2, 1, 1], vec![3.0, 4.0]).unwrap();
        assert_eq!(bilinear_pool_raw(&a, &b).unwrap(), vec![3.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn zero_stream_gives_zero_vector() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = Tensor::randn(&[3, 2, 2], 1.0, &mut rng);
        let b = Tensor::zeros(&[4, 2, 2]);
        assert!(bilinear_pool(&a, &b).unwrap().iter().all(|&v| v == 0.0));
        let c = Tensor::zeros(&[4, 2, 3]);
        assert!(matches!(bilinear_pool(&a, &c), Err(Error::Dimension { .. })));
    }

    #[test]
    fn identity_resize() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = Tensor::uniform(&[3, 16, 16], 0.0, 1.0, &mut rng);
        assert_eq!(resize_bilinear(&img, 16, 16).unwrap(), img);
        let up = resize_bilinear(&Tensor::full(&[1, 3, 3], 0.4), 7, 5).unwrap();
        assert!(up.data().iter().all(|v| (v - 0.4).abs() < 1e-15));
    }

    #[test]
    fn scale_ladder() {
        let s = default_scales();
        assert_eq!(s.len(), 9);
        assert_eq!(s[4], 1.0);
        assert_eq!(scaled_extent(96, 1.0), Some(96));
        assert_eq!(scaled_extent(96, 0.5), Some(48));
        assert_eq!(scaled_extent(96, 0.05), None);
    }

    #[test]
    fn block3_tap_shape_and_counts() {
        let net = Network::init(classifier_spec(3, 3, 96).unwrap(), 0).unwrap();
        let tap = FeatureTap::new(&net, None, BLOCK3_TAP).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = Tensor::uniform(&[3, 96, 96], 0.0, 1.0, &mut rng);
        let d = extract_deep_features(&img, &tap, &[1.0]).unwrap();
        assert_eq!(d.len(), 144);
        assert!(d.iter().all(|x| x.len() == 64));
        assert_eq!(d, extract_deep_features(&img, &tap, &[1.0]).unwrap());
        let scales = default_scales();
        let all = extract_deep_features(&img, &tap, &scales).unwrap();
        let expect: usize = scales
            .iter()
            .map(|&s| (scaled_extent(96, s).unwrap() / 8).pow(2))
            .sum();
        assert_eq!(all.len(), expect);
    }

    #[test]
    fn six_channel_tap_requires_roi() {
        let net = Network::init(classifier_spec(6, 3, 96).unwrap(), 0).unwrap();
        assert!(matches!(FeatureTap::new(&net, None, BLOCK3_TAP), Err(Error::Config(_))));
        assert!(matches!(FeatureTap::new(&net, None, "nope"), Err(Error::Lookup(_))));
    }
}
