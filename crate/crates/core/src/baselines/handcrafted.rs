//! Color-distance segmentation with RGB-histogram and LBP region features.

use crate::data::{Rgb, Sample, LABEL_SPOT};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const RGB_BINS: usize = 16;
pub const LBP_BINS: usize = 256;
/// Regions smaller than this fall back to the whole image.
pub const MIN_REGION_PIXELS: usize = 32;
/// Per-region block: three color histograms and one LBP histogram.
pub const BLOCK_DIM: usize = 3 * RGB_BINS + LBP_BINS;
pub const REGION_FEATURE_DIM: usize = 2 * BLOCK_DIM;

fn image_dims(image: &Tensor) -> Result<(usize, usize)> {
    match *image.shape() {
        [3, h, w] => Ok((h, w)),
        _ => Err(Error::dim("rgb image", image.shape(), &[3, 0, 0])),
    }
}

fn pixel(image: &Tensor, plane: usize, p: usize) -> Rgb {
    let d = image.data();
    [d[p], d[plane + p], d[2 * plane + p]]
}

/// Mean RGB over every spot-labeled pixel of the given samples.
pub fn mean_disease_color<'a>(samples: impl IntoIterator<Item = &'a Sample>) -> Result<Rgb> {
    let mut sum = [0.0; 3];
    let mut count = 0usize;
    for s in samples {
        let (h, w) = image_dims(&s.image)?;
        let plane = h * w;
        for (p, &label) in s.mask.data().iter().enumerate() {
            if label == LABEL_SPOT {
                let c = pixel(&s.image, plane, p);
                (0..3).for_each(|i| sum[i] += c[i]);
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::Data("no spot pixels in the training masks".into()));
    }
    Ok(sum.map(|v| v / count as f64))
}

/// Pixels whose Euclidean RGB distance to `color` is below `threshold`.
pub fn cluster_segment(image: &Tensor, color: Rgb, threshold: f64) -> Result<Vec<bool>> {
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(Error::Contract(format!("threshold {threshold} must be positive")));
    }
    let (h, w) = image_dims(image)?;
    let plane = h * w;
    Ok((0..plane)
        .map(|p| {
            let c = pixel(image, plane, p);
            let d2: f64 = (0..3).map(|i| (c[i] - color[i]).powi(2)).sum();
            d2.sqrt() < threshold
        })
        .collect())
}

/// 8-neighbor local binary pattern codes on luminance, borders replicated.
///
/// Bit `k` is set when neighbor `k` (clockwise from top-left) is not darker than the center.
pub fn lbp_codes(image: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = image_dims(image)?;
    let plane = h * w;
    let d = image.data();
    let lum: Vec<f64> = (0..plane)
        .map(|p| 0.299 * d[p] + 0.587 * d[plane + p] + 0.114 * d[2 * plane + p])
        .collect();
    const OFFSETS: [(i64, i64); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1)];
    let at = |y: i64, x: i64| lum[y.clamp(0, h as i64 - 1) as usize * w + x.clamp(0, w as i64 - 1) as usize];
    let mut codes = Vec::with_capacity(plane);
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let center = at(y, x);
            let mut code = 0u8;
            for (bit, (dy, dx)) in OFFSETS.iter().enumerate() {
                if at(y + dy, x + dx) >= center {
                    code |= 1 << bit;
                }
            }
            codes.push(code);
        }
    }
    Ok(codes)
}

fn push_l1(out: &mut Vec<f64>, hist: &[f64]) {
    let total: f64 = hist.iter().sum();
    out.extend(hist.iter().map(|v| if total > 0.0 { v / total } else { 0.0 }));
}

fn region_block(image: &Tensor, codes: &[u8], region: &[bool], out: &mut Vec<f64>) {
    let plane = region.len();
    let mut rgb = vec![0.0; 3 * RGB_BINS];
    let mut lbp = vec![0.0; LBP_BINS];
    for p in (0..plane).filter(|&p| region[p]) {
        let c = pixel(image, plane, p);
        for ch in 0..3 {
            let bin = ((c[ch] * RGB_BINS as f64) as usize).min(RGB_BINS - 1);
            rgb[ch * RGB_BINS + bin] += 1.0;
        }
        lbp[codes[p] as usize] += 1.0;
    }
    for ch in 0..3 {
        push_l1(out, &rgb[ch * RGB_BINS..(ch + 1) * RGB_BINS]);
    }
    push_l1(out, &lbp);
}

/// Histogram features of a region and of its complement, each block L1-normalized.
///
/// A side with fewer than [`MIN_REGION_PIXELS`] pixels is described by the whole image.
pub fn region_features(image: &Tensor, region: &[bool]) -> Result<Vec<f64>> {
    let (h, w) = image_dims(image)?;
    if region.len() != h * w {
        return Err(Error::dim("region_features", &[h, w], &[region.len()]));
    }
    let codes = lbp_codes(image)?;
    let whole = vec![true; region.len()];
    let complement: Vec<bool> = region.iter().map(|r| !r).collect();
    let mut out = Vec::with_capacity(REGION_FEATURE_DIM);
    for side in [region, &complement[..]] {
        let used = if side.iter().filter(|&&b| b).count() < MIN_REGION_PIXELS {
            &whole[..]
        } else {
            side
        };
        region_block(image, &codes, used, &mut out);
    }
    Ok(out)
}
