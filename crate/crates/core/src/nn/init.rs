//! Parameter initializers.

use rand::Rng;

use crate::tensor::Tensor;

/// Fan-in scaled normal initialization, `std = sqrt(2 / fan_in)`.
pub fn he_normal<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    Tensor::randn(shape, (2.0 / fan_in.max(1) as f64).sqrt(), rng)
}

/// Bilinear-interpolation weights for a `[channels × channels × k × k]`
/// transposed-convolution kernel; each channel upsamples only itself.
pub fn bilinear_kernel(channels: usize, k: usize) -> Tensor {
    let factor = k.div_ceil(2) as f64;
    let center = if k % 2 == 1 { factor - 1.0 } else { factor - 0.5 };
    let tap = |i: usize| 1.0 - (i as f64 - center).abs() / factor;
    let mut t = Tensor::zeros(&[channels, channels, k, k]);
    let data = t.data_mut();
    for c in 0..channels {
        let base = (c * channels + c) * k * k;
        for y in 0..k {
            for x in 0..k {
                data[base + y * k + x] = tap(y) * tap(x);
            }
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_taps_k4() {
        let k = bilinear_kernel(1, 4);
        let row: Vec<f64> = k.data()[..4].iter().map(|v| v / 0.25).collect();
        assert_eq!(row, vec![0.25, 0.75, 0.75, 0.25]);
    }

    #[test]
    fn bilinear_is_channel_diagonal() {
        let k = bilinear_kernel(3, 4);
        let off = &k.data()[16..32];
        assert!(off.iter().all(|&v| v == 0.0));
    }
}
