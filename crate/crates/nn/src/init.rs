//! Weight initializers.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn normal<T: Scalar, R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("finite std");
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::lit(dist.sample(rng))).collect();
    Tensor::from_vec(shape, data).expect("consistent shape")
}

/// He (variance scaling) normal init for a conv weight `[cout, cin, k, k, k]`.
pub fn he_normal<T: Scalar, R: Rng + ?Sized>(shape: &[usize], negative_slope: f64, rng: &mut R) -> Tensor<T> {
    let fan_in: usize = shape[1..].iter().product();
    let gain = (2.0 / (1.0 + negative_slope * negative_slope)).sqrt();
    normal(shape, gain / (fan_in as f64).sqrt(), rng)
}

/// 1-D linear interpolation taps of an upsampling-by-`factor` transposed conv.
pub fn bilinear_taps(kernel: usize) -> Vec<f64> {
    let factor = kernel.div_ceil(2) as f64;
    let center = if kernel % 2 == 1 { factor - 1.0 } else { factor - 0.5 };
    (0..kernel).map(|i| 1.0 - ((i as f64 - center).abs() / factor)).collect()
}

/// Trilinear upsampling filter for a transposed conv weight `[c, c, k, k, k]`,
/// acting channel-wise (identity across channels).
pub fn trilinear_filter<T: Scalar>(channels: usize, kernel: usize) -> Tensor<T> {
    let taps = bilinear_taps(kernel);
    let k3 = kernel.pow(3);
    let mut w = Tensor::zeros(&[channels, channels, kernel, kernel, kernel]);
    for c in 0..channels {
        let base = (c * channels + c) * k3;
        for z in 0..kernel {
            for y in 0..kernel {
                for x in 0..kernel {
                    w.data_mut()[base + (z * kernel + y) * kernel + x] = T::lit(taps[z] * taps[y] * taps[x]);
                }
            }
        }
    }
    w
}
