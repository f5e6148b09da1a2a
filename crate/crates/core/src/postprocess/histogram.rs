//! Monotone quantile mapping of one volume's intensities onto another's distribution.

use crate::error::Result;
use crate::volume::{Domain, Volume};

/// Sorted reference samples with linear interpolation between order statistics.
struct Quantiles {
    sorted: Vec<f64>,
}

impl Quantiles {
    fn new(values: impl Iterator<Item = f32>) -> Self {
        let mut sorted: Vec<f64> = values.map(f64::from).collect();
        sorted.sort_by(f64::total_cmp);
        Self { sorted }
    }

    /// Value at continuous position `pos` in order-statistic index space.
    fn at_position(&self, pos: f64) -> f64 {
        let last = self.sorted.len() - 1;
        let pos = pos.clamp(0.0, last as f64);
        let i = pos.floor() as usize;
        let t = pos - i as f64;
        if t == 0.0 || i == last {
            self.sorted[i]
        } else {
            self.sorted[i] * (1.0 - t) + self.sorted[i + 1] * t
        }
    }
}

/// Maps `source` onto the intensity distribution of `reference`; the result is tagged `HU`.
///
/// Each voxel's mid-rank CDF value `(#less + ½·#equal) / n` is looked up in the
/// reference quantile function, so ties map together and a constant source lands
/// on the reference median.
pub fn histogram_match(source: &Volume, reference: &Volume) -> Result<Volume> {
    let reference = Quantiles::new(reference.data().iter().copied());
    let m = reference.sorted.len() as f64;
    let values: Vec<f32> = source.data().iter().copied().collect();
    let n = values.len();
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.sort_by(|&a, &b| values[a as usize].total_cmp(&values[b as usize]));
    let mut out = vec![0f32; n];
    let mut start = 0;
    while start < n {
        let v = values[order[start] as usize];
        let mut end = start + 1;
        while end < n && values[order[end] as usize] == v {
            end += 1;
        }
        // position = q·m − ½ with q = (less + eq/2) / n, kept in integers until the last division
        let pos = ((2 * start + (end - start)) as f64 * m) / (2 * n) as f64 - 0.5;
        let mapped = reference.at_position(pos) as f32;
        for &i in &order[start..end] {
            out[i as usize] = mapped;
        }
        start = end;
    }
    let data = ndarray::Array3::from_shape_vec(source.data().raw_dim(), out).expect("same voxel count");
    source.with_data(data, Domain::Hu)
}
