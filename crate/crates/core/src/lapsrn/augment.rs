//! Seeded intensity and geometry augmentations for unit-range volumes.
//! Every transform is a convex combination or a monotone map of `[0, 1]`
//! values, so outputs stay in range.

use ndarray::{Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::volume::{Domain, Volume};

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    /// Flip each axis with probability ½.
    pub flip: bool,
    pub affine: bool,
    pub max_rotation_deg: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub max_shear: f64,
    /// Ghosting: blend with a shifted copy along a random axis.
    pub ghosting: bool,
    pub max_ghost_amplitude: f64,
    pub blur: bool,
    pub blur_sigma_min: f64,
    pub blur_sigma_max: f64,
    /// Contrast change `v^γ`.
    pub gamma: bool,
    pub gamma_min: f64,
    pub gamma_max: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            flip: true,
            affine: true,
            max_rotation_deg: 10.0,
            scale_min: 0.9,
            scale_max: 1.1,
            max_shear: 0.05,
            ghosting: true,
            max_ghost_amplitude: 0.1,
            blur: true,
            blur_sigma_min: 0.0,
            blur_sigma_max: 0.75,
            gamma: true,
            gamma_min: 0.7,
            gamma_max: 1.5,
        }
    }
}

impl AugmentationConfig {
    /// All transforms off.
    pub fn identity() -> Self {
        Self { flip: false, affine: false, ghosting: false, blur: false, gamma: false, ..Self::default() }
    }
}

pub fn flip_axis(data: &Array3<f32>, axis: usize) -> Array3<f32> {
    let mut v = data.view();
    v.invert_axis(Axis(axis));
    v.to_owned()
}

fn sample(data: &Array3<f32>, p: [f64; 3]) -> f32 {
    let sh = data.shape();
    let mut idx = [[0usize; 2]; 3];
    let mut t = [0f64; 3];
    for a in 0..3 {
        let pos = p[a].clamp(0.0, (sh[a] - 1) as f64);
        let i0 = pos.floor() as usize;
        idx[a] = [i0, (i0 + 1).min(sh[a] - 1)];
        t[a] = pos - i0 as f64;
    }
    let mut acc = 0.0f64;
    for (bz, wz) in [(0, 1.0 - t[0]), (1, t[0])] {
        for (by, wy) in [(0, 1.0 - t[1]), (1, t[1])] {
            for (bx, wx) in [(0, 1.0 - t[2]), (1, t[2])] {
                acc += wz * wy * wx * data[[idx[0][bz], idx[1][by], idx[2][bx]]] as f64;
            }
        }
    }
    acc as f32
}

fn matmul(a: [[f64; 3]; 3], b: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| a[i][k] * b[k][j]).sum()))
}

/// Resamples `data` through the inverse of `m` about the volume centre.
fn affine_warp(data: &Array3<f32>, m: [[f64; 3]; 3]) -> Array3<f32> {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let inv: [[f64; 3]; 3] = std::array::from_fn(|i| {
        std::array::from_fn(|j| {
            let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
            let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
            (m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]) / det
        })
    });
    let c: [f64; 3] = std::array::from_fn(|a| (data.shape()[a] as f64 - 1.0) / 2.0);
    Array3::from_shape_fn(data.raw_dim(), |(z, y, x)| {
        let d = [z as f64 - c[0], y as f64 - c[1], x as f64 - c[2]];
        let p: [f64; 3] = std::array::from_fn(|i| c[i] + (0..3).map(|j| inv[i][j] * d[j]).sum::<f64>());
        sample(data, p)
    })
}

fn random_affine(cfg: &AugmentationConfig, rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
    let mut m = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for axis in 0..3 {
        let th = rng.random_range(-1.0..=1.0) * cfg.max_rotation_deg.to_radians();
        let (s, c) = th.sin_cos();
        let (i, j) = ((axis + 1) % 3, (axis + 2) % 3);
        let mut r = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        r[i][i] = c;
        r[i][j] = -s;
        r[j][i] = s;
        r[j][j] = c;
        m = matmul(r, m);
    }
    let mut shear = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for (i, row) in shear.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            if i != j {
                *v = rng.random_range(-1.0..=1.0) * cfg.max_shear;
            }
        }
    }
    let scale = rng.random_range(cfg.scale_min..=cfg.scale_max);
    matmul(m, shear).map(|row| row.map(|v| v * scale))
}

fn ghost(data: &Array3<f32>, axis: usize, shift: usize, amplitude: f32) -> Array3<f32> {
    let n = data.shape()[axis];
    let mut out = data.clone();
    for i in 0..n {
        let src = data.index_axis(Axis(axis), (i + n - shift % n) % n);
        let mut dst = out.index_axis_mut(Axis(axis), i);
        ndarray::Zip::from(&mut dst).and(&src).for_each(|d, &s| *d = (1.0 - amplitude) * *d + amplitude * s);
    }
    out
}

/// Separable Gaussian blur with edge replication.
pub fn gaussian_blur(data: &Array3<f32>, sigma: f64) -> Array3<f32> {
    if sigma <= 0.0 {
        return data.clone();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    let mut cur = data.clone();
    for axis in 0..3 {
        let mut next = cur.clone();
        for (lane_in, mut lane_out) in cur.lanes(Axis(axis)).into_iter().zip(next.lanes_mut(Axis(axis))) {
            let n = lane_in.len() as isize;
            for i in 0..n {
                let v: f64 = (-r..=r).map(|o| k[(o + r) as usize] * lane_in[(i + o).clamp(0, n - 1) as usize] as f64).sum();
                lane_out[i as usize] = v as f32;
            }
        }
        cur = next;
    }
    cur
}

/// Applies the enabled transforms in a fixed order: flip, affine, ghosting, blur, gamma.
pub fn augment(v: &Volume, cfg: &AugmentationConfig, seed: u64) -> Result<Volume> {
    v.require_domain(Domain::Unit)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = v.data().clone();
    if cfg.flip {
        for axis in 0..3 {
            if rng.random_bool(0.5) {
                data = flip_axis(&data, axis);
            }
        }
    }
    if cfg.affine {
        let m = random_affine(cfg, &mut rng);
        data = affine_warp(&data, m);
    }
    if cfg.ghosting {
        let axis = rng.random_range(0..3);
        let n = data.shape()[axis];
        let shift = rng.random_range(1..=(n / 4).max(1));
        let amplitude = rng.random_range(0.0..=cfg.max_ghost_amplitude.clamp(0.0, 1.0)) as f32;
        data = ghost(&data, axis, shift, amplitude);
    }
    if cfg.blur {
        let sigma = rng.random_range(cfg.blur_sigma_min..=cfg.blur_sigma_max);
        data = gaussian_blur(&data, sigma);
    }
    if cfg.gamma {
        let g = rng.random_range(cfg.gamma_min..=cfg.gamma_max) as f32;
        data.mapv_inplace(|x| x.powf(g));
    }
    data.mapv_inplace(|x| x.clamp(0.0, 1.0));
    v.with_data(data, Domain::Unit)
}
