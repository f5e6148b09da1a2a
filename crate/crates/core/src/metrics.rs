//! Overlap and intensity metrics: Dice, surface Dice, PSNR.

use ndarray::{Array3, Axis, Zip};

use crate::error::{Error, Result};
use crate::postprocess::{erode, StructuringElement};
use crate::volume::{SegmentationMask, Spacing, Volume};

/// Default surface Dice tolerance in mm.
pub const DEFAULT_SURFACE_TOLERANCE_MM: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct MetricResult {
    pub name: String,
    pub value: f64,
    /// Only for surface Dice.
    pub tolerance_mm: Option<f64>,
    /// Voxels (Dice, PSNR) or surface voxels (surface Dice) that entered the score.
    pub n_elements: usize,
}

/// `2|A∩B| / (|A|+|B|)`; two empty masks score 1.
pub fn dice(a: &SegmentationMask, b: &SegmentationMask) -> Result<f64> {
    a.same_shape(b)?;
    let (mut inter, mut total) = (0usize, 0usize);
    Zip::from(a.data()).and(b.data()).for_each(|&x, &y| {
        inter += (x && y) as usize;
        total += x as usize + y as usize;
    });
    Ok(if total == 0 { 1.0 } else { 2.0 * inter as f64 / total as f64 })
}

/// Boundary voxels: the mask minus its radius-1 cube erosion.
pub fn surface(m: &SegmentationMask) -> SegmentationMask {
    m.minus(&erode(m, StructuringElement::Cube, 1)).expect("same shape")
}

/// Exact 1-D squared distance transform of sampled function `f` on a grid with step `h`.
fn edt_1d(f: &[f64], h: f64, out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let first = match f.iter().position(|x| x.is_finite()) {
        Some(i) => i,
        None => {
            out.fill(f64::INFINITY);
            return;
        }
    };
    let pos = |q: usize| q as f64 * h;
    let mut k = 0;
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + pos(q) * pos(q)) - (f[p] + pos(p) * pos(p))) / (2.0 * (pos(q) - pos(p)));
            if s <= z[k] && k > 0 {
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < pos(q) {
            k += 1;
        }
        let d = pos(q) - pos(v[k]);
        *o = d * d + f[v[k]];
    }
}

/// Squared Euclidean distance (mm²) from every voxel to the nearest `true` voxel.
pub fn squared_distance_map(features: &Array3<bool>, spacing: Spacing) -> Array3<f64> {
    let mut dist = features.mapv(|b| if b { 0.0 } else { f64::INFINITY });
    for (axis, &h) in spacing.iter().enumerate() {
        let n = dist.shape()[axis];
        let (mut f, mut out) = (vec![0.0; n], vec![0.0; n]);
        let (mut v, mut z) = (vec![0usize; n], vec![0.0; n + 1]);
        for mut lane in dist.lanes_mut(Axis(axis)) {
            f.iter_mut().zip(lane.iter()).for_each(|(d, s)| *d = *s);
            edt_1d(&f, h, &mut out, &mut v, &mut z);
            lane.iter_mut().zip(&out).for_each(|(d, s)| *d = *s);
        }
    }
    dist
}

fn within(from: &SegmentationMask, to_dist: &Array3<f64>, tol2: f64) -> usize {
    Zip::from(from.data()).and(to_dist).fold(0, |acc, &s, &d| acc + (s && d <= tol2) as usize)
}

/// Fraction of both boundaries lying within `tol_mm` of the other boundary.
pub fn surface_dice(a: &SegmentationMask, b: &SegmentationMask, tol_mm: f64) -> Result<f64> {
    Ok(surface_dice_counts(a, b, tol_mm)?.0)
}

fn surface_dice_counts(a: &SegmentationMask, b: &SegmentationMask, tol_mm: f64) -> Result<(f64, usize)> {
    a.same_shape(b)?;
    if a.spacing() != b.spacing() {
        return Err(Error::Shape(format!("spacing {:?} vs {:?}", a.spacing(), b.spacing())));
    }
    if !(tol_mm >= 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance {tol_mm} must be non-negative")));
    }
    let (sa, sb) = (surface(a), surface(b));
    let total = sa.count() + sb.count();
    if total == 0 {
        return Ok((1.0, 0));
    }
    let tol2 = tol_mm * tol_mm;
    let hits = within(&sa, &squared_distance_map(sb.data(), a.spacing()), tol2)
        + within(&sb, &squared_distance_map(sa.data(), a.spacing()), tol2);
    Ok((hits as f64 / total as f64, total))
}

/// `10·log10(peak² / MSE)`; identical inputs give `+∞`.
pub fn psnr(a: &Volume, b: &Volume, peak: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("volume {:?} vs {:?}", a.shape(), b.shape())));
    }
    let sse = Zip::from(a.data()).and(b.data()).fold(0.0f64, |acc, &x, &y| acc + (x as f64 - y as f64).powi(2));
    let mse = sse / a.len() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { 10.0 * (peak * peak / mse).log10() })
}

/// Dice and surface Dice of a prediction against ground truth.
pub fn evaluate_masks(pred: &SegmentationMask, truth: &SegmentationMask, tol_mm: f64) -> Result<[MetricResult; 2]> {
    let (sdsc, n_surface) = surface_dice_counts(pred, truth, tol_mm)?;
    Ok([
        MetricResult { name: "DSC".into(), value: dice(pred, truth)?, tolerance_mm: None, n_elements: pred.data().len() },
        MetricResult { name: "SDSC".into(), value: sdsc, tolerance_mm: Some(tol_mm), n_elements: n_surface },
    ])
}
