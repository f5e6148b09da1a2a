//! Volume loading, saving, resampling, and intensity preprocessing.

mod nifti;
mod raw;

use std::path::Path;

use ndarray::{Array3, Axis};

use crate::error::{Error, Result};
use crate::volume::{Domain, Volume};

pub use raw::sidecar_path;

/// Default air/background floor in Hounsfield units.
pub const DEFAULT_FLOOR_HU: f32 = -500.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    /// Little-endian f32 payload, z-major, plus a `key=value` text sidecar.
    RawF32,
    /// NIfTI-1 single file, optionally gzip-compressed.
    Nifti,
}

impl Format {
    /// `.nii` / `.nii.gz` are NIfTI; everything else is raw.
    pub fn from_path(path: &Path) -> Format {
        let name = path.file_name().map(|n| n.to_string_lossy().to_ascii_lowercase()).unwrap_or_default();
        if name.ends_with(".nii") || name.ends_with(".nii.gz") {
            Format::Nifti
        } else {
            Format::RawF32
        }
    }
}

pub fn load_volume(path: &Path, format: Format) -> Result<Volume> {
    match format {
        Format::RawF32 => raw::load(path),
        Format::Nifti => nifti::load(path),
    }
}

pub fn save_volume(v: &Volume, path: &Path, format: Format) -> Result<()> {
    match format {
        Format::RawF32 => raw::save(v, path),
        Format::Nifti => nifti::save(v, path),
    }
}

/// Loads with the format implied by the file name.
pub fn load_auto(path: &Path) -> Result<Volume> {
    load_volume(path, Format::from_path(path))
}

pub fn save_auto(v: &Volume, path: &Path) -> Result<()> {
    save_volume(v, path, Format::from_path(path))
}

/// Linear resampling of one axis with half-voxel-centred coordinates and edge clamping.
fn resample_axis(src: &Array3<f32>, axis: usize, target: usize) -> Array3<f32> {
    let n = src.shape()[axis];
    if n == target {
        return src.clone();
    }
    let scale = n as f64 / target as f64;
    let taps: Vec<(usize, usize, f32)> = (0..target)
        .map(|o| {
            let pos = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = pos.floor() as usize;
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, (pos - i0 as f64) as f32)
        })
        .collect();
    let mut shape = [src.shape()[0], src.shape()[1], src.shape()[2]];
    shape[axis] = target;
    let mut out = Array3::zeros(shape);
    for (o, &(i0, i1, t)) in taps.iter().enumerate() {
        let a = src.index_axis(Axis(axis), i0);
        let b = src.index_axis(Axis(axis), i1);
        let mut dst = out.index_axis_mut(Axis(axis), o);
        ndarray::Zip::from(&mut dst).and(&a).and(&b).for_each(|d, &va, &vb| *d = va * (1.0 - t) + vb * t);
    }
    out
}

/// Trilinear resampling to `target` with edge clamping; spacing follows the shape ratio.
pub fn resample(v: &Volume, target: [usize; 3]) -> Result<Volume> {
    if target.contains(&0) {
        return Err(Error::InvalidArgument(format!("target shape {target:?} has a zero extent")));
    }
    let shape = v.shape();
    let mut data = v.data().clone();
    for axis in 0..3 {
        data = resample_axis(&data, axis, target[axis]);
    }
    let sp = v.spacing();
    let spacing = [0, 1, 2].map(|a| sp[a] * shape[a] as f64 / target[a] as f64);
    let data = if v.domain() == Domain::Unit { data.mapv(|x| x.clamp(0.0, 1.0)) } else { data };
    Ok(Volume::new(data, spacing, v.domain())?.with_provenance(v.provenance().to_owned()))
}

/// Raises every voxel below `floor_hu` to `floor_hu`.
pub fn hounsfield_floor(v: &Volume, floor_hu: f32) -> Result<Volume> {
    v.require_domain(Domain::Hu)?;
    v.with_data(v.data().mapv(|x| x.max(floor_hu)), Domain::Hu)
}

/// Per-instance `(x - min) / (max - min)`; a constant volume maps to zeros.
pub fn minmax_normalize(v: &Volume) -> Result<Volume> {
    let (lo, hi) = v.min_max();
    let data = if hi > lo {
        let (lo, range) = (lo as f64, hi as f64 - lo as f64);
        v.data().mapv(|x| (((x as f64 - lo) / range) as f32).clamp(0.0, 1.0))
    } else {
        Array3::zeros(v.data().raw_dim())
    };
    v.with_data(data, Domain::Unit)
}

/// CT preprocessing: floor at `floor_hu`, then min-max to `[0, 1]`.
pub fn preprocess_ct(v: &Volume, floor_hu: f32) -> Result<Volume> {
    minmax_normalize(&hounsfield_floor(v, floor_hu)?)
}
