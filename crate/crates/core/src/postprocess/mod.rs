//! Synthetic CT back to Hounsfield units, then skull mask extraction by
//! thresholding and binary opening/closing.

mod histogram;
mod morphology;

pub use histogram::histogram_match;
pub use morphology::{closing, dilate, element_offsets, erode, StructuringElement};

use crate::error::{Error, Result};
use crate::volume::{Domain, SegmentationMask, Volume};

/// Default bone threshold in HU.
pub const DEFAULT_BONE_THRESHOLD_HU: f64 = 200.0;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SegmentationParams {
    pub bone_threshold_hu: f64,
    pub opening_radius: usize,
    pub closing_radius: usize,
    pub structuring_element: StructuringElement,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        Self {
            bone_threshold_hu: DEFAULT_BONE_THRESHOLD_HU,
            opening_radius: 1,
            closing_radius: 1,
            structuring_element: StructuringElement::Cube,
        }
    }
}

/// `v ≥ t`, boundary inclusive.
pub fn threshold_hu(v: &Volume, t: f64) -> Result<SegmentationMask> {
    v.require_domain(Domain::Hu)?;
    if t.is_nan() {
        return Err(Error::InvalidArgument("threshold is NaN".into()));
    }
    SegmentationMask::new(v.data().mapv(|x| x as f64 >= t), v.spacing())
}

/// Erosion followed by dilation with the opening radius.
pub fn binary_open(m: &SegmentationMask, p: &SegmentationParams) -> SegmentationMask {
    let se = p.structuring_element;
    dilate(&erode(m, se, p.opening_radius), se, p.opening_radius)
}

/// Dilation followed by erosion with the closing radius (see [`closing`] for the border rule).
pub fn binary_close(m: &SegmentationMask, p: &SegmentationParams) -> SegmentationMask {
    closing(m, p.structuring_element, p.closing_radius)
}

/// Histogram matching, thresholding, opening, closing.
pub fn segment_skull(syn_ct: &Volume, reference_ct: &Volume, p: &SegmentationParams) -> Result<SegmentationMask> {
    let matched = histogram_match(syn_ct, reference_ct)?;
    let mask = threshold_hu(&matched, p.bone_threshold_hu)?;
    Ok(binary_close(&binary_open(&mask, p), p))
}
