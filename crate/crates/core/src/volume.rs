//! Volumes and segmentation masks, the data passed between pipeline stages.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array3, Zip};
use skullcut_nn::Tensor;

use crate::error::{Error, Result};

/// Intensity scale a volume's values live on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Domain {
    /// Hounsfield units.
    #[serde(rename = "HU")]
    Hu,
    /// Normalized to `[0, 1]`.
    #[serde(rename = "UNIT")]
    Unit,
    #[serde(rename = "ARBITRARY")]
    Arbitrary,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Hu => "HU",
            Domain::Unit => "UNIT",
            Domain::Arbitrary => "ARBITRARY",
        })
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "HU" => Ok(Domain::Hu),
            "UNIT" => Ok(Domain::Unit),
            "ARBITRARY" => Ok(Domain::Arbitrary),
            other => Err(Error::format("domain", format!("unknown domain `{other}`"))),
        }
    }
}

/// Physical voxel size in mm, ordered `(z, y, x)` like the array axes.
pub type Spacing = [f64; 3];

fn check_spacing(spacing: Spacing) -> Result<()> {
    if spacing.iter().all(|s| s.is_finite() && *s > 0.0) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("spacing must be positive, got {spacing:?}")))
    }
}

/// A 3-D scalar grid (`D × H × W`, z slowest) with spacing and intensity domain.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    data: Array3<f32>,
    spacing: Spacing,
    domain: Domain,
    provenance: String,
}

impl Volume {
    /// Validates finiteness, spacing, and the `[0,1]` range of `UNIT` volumes.
    pub fn new(data: Array3<f32>, spacing: Spacing, domain: Domain) -> Result<Self> {
        check_spacing(spacing)?;
        if data.is_empty() {
            return Err(Error::Shape("volume has no voxels".into()));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite voxel value {bad}")));
        }
        if domain == Domain::Unit {
            if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::InvalidArgument(format!("UNIT volume has value {bad} outside [0,1]")));
            }
        }
        Ok(Self { data, spacing, domain, provenance: String::new() })
    }

    pub fn with_provenance(mut self, provenance: impl Into<String>) -> Self {
        self.provenance = provenance.into();
        self
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f32> {
        self.data
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn shape(&self) -> [usize; 3] {
        let s = self.data.shape();
        [s[0], s[1], s[2]]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Smallest and largest voxel values.
    pub fn min_max(&self) -> (f32, f32) {
        self.data.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn require_domain(&self, expected: Domain) -> Result<()> {
        if self.domain == expected {
            Ok(())
        } else {
            Err(Error::Domain { expected, actual: self.domain })
        }
    }

    /// New volume with the same geometry and provenance but different content.
    pub fn with_data(&self, data: Array3<f32>, domain: Domain) -> Result<Self> {
        Ok(Volume::new(data, self.spacing, domain)?.with_provenance(self.provenance.clone()))
    }

    /// Clamps into `[0, 1]` and tags the result `UNIT`.
    pub fn clamp_unit(&self) -> Volume {
        let data = self.data.mapv(|v| if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 });
        Volume { data, spacing: self.spacing, domain: Domain::Unit, provenance: self.provenance.clone() }
    }

    /// Single-channel network input `[1, D, H, W]`.
    pub fn to_tensor<T: skullcut_nn::Scalar>(&self) -> Tensor<T> {
        let [d, h, w] = self.shape();
        let data = self.data.iter().map(|&v| T::lit(v as f64)).collect();
        Tensor::from_vec(&[1, d, h, w], data).expect("volume tensor shape")
    }

    /// Rebuilds a volume from a `[1, D, H, W]` tensor, keeping this volume's spacing.
    pub fn from_tensor<T: skullcut_nn::Scalar>(t: &Tensor<T>, spacing: Spacing, domain: Domain) -> Result<Self> {
        let (c, [d, h, w]) = t.dims4()?;
        if c != 1 {
            return Err(Error::Shape(format!("expected one channel, got {c}")));
        }
        let data = t.data().iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect();
        let arr = Array3::from_shape_vec((d, h, w), data).map_err(|e| Error::Shape(e.to_string()))?;
        Volume::new(arr, spacing, domain)
    }
}

/// Binary mask aligned to a [`Volume`].
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationMask {
    data: Array3<bool>,
    spacing: Spacing,
}

impl SegmentationMask {
    pub fn new(data: Array3<bool>, spacing: Spacing) -> Result<Self> {
        check_spacing(spacing)?;
        Ok(Self { data, spacing })
    }

    pub fn empty(shape: [usize; 3], spacing: Spacing) -> Result<Self> {
        Self::new(Array3::from_elem(shape, false), spacing)
    }

    pub fn data(&self) -> &Array3<bool> {
        &self.data
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn shape(&self) -> [usize; 3] {
        let s = self.data.shape();
        [s[0], s[1], s[2]]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// `ARBITRARY`-domain volume holding 0.0 / 1.0.
    pub fn to_volume(&self) -> Volume {
        let data = self.data.mapv(|v| if v { 1.0 } else { 0.0 });
        Volume::new(data, self.spacing, Domain::Arbitrary).expect("mask volume is valid")
    }

    /// Accepts only volumes whose values are exactly 0 or 1.
    pub fn from_volume(v: &Volume) -> Result<Self> {
        if let Some(bad) = v.data().iter().find(|&&x| x != 0.0 && x != 1.0) {
            return Err(Error::InvalidArgument(format!("mask value {bad} is not 0 or 1")));
        }
        Self::new(v.data().mapv(|x| x == 1.0), v.spacing())
    }

    pub fn same_shape(&self, other: &SegmentationMask) -> Result<()> {
        if self.shape() == other.shape() {
            Ok(())
        } else {
            Err(Error::Shape(format!("mask {:?} vs {:?}", self.shape(), other.shape())))
        }
    }

    /// Voxelwise difference `self \ other`.
    pub fn minus(&self, other: &SegmentationMask) -> Result<SegmentationMask> {
        self.same_shape(other)?;
        let mut data = self.data.clone();
        Zip::from(&mut data).and(&other.data).for_each(|a, &b| *a = *a && !b);
        Ok(SegmentationMask { data, spacing: self.spacing })
    }
}
