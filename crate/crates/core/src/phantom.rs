//! Deterministic synthetic head phantoms: an ellipsoidal skull shell around
//! a brain ellipsoid, rendered as an MR-like and a CT-like volume that are
//! voxel-aligned, together with the ground-truth shell mask.

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::volume::{Domain, SegmentationMask, Spacing, Volume};

/// Tissue intensities per pseudo-modality.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PhantomIntensities {
    pub mr_exterior: f32,
    pub mr_shell: f32,
    pub mr_brain: f32,
    pub ct_exterior: f32,
    pub ct_shell: f32,
    pub ct_brain: f32,
}

impl Default for PhantomIntensities {
    fn default() -> Self {
        // Bone is dark on MR; on CT it sits far above a +200 HU cut and brain far below.
        Self { mr_exterior: 0.0, mr_shell: 0.15, mr_brain: 0.8, ct_exterior: -1000.0, ct_shell: 1400.0, ct_brain: 30.0 }
    }
}

/// Spherical hole punched through the shell.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Defect {
    /// Voxel coordinates `(z, y, x)`.
    pub center: [f64; 3],
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PhantomSpec {
    pub shape: [usize; 3],
    pub spacing: Spacing,
    /// Shell centre in voxel coordinates `(z, y, x)`.
    pub center: [f64; 3],
    /// Outer semi-axes of the shell, in voxels.
    pub semi_axes: [f64; 3],
    /// Shell thickness in voxels; the brain fills the inner ellipsoid.
    pub thickness: f64,
    pub intensities: PhantomIntensities,
    /// Gaussian noise std on the MR-like volume (unit scale).
    pub mr_noise: f64,
    /// Gaussian noise std on the CT-like volume, in HU.
    pub ct_noise_hu: f64,
    pub defect: Option<Defect>,
    pub seed: u64,
}

impl PhantomSpec {
    /// Centred head filling most of the grid.
    pub fn centered(shape: [usize; 3], seed: u64) -> Self {
        let n = shape.map(|s| s as f64);
        let min = n.iter().copied().fold(f64::INFINITY, f64::min);
        Self {
            shape,
            spacing: [1.0; 3],
            center: n.map(|s| (s - 1.0) / 2.0),
            semi_axes: [0.40 * n[0], 0.44 * n[1], 0.38 * n[2]],
            thickness: (0.125 * min).max(1.5),
            intensities: PhantomIntensities::default(),
            mr_noise: 0.0,
            ct_noise_hu: 0.0,
            defect: None,
            seed,
        }
    }

    /// [`PhantomSpec::centered`] with seed-dependent jitter of position, size and thickness.
    pub fn jittered(shape: [usize; 3], seed: u64) -> Self {
        let mut spec = Self::centered(shape, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_9a17_0b1e_c7ed);
        for a in 0..3 {
            spec.semi_axes[a] *= rng.random_range(0.9..1.05);
            spec.center[a] += rng.random_range(-1.0..1.0) * 0.03 * shape[a] as f64;
        }
        spec.thickness *= rng.random_range(0.85..1.15);
        for a in 0..3 {
            let hi = (shape[a] - 1) as f64 - spec.semi_axes[a];
            spec.center[a] = spec.center[a].clamp(spec.semi_axes[a].min(hi), hi.max(spec.semi_axes[a]));
        }
        spec
    }

    pub fn with_noise(mut self, mr_noise: f64, ct_noise_hu: f64) -> Self {
        self.mr_noise = mr_noise;
        self.ct_noise_hu = ct_noise_hu;
        self
    }

    pub fn with_defect(mut self, defect: Defect) -> Self {
        self.defect = Some(defect);
        self
    }

    fn validate(&self) -> Result<()> {
        if self.shape.contains(&0) {
            return Err(Error::InvalidArgument(format!("phantom shape {:?}", self.shape)));
        }
        let min_axis = self.semi_axes.iter().copied().fold(f64::INFINITY, f64::min);
        if !(self.thickness > 0.0 && self.thickness < min_axis) {
            return Err(Error::InvalidArgument(format!(
                "shell thickness {} must lie in (0, {min_axis})",
                self.thickness
            )));
        }
        for a in 0..3 {
            let lo = self.center[a] - self.semi_axes[a];
            let hi = self.center[a] + self.semi_axes[a];
            if lo < 0.0 || hi > (self.shape[a] - 1) as f64 {
                return Err(Error::InvalidArgument(format!(
                    "shell spans [{lo:.2}, {hi:.2}] on axis {a}, outside [0, {}]",
                    self.shape[a] - 1
                )));
            }
        }
        if self.mr_noise < 0.0 || self.ct_noise_hu < 0.0 {
            return Err(Error::InvalidArgument("noise std must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Tissue {
    Exterior,
    Shell,
    Brain,
}

fn tissue_at(spec: &PhantomSpec, p: [f64; 3]) -> Tissue {
    let inner = spec.semi_axes.map(|a| a - spec.thickness);
    let radial = |axes: [f64; 3]| (0..3).map(|a| ((p[a] - spec.center[a]) / axes[a]).powi(2)).sum::<f64>();
    if radial(inner) <= 1.0 {
        Tissue::Brain
    } else if radial(spec.semi_axes) <= 1.0 {
        Tissue::Shell
    } else {
        Tissue::Exterior
    }
}

fn in_defect(defect: &Option<Defect>, p: [f64; 3]) -> bool {
    defect.is_some_and(|d| (0..3).map(|a| (p[a] - d.center[a]).powi(2)).sum::<f64>() < d.radius * d.radius)
}

/// Phantom triplet: MR-like (`UNIT`), CT-like (`HU`), shell mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub mr: Volume,
    pub ct: Volume,
    pub mask: SegmentationMask,
}

fn noise_field(shape: [usize; 3], std: f64, rng: &mut ChaCha8Rng) -> Option<Array3<f32>> {
    (std > 0.0).then(|| {
        let dist = Normal::new(0.0, std).expect("finite std");
        Array3::from_shape_simple_fn(shape, || dist.sample(rng) as f32)
    })
}

pub fn make_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let it = spec.intensities;
    let labels = Array3::from_shape_fn(spec.shape, |(z, y, x)| {
        let p = [z as f64, y as f64, x as f64];
        match tissue_at(spec, p) {
            Tissue::Shell if in_defect(&spec.defect, p) => Tissue::Exterior,
            t => t,
        }
    });
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mr_noise = noise_field(spec.shape, spec.mr_noise, &mut rng);
    let ct_noise = noise_field(spec.shape, spec.ct_noise_hu, &mut rng);
    let mut mr = labels.mapv(|t| match t {
        Tissue::Exterior => it.mr_exterior,
        Tissue::Shell => it.mr_shell,
        Tissue::Brain => it.mr_brain,
    });
    let mut ct = labels.mapv(|t| match t {
        Tissue::Exterior => it.ct_exterior,
        Tissue::Shell => it.ct_shell,
        Tissue::Brain => it.ct_brain,
    });
    if let Some(n) = mr_noise {
        mr += &n;
    }
    if let Some(n) = ct_noise {
        ct += &n;
    }
    mr.mapv_inplace(|v| v.clamp(0.0, 1.0));
    let tag = format!("phantom:seed={}", spec.seed);
    Ok(Phantom {
        mr: Volume::new(mr, spec.spacing, Domain::Unit)?.with_provenance(format!("{tag}:mr")),
        ct: Volume::new(ct, spec.spacing, Domain::Hu)?.with_provenance(format!("{tag}:ct")),
        mask: SegmentationMask::new(labels.mapv(|t| t == Tissue::Shell), spec.spacing)?,
    })
}

/// Like [`make_phantom`] but requires a defect to be configured.
pub fn make_defect_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    if spec.defect.is_none() {
        return Err(Error::InvalidArgument("defect phantom requested without a defect".into()));
    }
    make_phantom(spec)
}
