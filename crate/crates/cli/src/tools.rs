//! `phantom-gen` and `preprocess`.

use std::path::{Path, PathBuf};

use skullcut_core::phantom::{make_phantom, Defect, PhantomSpec};
use skullcut_core::rng::derive_seed;
use skullcut_core::volume_io::save_auto;

use crate::data::{load, prepare, Modality};
use crate::error::{CliError, Result};

#[derive(Clone, Debug)]
pub struct PhantomArgs {
    pub out_dir: PathBuf,
    pub count: usize,
    pub size: usize,
    pub seed: u64,
    pub jitter: bool,
    pub mr_noise: f64,
    pub ct_noise_hu: f64,
    /// `(z, y, x, radius)` in voxels.
    pub defect: Option<[f64; 4]>,
}

/// Seed of phantom case `i` under the run seed.
pub fn phantom_seed(seed: u64, i: usize) -> u64 {
    derive_seed(seed, &format!("phantom.{i}"))
}

/// Writes `mr/`, `ct/` and `mask/` subdirectories with one `case_NNN.nii.gz` per phantom.
pub fn phantom_gen(args: &PhantomArgs) -> Result<Vec<String>> {
    let dirs = ["mr", "ct", "mask"].map(|d| args.out_dir.join(d));
    for d in &dirs {
        std::fs::create_dir_all(d).map_err(|e| CliError::io(d, e))?;
    }
    let mut ids = Vec::new();
    for i in 0..args.count {
        let seed = phantom_seed(args.seed, i);
        let shape = [args.size; 3];
        let spec = if args.jitter { PhantomSpec::jittered(shape, seed) } else { PhantomSpec::centered(shape, seed) };
        let mut spec = spec.with_noise(args.mr_noise, args.ct_noise_hu);
        if let Some([z, y, x, radius]) = args.defect {
            spec = spec.with_defect(Defect { center: [z, y, x], radius });
        }
        let p = make_phantom(&spec)?;
        let id = format!("case_{i:03}");
        let name = format!("{id}.nii.gz");
        save_auto(&p.mr, &dirs[0].join(&name))?;
        save_auto(&p.ct, &dirs[1].join(&name))?;
        save_auto(&p.mask.to_volume(), &dirs[2].join(&name))?;
        ids.push(id);
    }
    Ok(ids)
}

/// Resamples (optionally) and normalizes one volume to the network domain.
pub fn preprocess(input: &Path, output: &Path, modality: Modality, floor_hu: f32, shape: &[usize]) -> Result<()> {
    let v = load(input, "input volume")?;
    let out = prepare(&v, modality, floor_hu, shape)?;
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    Ok(save_auto(&out, output)?)
}
