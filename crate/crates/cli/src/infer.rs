//! `infer`: MR → synthetic CT → super-resolution → histogram matching →
//! threshold → opening → closing. Each intermediate is written out and can
//! be fed back in with `syn_ct` to rerun the later stages.

use std::path::{Path, PathBuf};

use skullcut_core::cut::{load_generator, translate};
use skullcut_core::lapsrn::{load_sr_network, super_resolve};
use skullcut_core::postprocess::{binary_close, binary_open, histogram_match, threshold_hu};
use skullcut_core::volume_io::save_auto;
use skullcut_core::{Domain, SegmentationMask, Volume};

use crate::config::PipelineConfig;
use crate::data::{load, require_file, to_unit, Modality};
use crate::error::{CliError, Result};

pub const SYN_CT_FILE: &str = "syn_ct.nii.gz";
pub const SR_CT_FILE: &str = "sr_ct.nii.gz";
pub const MATCHED_CT_FILE: &str = "matched_ct.nii.gz";
pub const MASK_FILE: &str = "mask.nii.gz";

#[derive(Clone, Debug)]
pub struct InferArgs {
    pub mr: Option<PathBuf>,
    /// Previously written synthetic CT; replaces `mr` and the translation stage.
    pub syn_ct: Option<PathBuf>,
    pub cut_checkpoint: PathBuf,
    pub sr_checkpoint: PathBuf,
    pub reference_ct: PathBuf,
    pub out_dir: PathBuf,
    pub skip_sr: bool,
}

#[derive(Debug)]
pub struct InferOutputs {
    pub syn_ct: Volume,
    pub sr_ct: Option<Volume>,
    pub matched_ct: Volume,
    pub mask: SegmentationMask,
}

/// Fails with exit code 2 on the first input that does not exist, before any work.
fn check_inputs(args: &InferArgs) -> Result<()> {
    match (&args.mr, &args.syn_ct) {
        (_, Some(syn)) => require_file(syn, "synthetic CT")?,
        (Some(mr), None) => {
            require_file(mr, "MR volume")?;
            require_file(&args.cut_checkpoint, "translation checkpoint")?;
        }
        (None, None) => return Err(CliError::Usage("either an MR volume or a synthetic CT is required".into())),
    }
    if !args.skip_sr {
        require_file(&args.sr_checkpoint, "super-resolution checkpoint")?;
    }
    require_file(&args.reference_ct, "reference CT")
}

pub fn run_infer(config: &PipelineConfig, args: &InferArgs) -> Result<InferOutputs> {
    check_inputs(args)?;
    let reference = load(&args.reference_ct, "reference CT")?;
    reference.require_domain(Domain::Hu)?;
    let syn_ct = match (&args.syn_ct, &args.mr) {
        (Some(path), _) => {
            let v = load(path, "synthetic CT")?;
            v.require_domain(Domain::Unit)?;
            v
        }
        (None, Some(mr)) => {
            let generator = load_generator(&args.cut_checkpoint)?;
            let mr = to_unit(&load(mr, "MR volume")?, Modality::Mr, config.data.floor_hu)?;
            translate(&generator, &mr)?
        }
        (None, None) => unreachable!("checked above"),
    };
    let sr_ct = if args.skip_sr {
        None
    } else {
        let (network, _) = load_sr_network(&args.sr_checkpoint)?;
        let l = &config.lapsrn;
        let levels = network.spec.levels;
        let halo = if l.infer_halo == 0 { network.spec.receptive_radius(levels) } else { l.infer_halo };
        Some(super_resolve(&network, &syn_ct, levels, l.infer_core_size, halo)?)
    };
    let matched_ct = histogram_match(sr_ct.as_ref().unwrap_or(&syn_ct), &reference)?;
    let p = &config.postprocess;
    let mask = binary_close(&binary_open(&threshold_hu(&matched_ct, p.bone_threshold_hu)?, p), p);

    let out = &args.out_dir;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let write = |v: &Volume, name: &str| -> Result<()> { Ok(save_auto(v, &out.join(name))?) };
    write(&syn_ct, SYN_CT_FILE)?;
    if let Some(v) = &sr_ct {
        write(v, SR_CT_FILE)?;
    } else {
        remove_stale(&out.join(SR_CT_FILE))?;
    }
    write(&matched_ct, MATCHED_CT_FILE)?;
    write(&mask.to_volume(), MASK_FILE)?;
    Ok(InferOutputs { syn_ct, sr_ct, matched_ct, mask })
}

/// A skipped stage must not leave an earlier run's output looking current.
fn remove_stale(path: &Path) -> Result<()> {
    match std::fs::remove_file(path) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(CliError::io(path, e)),
        _ => Ok(()),
    }
}
