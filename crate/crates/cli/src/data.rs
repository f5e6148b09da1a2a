//! Case discovery and per-modality preprocessing for the commands.

use std::path::{Path, PathBuf};

use skullcut_core::volume_io::{load_auto, minmax_normalize, preprocess_ct, resample};
use skullcut_core::{Domain, Volume};

use crate::error::{CliError, Result};

const EXTENSIONS: [&str; 4] = [".nii.gz", ".nii", ".raw", ".f32"];

/// Case id of a volume file: the name without its volume extension.
pub fn case_id(path: &Path) -> Option<String> {
    let name = path.file_name()?.to_str()?;
    let lower = name.to_ascii_lowercase();
    EXTENSIONS.iter().find(|e| lower.ends_with(*e)).map(|e| name[..name.len() - e.len()].to_owned())
}

/// Volume files of a directory, sorted by case id.
pub fn list_cases(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    if !dir.is_dir() {
        return Err(CliError::Missing { what: "directory", path: dir.into() });
    }
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut cases = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.is_file() {
            if let Some(id) = case_id(&path) {
                cases.push((id, path));
            }
        }
    }
    cases.sort();
    Ok(cases)
}

pub fn require_file(path: &Path, what: &'static str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Missing { what, path: path.into() })
    }
}

pub fn load(path: &Path, what: &'static str) -> Result<Volume> {
    require_file(path, what)?;
    Ok(load_auto(path)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Modality {
    Mr,
    Ct,
}

/// Brings a volume to the `UNIT` network domain; `UNIT` inputs pass through.
///
/// CT in HU is floored at `floor_hu` before min-max scaling. Everything
/// else is min-max scaled as is.
pub fn to_unit(v: &Volume, modality: Modality, floor_hu: f32) -> Result<Volume> {
    Ok(match (v.domain(), modality) {
        (Domain::Unit, _) => v.clone(),
        (Domain::Hu, Modality::Ct) => preprocess_ct(v, floor_hu)?,
        _ => minmax_normalize(v)?,
    })
}

/// Optional resampling, then [`to_unit`].
pub fn prepare(v: &Volume, modality: Modality, floor_hu: f32, shape: &[usize]) -> Result<Volume> {
    let v = match shape {
        [d, h, w] if v.shape() != [*d, *h, *w] => resample(v, [*d, *h, *w])?,
        _ => v.clone(),
    };
    to_unit(&v, modality, floor_hu)
}

/// Loads and prepares every volume of `dir`.
pub fn load_training_set(dir: &str, key: &str, modality: Modality, floor_hu: f32, shape: &[usize]) -> Result<Vec<Volume>> {
    if dir.is_empty() {
        return Err(CliError::Usage(format!("`{key}` is not set")));
    }
    let cases = list_cases(Path::new(dir))?;
    if cases.is_empty() {
        return Err(CliError::Runtime(skullcut_core::Error::EmptyDataset(format!("no volumes in {dir}"))));
    }
    cases.iter().map(|(_, p)| prepare(&load_auto(p)?, modality, floor_hu, shape)).collect()
}
