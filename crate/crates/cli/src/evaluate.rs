//! `evaluate`: per-case Dice and surface Dice between two mask directories.

use std::path::Path;

use skullcut_core::metrics::evaluate_masks;
use skullcut_core::volume_io::load_auto;
use skullcut_core::SegmentationMask;

use crate::data::list_cases;
use crate::error::{CliError, Result};

pub const REPORT_HEADER: &str = "case,dsc,sdsc,tolerance_mm";

#[derive(Clone, Debug, PartialEq)]
pub struct CaseScore {
    pub case: String,
    pub dsc: f64,
    pub sdsc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub cases: Vec<CaseScore>,
    pub mean_dsc: f64,
    pub mean_sdsc: f64,
    pub tolerance_mm: f64,
}

impl Report {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{REPORT_HEADER}\n");
        let tol = self.tolerance_mm;
        for c in &self.cases {
            out.push_str(&format!("{},{},{},{tol}\n", c.case, c.dsc, c.sdsc));
        }
        out.push_str(&format!("mean,{},{},{tol}\n", self.mean_dsc, self.mean_sdsc));
        out
    }
}

fn load_mask(path: &Path) -> Result<SegmentationMask> {
    Ok(SegmentationMask::from_volume(&load_auto(path)?)?)
}

/// Scores every case present in both directories; case sets must match.
pub fn evaluate_dirs(pred_dir: &Path, truth_dir: &Path, tolerance_mm: f64) -> Result<Report> {
    let pred = list_cases(pred_dir)?;
    let truth = list_cases(truth_dir)?;
    let ids = |v: &[(String, std::path::PathBuf)]| v.iter().map(|(id, _)| id.clone()).collect::<Vec<_>>();
    let (pred_ids, truth_ids) = (ids(&pred), ids(&truth));
    if let Some(id) = pred_ids.iter().find(|id| !truth_ids.contains(id)) {
        return Err(unmatched(id, truth_dir));
    }
    if let Some(id) = truth_ids.iter().find(|id| !pred_ids.contains(id)) {
        return Err(unmatched(id, pred_dir));
    }
    if pred.is_empty() {
        return Err(CliError::Runtime(skullcut_core::Error::EmptyDataset(format!("no masks in {}", pred_dir.display()))));
    }
    let mut cases = Vec::new();
    for ((case, p), (_, t)) in pred.iter().zip(&truth) {
        let [dsc, sdsc] = evaluate_masks(&load_mask(p)?, &load_mask(t)?, tolerance_mm)?;
        cases.push(CaseScore { case: case.clone(), dsc: dsc.value, sdsc: sdsc.value });
    }
    let n = cases.len() as f64;
    Ok(Report {
        mean_dsc: cases.iter().map(|c| c.dsc).sum::<f64>() / n,
        mean_sdsc: cases.iter().map(|c| c.sdsc).sum::<f64>() / n,
        cases,
        tolerance_mm,
    })
}

fn unmatched(id: &str, dir: &Path) -> CliError {
    CliError::Runtime(skullcut_core::Error::InvalidArgument(format!("case `{id}` has no counterpart in {}", dir.display())))
}
