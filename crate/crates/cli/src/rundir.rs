//! Run-directory stamps: the resolved config plus the versions needed to rerun it.

use std::path::Path;

use crate::config::PipelineConfig;
use crate::error::{CliError, Result};

pub const CONFIG_FILE: &str = "config.ini";
pub const STAMP_FILE: &str = "run.json";

#[derive(Debug, serde::Serialize)]
struct Stamp<'a> {
    command: &'a str,
    seed: u64,
    version: &'a str,
    checkpoint_format: u32,
}

/// Creates `dir` and writes `config.ini` and `run.json` into it.
pub fn prepare_run_dir(dir: &Path, config: &PipelineConfig, command: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let ini = dir.join(CONFIG_FILE);
    std::fs::write(&ini, config.to_ini()).map_err(|e| CliError::io(&ini, e))?;
    let stamp = Stamp {
        command,
        seed: config.run.seed,
        version: env!("CARGO_PKG_VERSION"),
        checkpoint_format: skullcut_core::checkpoint::FORMAT_VERSION,
    };
    let path = dir.join(STAMP_FILE);
    let text = serde_json::to_string_pretty(&stamp).expect("stamp serializes");
    std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))
}
