//! `train-cut` and `train-sr`: resumable training runs with CSV loss logs.
//!
//! A run directory holds `config.ini`, `run.json`, `loss.csv` and
//! `latest.ckpt`. The checkpoint is rewritten at every epoch end (and every
//! `run.checkpoint_every` steps), so `--resume` continues from the last
//! snapshot and drops log rows written after it.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use skullcut_core::checkpoint::Checkpoint;
use skullcut_core::cut::{CutDataset, CutTrainer, LOSS_CSV_HEADER};
use skullcut_core::lapsrn::{SrDataset, SrTrainer, SR_LOSS_CSV_HEADER};

use crate::config::PipelineConfig;
use crate::data::{load_training_set, Modality};
use crate::error::{CliError, Result};
use crate::rundir::prepare_run_dir;

pub const CHECKPOINT_FILE: &str = "latest.ckpt";
pub const LOSS_FILE: &str = "loss.csv";

/// What a training command left behind.
#[derive(Debug)]
pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub steps: u64,
    pub finished: bool,
}

trait Job {
    fn step(&self) -> u64;
    fn finished(&self) -> bool;
    fn at_epoch_boundary(&self) -> bool;
    /// One optimizer step; returns the CSV row.
    fn train_step(&mut self) -> Result<String>;
    fn checkpoint(&self) -> Result<Checkpoint>;
}

struct CutJob<'a> {
    trainer: CutTrainer,
    data: &'a CutDataset,
}

impl Job for CutJob<'_> {
    fn step(&self) -> u64 {
        self.trainer.step()
    }
    fn finished(&self) -> bool {
        self.trainer.is_finished()
    }
    fn at_epoch_boundary(&self) -> bool {
        self.trainer.at_epoch_boundary()
    }
    fn train_step(&mut self) -> Result<String> {
        Ok(self.trainer.train_step(self.data)?.csv_row())
    }
    fn checkpoint(&self) -> Result<Checkpoint> {
        Ok(self.trainer.to_checkpoint()?)
    }
}

struct SrJob<'a> {
    trainer: SrTrainer,
    data: &'a SrDataset,
}

impl Job for SrJob<'_> {
    fn step(&self) -> u64 {
        self.trainer.step()
    }
    fn finished(&self) -> bool {
        self.trainer.is_finished()
    }
    fn at_epoch_boundary(&self) -> bool {
        self.trainer.at_epoch_boundary()
    }
    fn train_step(&mut self) -> Result<String> {
        Ok(self.trainer.train_step(self.data)?.csv_row())
    }
    fn checkpoint(&self) -> Result<Checkpoint> {
        Ok(self.trainer.to_checkpoint()?)
    }
}

pub fn cut_run_dir(config: &PipelineConfig) -> PathBuf {
    Path::new(&config.run.out_dir).join("cut")
}

pub fn sr_run_dir(config: &PipelineConfig) -> PathBuf {
    Path::new(&config.run.out_dir).join("lapsrn")
}

pub fn train_cut(config: &PipelineConfig, resume: bool) -> Result<TrainOutcome> {
    let d = &config.data;
    let mr = load_training_set(&d.mr_dir, "data.mr_dir", Modality::Mr, d.floor_hu, &d.shape)?;
    let ct = load_training_set(&d.ct_dir, "data.ct_dir", Modality::Ct, d.floor_hu, &d.shape)?;
    let data = CutDataset::new(&mr, &ct, &config.cut)?;
    let dir = cut_run_dir(config);
    let ckpt_path = dir.join(CHECKPOINT_FILE);
    let trainer = match resume_from(&ckpt_path, resume)? {
        Some(ck) => CutTrainer::from_checkpoint(&ck, &ckpt_path, &data)?,
        None => CutTrainer::new(&config.cut, &data)?,
    };
    prepare_run_dir(&dir, config, "train-cut")?;
    drive(CutJob { trainer, data: &data }, config, &dir, LOSS_CSV_HEADER, resume)
}

pub fn train_sr(config: &PipelineConfig, resume: bool) -> Result<TrainOutcome> {
    let d = &config.data;
    let (dir_key, source) = if d.sr_dir.is_empty() { ("data.ct_dir", &d.ct_dir) } else { ("data.sr_dir", &d.sr_dir) };
    let hr = load_training_set(source, dir_key, Modality::Ct, d.floor_hu, &d.shape)?;
    let l = &config.lapsrn;
    let data = SrDataset::new(&hr, &l.pyramid, &l.train)?;
    let dir = sr_run_dir(config);
    let ckpt_path = dir.join(CHECKPOINT_FILE);
    let trainer = match resume_from(&ckpt_path, resume)? {
        Some(ck) => SrTrainer::from_checkpoint(&ck, &ckpt_path, &data)?,
        None => SrTrainer::new(&l.pyramid, &l.train, &l.augmentation, &data)?,
    };
    prepare_run_dir(&dir, config, "train-sr")?;
    drive(SrJob { trainer, data: &data }, config, &dir, SR_LOSS_CSV_HEADER, resume)
}

fn resume_from(path: &Path, resume: bool) -> Result<Option<Checkpoint>> {
    if !resume {
        return Ok(None);
    }
    if !path.is_file() {
        return Err(CliError::Missing { what: "checkpoint to resume from", path: path.into() });
    }
    Ok(Some(Checkpoint::load(path)?))
}

fn drive(mut job: impl Job, config: &PipelineConfig, dir: &Path, header: &str, resume: bool) -> Result<TrainOutcome> {
    let log_path = dir.join(LOSS_FILE);
    let mut log = if resume { reopen_log(&log_path, header, job.step())? } else { fresh_log(&log_path, header)? };
    let ckpt_path = dir.join(CHECKPOINT_FILE);
    let stop = config.run.stop_after_steps;
    let every = config.run.checkpoint_every;
    let save = |job: &dyn Job| -> Result<()> { Ok(job.checkpoint()?.save(&ckpt_path)?) };
    save(&job)?;
    while !job.finished() && (stop == 0 || job.step() < stop) {
        let row = job.train_step()?;
        writeln!(log, "{row}").and_then(|_| log.flush()).map_err(|e| CliError::io(&log_path, e))?;
        if job.at_epoch_boundary() || (every > 0 && job.step() % every == 0) {
            save(&job)?;
        }
    }
    save(&job)?;
    Ok(TrainOutcome { run_dir: dir.into(), checkpoint: ckpt_path, steps: job.step(), finished: job.finished() })
}

fn fresh_log(path: &Path, header: &str) -> Result<File> {
    let mut f = File::create(path).map_err(|e| CliError::io(path, e))?;
    writeln!(f, "{header}").map_err(|e| CliError::io(path, e))?;
    Ok(f)
}

/// Keeps the header and rows up to `step`, then reopens for appending.
fn reopen_log(path: &Path, header: &str, step: u64) -> Result<File> {
    if !path.is_file() {
        return fresh_log(path, header);
    }
    let reader = BufReader::new(File::open(path).map_err(|e| CliError::io(path, e))?);
    let mut kept = vec![header.to_owned()];
    for line in reader.lines().skip(1) {
        let line = line.map_err(|e| CliError::io(path, e))?;
        let row_step = line.split(',').next().and_then(|s| s.parse::<u64>().ok());
        match row_step {
            Some(s) if s <= step => kept.push(line),
            _ => break,
        }
    }
    std::fs::write(path, kept.join("\n") + "\n").map_err(|e| CliError::io(path, e))?;
    OpenOptions::new().append(true).open(path).map_err(|e| CliError::io(path, e))
}
