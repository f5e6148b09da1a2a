use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use skullcut::data::Modality;
use skullcut::evaluate::evaluate_dirs;
use skullcut::infer::{run_infer, InferArgs};
use skullcut::tools::{phantom_gen, preprocess, PhantomArgs};
use skullcut::train::{cut_run_dir, sr_run_dir, train_cut, train_sr, TrainOutcome, CHECKPOINT_FILE};
use skullcut::{CliError, PipelineConfig};

/// Skull segmentation from MR via synthetic CT.
#[derive(Debug, Parser)]
#[command(name = "skullcut", version)]
struct Cli {
    /// INI config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set cut.train.lr=1e-4`. Repeatable; applied after the file.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Same as `--set run.seed=N`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Same as `--set run.out_dir=DIR`.
    #[arg(long, global = true)]
    out_dir: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write synthetic MR/CT/mask phantom triplets.
    PhantomGen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// Cube edge length in voxels.
        #[arg(long, default_value_t = 32)]
        size: usize,
        /// Vary position, size and thickness per case.
        #[arg(long)]
        jitter: bool,
        #[arg(long, default_value_t = 0.0)]
        mr_noise: f64,
        #[arg(long, default_value_t = 0.0)]
        ct_noise_hu: f64,
        /// Spherical shell defect `z,y,x,radius` in voxels.
        #[arg(long, value_delimiter = ',', num_args = 4)]
        defect: Option<Vec<f64>>,
    },
    /// Resample (per `data.shape`) and normalize one volume to [0, 1].
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum)]
        modality: Modality,
    },
    /// Train the MR→CT translation model on `data.mr_dir` / `data.ct_dir`.
    TrainCut {
        /// Continue from `<out_dir>/cut/latest.ckpt`.
        #[arg(long)]
        resume: bool,
    },
    /// Train the super-resolution network on `data.sr_dir` (or `data.ct_dir`).
    TrainSr {
        /// Continue from `<out_dir>/lapsrn/latest.ckpt`.
        #[arg(long)]
        resume: bool,
    },
    /// Segment the skull in one MR volume.
    Infer {
        #[arg(long, required_unless_present = "syn_ct")]
        mr: Option<PathBuf>,
        /// Start from a saved synthetic CT instead of translating `--mr`.
        #[arg(long, conflicts_with = "mr")]
        syn_ct: Option<PathBuf>,
        /// CT in HU whose intensity distribution the output is matched to.
        #[arg(long)]
        reference_ct: PathBuf,
        /// Defaults to `<out_dir>/cut/latest.ckpt`.
        #[arg(long)]
        cut_ckpt: Option<PathBuf>,
        /// Defaults to `<out_dir>/lapsrn/latest.ckpt`.
        #[arg(long)]
        sr_ckpt: Option<PathBuf>,
        /// Defaults to `<out_dir>/infer`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Leave out super-resolution; the mask stays at the generator's resolution.
        #[arg(long)]
        skip_sr: bool,
    },
    /// Score predicted masks against ground truth.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Defaults to `<out_dir>/evaluation.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("run.seed={seed}"));
    }
    if let Some(dir) = &cli.out_dir {
        overrides.push(format!("run.out_dir={dir}"));
    }
    PipelineConfig::load(cli.config.as_deref(), &overrides)
}

fn report_training(kind: &str, o: &TrainOutcome) {
    let state = if o.finished { "finished" } else { "stopped" };
    println!("{kind} {state} at step {}; checkpoint {}", o.steps, o.checkpoint.display());
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = load_config(&cli)?;
    let out_root = PathBuf::from(&config.run.out_dir);
    match cli.command {
        Command::PhantomGen { out, count, size, jitter, mr_noise, ct_noise_hu, defect } => {
            let defect = defect.map(|d| [d[0], d[1], d[2], d[3]]);
            let args = PhantomArgs { out_dir: out.clone(), count, size, seed: config.run.seed, jitter, mr_noise, ct_noise_hu, defect };
            let ids = phantom_gen(&args)?;
            println!("wrote {} phantom case(s) to {}", ids.len(), out.display());
        }
        Command::Preprocess { input, output, modality } => {
            preprocess(&input, &output, modality, config.data.floor_hu, &config.data.shape)?;
            println!("wrote {}", output.display());
        }
        Command::TrainCut { resume } => report_training("train-cut", &train_cut(&config, resume)?),
        Command::TrainSr { resume } => report_training("train-sr", &train_sr(&config, resume)?),
        Command::Infer { mr, syn_ct, reference_ct, cut_ckpt, sr_ckpt, out, skip_sr } => {
            let args = InferArgs {
                mr,
                syn_ct,
                cut_checkpoint: cut_ckpt.unwrap_or_else(|| cut_run_dir(&config).join(CHECKPOINT_FILE)),
                sr_checkpoint: sr_ckpt.unwrap_or_else(|| sr_run_dir(&config).join(CHECKPOINT_FILE)),
                reference_ct,
                out_dir: out.unwrap_or_else(|| out_root.join("infer")),
                skip_sr,
            };
            let result = run_infer(&config, &args)?;
            println!("mask {:?} with {} skull voxels written to {}", result.mask.shape(), result.mask.count(), args.out_dir.display());
        }
        Command::Evaluate { pred, truth, out } => {
            let report = evaluate_dirs(&pred, &truth, config.metrics.tolerance_mm)?;
            let path = out.unwrap_or_else(|| out_root.join("evaluation.csv"));
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(|e| CliError::Io { path: parent.into(), source: e })?;
            }
            std::fs::write(&path, report.to_csv()).map_err(|e| CliError::Io { path: path.clone(), source: e })?;
            println!("{} case(s): mean DSC {:.4}, mean SDSC {:.4}; report {}", report.cases.len(), report.mean_dsc, report.mean_sdsc, path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
