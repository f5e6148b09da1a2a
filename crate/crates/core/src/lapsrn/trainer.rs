//! Chunk-sampling SGD training loop, checkpointing and chunked inference.

use std::path::Path;

use ndarray::s;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use skullcut_nn::{Adam, AdamConfig, Binding, Graph, ParamSet, Sgd, SgdConfig, Tensor};

use super::augment::{augment, AugmentationConfig};
use super::chunks::{assemble_chunks, chunk_volume, Chunk, ChunkGrid};
use super::network::{charbonnier_loss, predict_levels, sr_forward, SrNetwork};
use super::{PyramidSpec, SrOptimizer, SrTrainConfig};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::rng::{component_rng, RngState};
use crate::schedule::PlateauLinearDecay;
use crate::volume::{Domain, Volume};
use crate::volume_io::resample;

pub const CHECKPOINT_KIND: &str = "lapsrn";
pub const SR_LOSS_CSV_HEADER: &str = "step,epoch,charbonnier,lr";

#[derive(Clone, Debug, PartialEq)]
pub struct SrLossReport {
    pub step: u64,
    pub epoch: usize,
    pub charbonnier: f64,
    pub lr: f64,
}

impl SrLossReport {
    pub fn csv_row(&self) -> String {
        format!("{},{},{:?},{:?}", self.step, self.epoch, self.charbonnier, self.lr)
    }
}

/// Training pairs `(input at level s−1, target at level s)` for `s = 1..=levels`,
/// built by repeated trilinear halving.
pub fn make_lr_hr_pairs(hr: &Volume, levels: usize) -> Result<Vec<(Volume, Volume)>> {
    let f = 1usize << levels;
    if hr.shape().iter().any(|d| d % f != 0) {
        return Err(Error::Shape(format!("{:?} is not divisible by {f}", hr.shape())));
    }
    let mut pyramid = vec![hr.clone()];
    for _ in 0..levels {
        let last = pyramid.last().expect("non-empty");
        pyramid.push(resample(last, last.shape().map(|d| d / 2))?);
    }
    Ok((1..=levels).map(|s| (pyramid[levels - s + 1].clone(), pyramid[levels - s].clone())).collect())
}

/// High-resolution training volumes.
pub struct SrDataset {
    volumes: Vec<Volume>,
    chunks: usize,
}

impl SrDataset {
    pub fn new(hr: &[Volume], spec: &PyramidSpec, config: &SrTrainConfig) -> Result<Self> {
        if hr.is_empty() {
            return Err(Error::EmptyDataset("no high-resolution CT volumes".into()));
        }
        let f = 1usize << spec.levels;
        let mut chunks = 0;
        for v in hr {
            v.require_domain(Domain::Unit)?;
            if v.shape().iter().any(|&d| d < f) {
                return Err(Error::Shape(format!("volume {:?} is smaller than {f} voxels per axis", v.shape())));
            }
            chunks += ChunkGrid::new(v.shape(), config.core_size, config.halo)?.len();
        }
        Ok(Self { volumes: hr.to_vec(), chunks })
    }

    pub fn len(&self) -> usize {
        self.volumes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.volumes.is_empty()
    }

    /// One epoch visits roughly every chunk once.
    pub fn steps_per_epoch(&self, config: &SrTrainConfig) -> usize {
        self.chunks.div_ceil(config.micro_batch * config.grad_accum).max(1)
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
struct TrainState {
    step: u64,
    epoch: usize,
    step_in_epoch: usize,
    epoch_loss_sum: f64,
    steps_per_epoch: usize,
    schedule: PlateauLinearDecay,
    rng: RngState,
    optimizer_step: u64,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct Meta {
    spec: PyramidSpec,
    config: SrTrainConfig,
    augmentation: AugmentationConfig,
    state: TrainState,
}

enum Optimizer {
    Sgd(Sgd<f32>),
    /// Adam plus L2 weight decay folded into the gradient.
    Adam(Adam<f32>, f64),
}

impl Optimizer {
    fn new(config: &SrTrainConfig, params: &ParamSet<f32>) -> Self {
        match config.optimizer {
            SrOptimizer::Sgd => {
                let c = SgdConfig { lr: config.lr, momentum: config.momentum, weight_decay: config.weight_decay };
                Optimizer::Sgd(Sgd::new(c, params))
            }
            SrOptimizer::Adam => {
                let c = AdamConfig { lr: config.lr, beta1: config.adam_beta1, beta2: config.adam_beta2, ..Default::default() };
                Optimizer::Adam(Adam::new(c, params), config.weight_decay)
            }
        }
    }

    fn set_lr(&mut self, lr: f64) {
        match self {
            Optimizer::Sgd(o) => o.config.lr = lr,
            Optimizer::Adam(o, _) => o.config.lr = lr,
        }
    }

    fn step(&self) -> u64 {
        match self {
            Optimizer::Sgd(o) => o.step,
            Optimizer::Adam(o, _) => o.step,
        }
    }

    fn update(&mut self, params: &mut ParamSet<f32>, grads: &[Tensor<f32>]) {
        match self {
            Optimizer::Sgd(o) => o.update(params, grads),
            Optimizer::Adam(o, wd) => {
                if *wd > 0.0 {
                    let decayed: Vec<Tensor<f32>> = grads
                        .iter()
                        .enumerate()
                        .map(|(i, g)| {
                            let mut g = g.clone();
                            let p = params.get(i).data();
                            for (gj, pj) in g.data_mut().iter_mut().zip(p) {
                                *gj += *wd as f32 * pj;
                            }
                            g
                        })
                        .collect();
                    o.update(params, &decayed);
                } else {
                    o.update(params, grads);
                }
            }
        }
    }

    fn push_state(&self, ck: &mut Checkpoint) {
        match self {
            Optimizer::Sgd(o) => ck.push_list("sgd_m", &o.momentum),
            Optimizer::Adam(o, _) => {
                ck.push_list("adam_m", &o.first);
                ck.push_list("adam_v", &o.second);
            }
        }
    }

    fn load_state(&mut self, ck: &Checkpoint, step: u64) -> std::result::Result<(), String> {
        let restore = |name: &str, into: &mut Vec<Tensor<f32>>| {
            let t = ck.group(name);
            if t.len() != into.len() {
                return Err(format!("optimizer state `{name}` is incomplete"));
            }
            *into = t;
            Ok(())
        };
        match self {
            Optimizer::Sgd(o) => {
                restore("sgd_m", &mut o.momentum)?;
                o.step = step;
            }
            Optimizer::Adam(o, _) => {
                restore("adam_m", &mut o.first)?;
                restore("adam_v", &mut o.second)?;
                o.step = step;
            }
        }
        Ok(())
    }
}

pub struct SrTrainer {
    pub network: SrNetwork<f32>,
    pub config: SrTrainConfig,
    pub augmentation: AugmentationConfig,
    optimizer: Optimizer,
    rng: ChaCha8Rng,
    step: u64,
    epoch: usize,
    step_in_epoch: usize,
    epoch_loss_sum: f64,
    steps_per_epoch: usize,
    schedule: PlateauLinearDecay,
}

/// Shrinks a chunk from its far side to a multiple of `f` per axis.
fn trim(v: &Volume, f: usize) -> Result<Volume> {
    let [d, h, w] = v.shape().map(|n| n / f * f);
    v.with_data(v.data().slice(s![..d, ..h, ..w]).to_owned(), v.domain())
}

impl SrTrainer {
    pub fn new(spec: &PyramidSpec, config: &SrTrainConfig, augmentation: &AugmentationConfig, data: &SrDataset) -> Result<Self> {
        config.validate()?;
        let network = SrNetwork::init(spec, &mut component_rng(config.seed, "lapsrn.init"))?;
        let optimizer = Optimizer::new(config, &network.params);
        let steps_per_epoch = data.steps_per_epoch(config);
        Ok(Self {
            network,
            config: config.clone(),
            augmentation: augmentation.clone(),
            optimizer,
            rng: component_rng(config.seed, "lapsrn.train"),
            step: 0,
            epoch: 0,
            step_in_epoch: 0,
            epoch_loss_sum: 0.0,
            steps_per_epoch,
            schedule: PlateauLinearDecay::new(config.lr, config.plateau_patience_epochs, config.max_epochs),
        })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn is_finished(&self) -> bool {
        self.epoch >= self.config.max_epochs
    }

    pub fn at_epoch_boundary(&self) -> bool {
        self.step_in_epoch == 0
    }

    /// Augments a random volume and picks one of its chunks, trimmed to the pyramid factor.
    fn sample_chunk(&mut self, data: &SrDataset) -> Result<Volume> {
        let f = 1usize << self.network.spec.levels;
        let v = &data.volumes[self.rng.random_range(0..data.volumes.len())];
        let seed = self.rng.random::<u64>();
        let augmented = augment(v, &self.augmentation, seed)?;
        let grid = ChunkGrid::new(v.shape(), self.config.core_size, self.config.halo)?;
        let chunks: Vec<Chunk> =
            chunk_volume(&augmented, &grid)?.into_iter().filter(|c| c.data.shape().iter().all(|&d| d >= f)).collect();
        if chunks.is_empty() {
            return Err(Error::InvalidArgument(format!("no chunk of {:?} spans {f} voxels per axis", v.shape())));
        }
        let pick = self.rng.random_range(0..chunks.len());
        trim(&chunks[pick].data, f)
    }

    /// Loss and gradients of one chunk.
    fn chunk_gradients(&self, hr: &Volume) -> Result<(f64, Vec<Tensor<f32>>)> {
        let levels = self.network.spec.levels;
        let pairs = make_lr_hr_pairs(hr, levels)?;
        let mut g = Graph::new();
        let p = g.bind(&self.network.params, Binding::Trainable(0));
        let x = g.input(pairs[0].0.to_tensor());
        let preds = sr_forward(&self.network, &mut g, &p, x, levels)?;
        let targets: Vec<Tensor<f32>> = pairs.iter().map(|(_, t)| t.to_tensor()).collect();
        let loss = charbonnier_loss(&mut g, &preds, &targets, self.config.eps_charbonnier)?;
        let grads = g.backward(loss);
        Ok((g.value(loss).item() as f64, g.param_grads(&grads, 0, &self.network.params)))
    }

    /// One SGD update from `micro_batch × grad_accum` chunks.
    pub fn train_step(&mut self, data: &SrDataset) -> Result<SrLossReport> {
        let lr = self.schedule.lr(self.epoch);
        self.optimizer.set_lr(lr);
        let n = self.config.micro_batch * self.config.grad_accum;
        let scale = 1.0 / n as f32;
        let mut acc = self.network.params.zeros_like();
        let mut loss_sum = 0.0;
        for _ in 0..n {
            let chunk = self.sample_chunk(data)?;
            let (loss, grads) = self.chunk_gradients(&chunk)?;
            loss_sum += loss;
            for (a, mut g) in acc.iter_mut().zip(grads) {
                g.scale(scale);
                a.add_assign(&g);
            }
        }
        self.optimizer.update(&mut self.network.params, &acc);
        self.step += 1;
        let charbonnier = loss_sum / n as f64;
        let report = SrLossReport { step: self.step, epoch: self.epoch, charbonnier, lr };
        self.epoch_loss_sum += charbonnier;
        self.step_in_epoch += 1;
        if self.step_in_epoch == self.steps_per_epoch {
            self.schedule.end_epoch(self.epoch, self.epoch_loss_sum / self.steps_per_epoch as f64);
            self.epoch += 1;
            self.step_in_epoch = 0;
            self.epoch_loss_sum = 0.0;
        }
        Ok(report)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let state = TrainState {
            step: self.step,
            epoch: self.epoch,
            step_in_epoch: self.step_in_epoch,
            epoch_loss_sum: self.epoch_loss_sum,
            steps_per_epoch: self.steps_per_epoch,
            schedule: self.schedule.clone(),
            rng: RngState::capture(&self.rng),
            optimizer_step: self.optimizer.step(),
        };
        let meta = Meta {
            spec: self.network.spec.clone(),
            config: self.config.clone(),
            augmentation: self.augmentation.clone(),
            state,
        };
        let meta = serde_json::to_value(meta).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut ck = Checkpoint::new(CHECKPOINT_KIND, meta);
        ck.push_params("p", &self.network.params);
        self.optimizer.push_state(&mut ck);
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint, path: &Path, data: &SrDataset) -> Result<Self> {
        ck.expect_kind(CHECKPOINT_KIND, path)?;
        let bad = |detail: String| Error::Checkpoint { path: path.into(), detail };
        let meta: Meta = serde_json::from_value(ck.meta.clone()).map_err(|e| bad(e.to_string()))?;
        let mut trainer = Self::new(&meta.spec, &meta.config, &meta.augmentation, data)?;
        let s = meta.state;
        if s.steps_per_epoch != trainer.steps_per_epoch {
            return Err(bad(format!("run used {} steps per epoch, dataset gives {}", s.steps_per_epoch, trainer.steps_per_epoch)));
        }
        trainer.network.params.load(ck.group("p")).map_err(bad)?;
        trainer.optimizer.load_state(ck, s.optimizer_step).map_err(bad)?;
        trainer.rng = s.rng.restore().map_err(bad)?;
        trainer.step = s.step;
        trainer.epoch = s.epoch;
        trainer.step_in_epoch = s.step_in_epoch;
        trainer.epoch_loss_sum = s.epoch_loss_sum;
        trainer.schedule = s.schedule;
        Ok(trainer)
    }
}

/// Trains for the configured number of epochs and returns the per-step log.
pub fn train_lapsrn(
    hr: &[Volume],
    spec: &PyramidSpec,
    config: &SrTrainConfig,
    augmentation: &AugmentationConfig,
) -> Result<(SrTrainer, Vec<SrLossReport>)> {
    let data = SrDataset::new(hr, spec, config)?;
    let mut trainer = SrTrainer::new(spec, config, augmentation, &data)?;
    let mut log = Vec::new();
    while !trainer.is_finished() {
        log.push(trainer.train_step(&data)?);
    }
    Ok((trainer, log))
}

/// Network and training configuration from a super-resolution checkpoint.
pub fn load_sr_network(path: &Path) -> Result<(SrNetwork<f32>, SrTrainConfig)> {
    let ck = Checkpoint::load(path)?;
    ck.expect_kind(CHECKPOINT_KIND, path)?;
    let bad = |detail: String| Error::Checkpoint { path: path.into(), detail };
    let field = |name: &str| ck.meta.get(name).cloned().unwrap_or_default();
    let spec: PyramidSpec = serde_json::from_value(field("spec")).map_err(|e| bad(e.to_string()))?;
    let config: SrTrainConfig = serde_json::from_value(field("config")).map_err(|e| bad(e.to_string()))?;
    let mut network = SrNetwork::init(&spec, &mut component_rng(0, "unused"))?;
    network.params.load(ck.group("p")).map_err(bad)?;
    Ok((network, config))
}

/// Upsamples `v` by `2^levels`: chunk the input, run each chunk, keep the cores.
pub fn super_resolve(net: &SrNetwork<f32>, v: &Volume, levels: usize, core_size: usize, halo: usize) -> Result<Volume> {
    v.require_domain(Domain::Unit)?;
    if levels == 0 {
        return Ok(v.clone());
    }
    let grid = ChunkGrid::new(v.shape(), core_size, halo)?;
    let chunks = chunk_volume(v, &grid)?
        .into_iter()
        .map(|c| {
            let out = predict_levels(net, &c.data, levels)?.pop().expect("levels > 0");
            Ok(Chunk { extent: c.extent, data: out })
        })
        .collect::<Result<Vec<_>>>()?;
    let out = assemble_chunks(&chunks, &grid, 1 << levels)?;
    Ok(out.with_provenance(format!("super_resolved:{}", v.provenance())))
}
