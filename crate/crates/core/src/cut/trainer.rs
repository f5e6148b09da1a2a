//! Unpaired training loop, checkpointing and inference.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use skullcut_nn::{Adam, AdamConfig, Binding, Graph, Tensor, Var};

use super::losses::{discriminator_loss, encoder_features, generator_adv_loss, patch_nce_loss, LossReport};
use super::networks::{Discriminator, Generator, Projector};
use super::CutConfig;
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::rng::{component_rng, RngState};
use crate::schedule::PlateauLinearDecay;
use crate::volume::{Domain, Volume};

pub const CHECKPOINT_KIND: &str = "cut";

const GROUP_G: u32 = 0;
const GROUP_F: u32 = 1;
const GROUP_D: u32 = 2;

/// Generator, discriminator and projection heads of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct CutModel {
    pub config: CutConfig,
    pub taps: Vec<usize>,
    pub generator: Generator<f32>,
    pub discriminator: Discriminator<f32>,
    pub projector: Projector<f32>,
}

impl CutModel {
    /// Fresh weights drawn from the run seed.
    pub fn init(config: &CutConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = component_rng(config.train.seed, "cut.init");
        let generator = Generator::init(&config.generator, &mut rng)?;
        let discriminator = Discriminator::init(&config.discriminator, &mut rng);
        let taps = config.taps();
        let channels: Vec<usize> = taps.iter().map(|&t| config.generator.tap_channels(t)).collect();
        let projector = Projector::init(&config.projector, &channels, &mut rng);
        Ok(Self { config: config.clone(), taps, generator, discriminator, projector })
    }
}

/// Training volumes as network inputs.
pub struct CutDataset {
    mr: Vec<Tensor<f32>>,
    ct: Vec<Tensor<f32>>,
}

impl CutDataset {
    /// Both sets must be non-empty, `UNIT`-domain and share one generator-compatible shape.
    pub fn new(mr: &[Volume], ct: &[Volume], config: &CutConfig) -> Result<Self> {
        for (name, set) in [("MR", mr), ("CT", ct)] {
            if set.is_empty() {
                return Err(Error::EmptyDataset(format!("no {name} volumes")));
            }
        }
        let shape = mr[0].shape();
        config.generator.check_input(shape)?;
        for v in mr.iter().chain(ct) {
            v.require_domain(Domain::Unit)?;
            if v.shape() != shape {
                return Err(Error::Shape(format!("training volume {:?} differs from {shape:?}", v.shape())));
            }
        }
        Ok(Self { mr: mr.iter().map(Volume::to_tensor).collect(), ct: ct.iter().map(Volume::to_tensor).collect() })
    }

    pub fn steps_per_epoch(&self, batch: usize) -> usize {
        self.mr.len().max(self.ct.len()).div_ceil(batch)
    }
}

/// Generator forward passes of one micro-batch, kept for the generator update.
pub struct GeneratorPass {
    graph: Graph<f32>,
    g_params: Vec<Var>,
    f_params: Vec<Var>,
    ct_index: usize,
    syn: Var,
    mr_taps: Vec<Var>,
    idt: Option<(Var, Vec<Var>)>,
}

impl GeneratorPass {
    pub fn synthetic(&self) -> &Tensor<f32> {
        self.graph.value(self.syn)
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
    adam_steps: [u64; 3],
}

#[derive(serde::Serialize, serde::Deserialize)]
struct Meta {
    config: CutConfig,
    taps: Vec<usize>,
    state: TrainState,
}

pub struct CutTrainer {
    pub model: CutModel,
    adam_g: Adam<f32>,
    adam_f: Adam<f32>,
    adam_d: Adam<f32>,
    rng: ChaCha8Rng,
    step: u64,
    epoch: usize,
    step_in_epoch: usize,
    epoch_loss_sum: f64,
    steps_per_epoch: usize,
    schedule: PlateauLinearDecay,
}

impl CutTrainer {
    pub fn new(config: &CutConfig, data: &CutDataset) -> Result<Self> {
        let model = CutModel::init(config)?;
        let t = &config.train;
        let adam = AdamConfig { lr: t.lr, beta1: t.adam_beta1, beta2: t.adam_beta2, ..Default::default() };
        Ok(Self {
            adam_g: Adam::new(adam, &model.generator.params),
            adam_f: Adam::new(adam, &model.projector.params),
            adam_d: Adam::new(adam, &model.discriminator.params),
            rng: component_rng(t.seed, "cut.train"),
            step: 0,
            epoch: 0,
            step_in_epoch: 0,
            epoch_loss_sum: 0.0,
            steps_per_epoch: data.steps_per_epoch(t.batch_size),
            schedule: PlateauLinearDecay::new(t.lr, t.plateau_patience_epochs, t.max_epochs),
            model,
        })
    }

    pub fn config(&self) -> &CutConfig {
        &self.model.config
    }

    /// Optimizer steps taken so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn is_finished(&self) -> bool {
        self.epoch >= self.model.config.train.max_epochs
    }

    /// True right after the last step of an epoch (and before any step).
    pub fn at_epoch_boundary(&self) -> bool {
        self.step_in_epoch == 0
    }

    fn set_lr(&mut self, lr: f64) {
        for a in [&mut self.adam_g, &mut self.adam_f, &mut self.adam_d] {
            a.config.lr = lr;
        }
    }

    /// Independently drawn `(mr, ct)` indices for each micro-batch.
    pub fn sample_pairs(&mut self, data: &CutDataset) -> Vec<(usize, usize)> {
        (0..self.model.config.train.batch_size)
            .map(|_| (self.rng.random_range(0..data.mr.len()), self.rng.random_range(0..data.ct.len())))
            .collect()
    }

    /// `syn = G(mr)` and, when the identity term is active, `idt = G(ct)`.
    pub fn generator_pass(&self, data: &CutDataset, (mr, ct): (usize, usize)) -> Result<GeneratorPass> {
        let m = &self.model;
        let mut g = Graph::new();
        let g_params = g.bind(&m.generator.params, Binding::Trainable(GROUP_G));
        let f_params = g.bind(&m.projector.params, Binding::Trainable(GROUP_F));
        let x = g.input(data.mr[mr].clone());
        let out = m.generator.forward(&mut g, &g_params, x, None)?;
        let idt = if m.config.train.lambda_idt > 0.0 {
            let y = g.input(data.ct[ct].clone());
            let o = m.generator.forward(&mut g, &g_params, y, None)?;
            Some((o.output.expect("full pass"), o.taps))
        } else {
            None
        };
        Ok(GeneratorPass {
            syn: out.output.expect("full pass"),
            mr_taps: out.taps,
            idt,
            graph: g,
            g_params,
            f_params,
            ct_index: ct,
        })
    }

    /// One discriminator step on real CT vs the (constant) synthetic volumes. Returns the mean loss.
    pub fn update_discriminator(&mut self, data: &CutDataset, passes: &[GeneratorPass]) -> Result<f64> {
        let d = &self.model.discriminator;
        let mode = self.model.config.train.gan_mode;
        let scale = 1.0 / passes.len() as f32;
        let mut acc = d.params.zeros_like();
        let mut loss_sum = 0.0;
        for pass in passes {
            let mut g = Graph::new();
            let p = g.bind(&d.params, Binding::Trainable(GROUP_D));
            let real = g.input(data.ct[pass.ct_index].clone());
            let syn = g.input(pass.synthetic().clone());
            let (lr, ls) = (d.forward(&mut g, &p, real)?, d.forward(&mut g, &p, syn)?);
            let loss = discriminator_loss(&mut g, lr, ls, mode)?;
            loss_sum += g.value(loss).item() as f64;
            let grads = g.backward(loss);
            for (a, mut gr) in acc.iter_mut().zip(g.param_grads(&grads, GROUP_D, &d.params)) {
                gr.scale(scale);
                a.add_assign(&gr);
            }
        }
        self.adam_d.update(&mut self.model.discriminator.params, &acc);
        Ok(loss_sum / passes.len() as f64)
    }

    fn nce_term(
        &mut self,
        g: &mut Graph<f32>,
        pass_params: (&[Var], &[Var]),
        source_taps: &[Var],
        translated: Var,
    ) -> Result<Var> {
        let m = &self.model;
        let depth = m.taps.iter().max().map_or(0, |t| t + 1);
        let enc = m.generator.forward(g, pass_params.0, translated, Some(depth))?;
        let pick = |taps: &[Var]| m.taps.iter().map(|&t| taps[t]).collect::<Vec<_>>();
        let nce = &m.config.nce;
        let src = encoder_features(g, &m.projector, pass_params.1, &pick(source_taps), None, nce.num_patches, &mut self.rng)?;
        let trn = encoder_features(g, &m.projector, pass_params.1, &pick(&enc.taps), Some(&src.sites), nce.num_patches, &mut self.rng)?;
        Ok(patch_nce_loss(g, &src, &trn, nce.temperature, nce.detach_keys)?.0)
    }

    /// Joint generator/projector step on the weighted adversarial and contrastive terms.
    /// Returns the batch-mean `[L_GAN_G, L_NCE_syn, L_NCE_idt, total]`.
    pub fn update_generator(&mut self, passes: Vec<GeneratorPass>) -> Result<[f64; 4]> {
        let t = self.model.config.train.clone();
        let scale = 1.0 / passes.len() as f32;
        let mut acc_g = self.model.generator.params.zeros_like();
        let mut acc_f = self.model.projector.params.zeros_like();
        let mut sums = [0.0f64; 4];
        for pass in passes {
            let GeneratorPass { mut graph, g_params, f_params, syn, mr_taps, idt, .. } = pass;
            let g = &mut graph;
            let mut terms = Vec::new();
            let mut vals = [0.0f64; 3];
            if t.lambda_gan > 0.0 {
                let dp = g.bind(&self.model.discriminator.params, Binding::Frozen);
                let logits = self.model.discriminator.forward(g, &dp, syn)?;
                let adv = generator_adv_loss(g, logits, t.gan_mode);
                vals[0] = g.value(adv).item() as f64;
                terms.push((adv, t.lambda_gan));
            }
            if t.lambda_syn > 0.0 {
                let nce = self.nce_term(g, (&g_params, &f_params), &mr_taps, syn)?;
                vals[1] = g.value(nce).item() as f64;
                terms.push((nce, t.lambda_syn));
            }
            if let Some((idt, ct_taps)) = &idt {
                let nce = self.nce_term(g, (&g_params, &f_params), ct_taps, *idt)?;
                vals[2] = g.value(nce).item() as f64;
                terms.push((nce, t.lambda_idt));
            }
            if terms.is_empty() {
                continue;
            }
            let total = g.weighted_sum(&terms)?;
            for (s, v) in sums.iter_mut().zip(vals.iter().chain([&(g.value(total).item() as f64)])) {
                *s += v;
            }
            let grads = g.backward(total);
            for (group, params, acc) in [
                (GROUP_G, &self.model.generator.params, &mut acc_g),
                (GROUP_F, &self.model.projector.params, &mut acc_f),
            ] {
                for (a, mut gr) in acc.iter_mut().zip(g.param_grads(&grads, group, params)) {
                    gr.scale(scale);
                    a.add_assign(&gr);
                }
            }
        }
        self.adam_g.update(&mut self.model.generator.params, &acc_g);
        self.adam_f.update(&mut self.model.projector.params, &acc_f);
        Ok(sums.map(|s| s * scale as f64))
    }

    /// One optimizer step: discriminator first, then generator and projector.
    pub fn train_step(&mut self, data: &CutDataset) -> Result<LossReport> {
        let lr = self.schedule.lr(self.epoch);
        self.set_lr(lr);
        let pairs = self.sample_pairs(data);
        let passes = pairs.into_iter().map(|p| self.generator_pass(data, p)).collect::<Result<Vec<_>>>()?;
        let l_gan_d = if self.model.config.train.lambda_gan > 0.0 { self.update_discriminator(data, &passes)? } else { 0.0 };
        let [l_gan_g, l_nce_syn, l_nce_idt, total] = self.update_generator(passes)?;
        self.step += 1;
        let report = LossReport { step: self.step, epoch: self.epoch, l_gan_d, l_gan_g, l_nce_syn, l_nce_idt, total, lr };
        self.epoch_loss_sum += total;
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
            adam_steps: [self.adam_g.step, self.adam_f.step, self.adam_d.step],
        };
        let meta = Meta { config: self.model.config.clone(), taps: self.model.taps.clone(), state };
        let meta = serde_json::to_value(meta).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut ck = Checkpoint::new(CHECKPOINT_KIND, meta);
        ck.push_params("g", &self.model.generator.params);
        ck.push_params("d", &self.model.discriminator.params);
        ck.push_params("f", &self.model.projector.params);
        for (name, adam) in [("g", &self.adam_g), ("f", &self.adam_f), ("d", &self.adam_d)] {
            ck.push_list(&format!("adam_{name}_m"), &adam.first);
            ck.push_list(&format!("adam_{name}_v"), &adam.second);
        }
        Ok(ck)
    }

    /// Restores a trainer mid-run; `data` must have the sizes the run started with.
    pub fn from_checkpoint(ck: &Checkpoint, path: &Path, data: &CutDataset) -> Result<Self> {
        ck.expect_kind(CHECKPOINT_KIND, path)?;
        let bad = |detail: String| Error::Checkpoint { path: path.into(), detail };
        let meta: Meta = serde_json::from_value(ck.meta.clone()).map_err(|e| bad(e.to_string()))?;
        let mut trainer = Self::new(&meta.config, data)?;
        let s = meta.state;
        if s.steps_per_epoch != trainer.steps_per_epoch {
            return Err(bad(format!("run used {} steps per epoch, dataset gives {}", s.steps_per_epoch, trainer.steps_per_epoch)));
        }
        let m = &mut trainer.model;
        m.generator.params.load(ck.group("g")).map_err(bad)?;
        m.discriminator.params.load(ck.group("d")).map_err(bad)?;
        m.projector.params.load(ck.group("f")).map_err(bad)?;
        for (name, adam, step) in [
            ("g", &mut trainer.adam_g, s.adam_steps[0]),
            ("f", &mut trainer.adam_f, s.adam_steps[1]),
            ("d", &mut trainer.adam_d, s.adam_steps[2]),
        ] {
            let (first, second) = (ck.group(&format!("adam_{name}_m")), ck.group(&format!("adam_{name}_v")));
            if first.len() != adam.first.len() || second.len() != adam.second.len() {
                return Err(bad(format!("optimizer state for `{name}` is incomplete")));
            }
            adam.first = first;
            adam.second = second;
            adam.step = step;
        }
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
pub fn train_cut(mr: &[Volume], ct: &[Volume], config: &CutConfig) -> Result<(CutTrainer, Vec<LossReport>)> {
    let data = CutDataset::new(mr, ct, config)?;
    let mut trainer = CutTrainer::new(config, &data)?;
    let mut log = Vec::new();
    while !trainer.is_finished() {
        log.push(trainer.train_step(&data)?);
    }
    Ok((trainer, log))
}

/// Generator weights from a translation checkpoint.
pub fn load_generator(path: &Path) -> Result<Generator<f32>> {
    let ck = Checkpoint::load(path)?;
    ck.expect_kind(CHECKPOINT_KIND, path)?;
    let bad = |detail: String| Error::Checkpoint { path: path.into(), detail };
    let config: CutConfig = serde_json::from_value(ck.meta.get("config").cloned().unwrap_or_default()).map_err(|e| bad(e.to_string()))?;
    let mut generator = Generator::init(&config.generator, &mut component_rng(0, "unused"))?;
    generator.params.load(ck.group("g")).map_err(bad)?;
    Ok(generator)
}

/// Synthetic CT (`UNIT`) for a preprocessed MR volume.
pub fn translate(generator: &Generator<f32>, mr: &Volume) -> Result<Volume> {
    mr.require_domain(Domain::Unit)?;
    let mut g = Graph::new();
    let p = g.bind(&generator.params, Binding::Frozen);
    let x = g.input(mr.to_tensor());
    let out = generator.forward(&mut g, &p, x, None)?.output.expect("full pass");
    let t = g.value(out).map(|v| v.clamp(0.0, 1.0));
    Ok(Volume::from_tensor(&t, mr.spacing(), Domain::Unit)?.with_provenance(format!("translated:{}", mr.provenance())))
}
