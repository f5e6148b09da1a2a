//! Contrastive unpaired MR→CT translation: a ResNet generator, a PatchGAN
//! discriminator, per-layer projection heads, patchwise InfoNCE and
//! adversarial losses, and the training loop.

mod losses;
mod networks;
mod trainer;

pub use losses::{
    cut_total_loss, discriminator_loss, encoder_features, gan_losses, gan_losses_from_logits, generator_adv_loss,
    info_nce, patch_nce_loss, sample_sites, CutLossComponents, FeatureStack, LossReport, LOSS_CSV_HEADER,
};
pub use networks::{Discriminator, Generator, GeneratorOutput, Projector};
pub use trainer::{load_generator, train_cut, translate, CutDataset, CutModel, CutTrainer, GeneratorPass, CHECKPOINT_KIND};

use crate::error::{Error, Result};

/// Instance-norm epsilon used throughout the networks.
pub const NORM_EPS: f64 = 1e-5;
/// Negative slope of the discriminator's leaky ReLUs.
pub const LEAKY_SLOPE: f64 = 0.2;
/// Encoder layers eligible as contrastive taps by default.
pub const DEFAULT_TAP_COUNT: usize = 9;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSpec {
    pub base_filters: usize,
    pub n_downsample: usize,
    pub n_residual_blocks: usize,
    /// Kernel of the first and last convolution.
    pub outer_kernel: usize,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self { base_filters: 64, n_downsample: 2, n_residual_blocks: 9, outer_kernel: 7 }
    }
}

impl GeneratorSpec {
    /// Stem conv, each downsampling conv, each residual block.
    pub fn encoder_depth(&self) -> usize {
        1 + self.n_downsample + self.n_residual_blocks
    }

    /// Channels of encoder tap `id`.
    pub fn tap_channels(&self, id: usize) -> usize {
        self.base_filters << id.min(self.n_downsample)
    }

    pub fn default_taps(&self) -> Vec<usize> {
        (0..self.encoder_depth().min(DEFAULT_TAP_COUNT)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_filters == 0 || self.n_downsample == 0 || self.n_residual_blocks == 0 {
            return Err(Error::InvalidArgument("generator needs filters, ≥1 downsampling and ≥1 residual block".into()));
        }
        if self.outer_kernel % 2 == 0 {
            return Err(Error::InvalidArgument(format!("outer kernel {} must be odd", self.outer_kernel)));
        }
        Ok(())
    }

    /// Input extents must be multiples of the total downsampling factor.
    pub fn check_input(&self, shape: [usize; 3]) -> Result<()> {
        let f = 1 << self.n_downsample;
        if shape.iter().any(|&s| s % f != 0 || s / f == 0) {
            return Err(Error::Shape(format!("input {shape:?} not divisible by {f}")));
        }
        if shape.iter().any(|&s| s <= self.outer_kernel / 2) {
            return Err(Error::Shape(format!("input {shape:?} too small for kernel {}", self.outer_kernel)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorSpec {
    pub n_layers: usize,
    pub base_filters: usize,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        Self { n_layers: 3, base_filters: 64 }
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectorSpec {
    /// Linear layers, with ReLU between consecutive ones.
    pub n_layers: usize,
    pub embed_dim: usize,
}

impl Default for ProjectorSpec {
    fn default() -> Self {
        Self { n_layers: 2, embed_dim: 256 }
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NceConfig {
    pub num_patches: usize,
    /// Encoder tap ids; empty selects [`GeneratorSpec::default_taps`].
    pub tap_layers: Vec<usize>,
    pub temperature: f64,
    /// Stop gradients through the source (key) embeddings.
    pub detach_keys: bool,
}

impl Default for NceConfig {
    fn default() -> Self {
        Self { num_patches: 64, tap_layers: Vec::new(), temperature: 1.0, detach_keys: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum GanMode {
    /// Log-loss with the non-saturating generator term.
    #[default]
    #[serde(rename = "VANILLA")]
    Vanilla,
    /// Least-squares targets 1 (real) / 0 (synthetic).
    #[serde(rename = "LSGAN")]
    Lsgan,
}

impl std::str::FromStr for GanMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_uppercase().as_str() {
            "VANILLA" => Ok(Self::Vanilla),
            "LSGAN" => Ok(Self::Lsgan),
            other => Err(format!("unknown GAN mode `{other}` (expected VANILLA or LSGAN)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CutTrainConfig {
    pub lambda_gan: f64,
    pub lambda_syn: f64,
    pub lambda_idt: f64,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    /// Samples per optimizer step, accumulated one at a time.
    pub batch_size: usize,
    pub plateau_patience_epochs: usize,
    pub max_epochs: usize,
    pub gan_mode: GanMode,
    pub seed: u64,
}

impl Default for CutTrainConfig {
    fn default() -> Self {
        Self {
            lambda_gan: 1.0,
            lambda_syn: 1.0,
            lambda_idt: 1.0,
            lr: 2e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            batch_size: 1,
            plateau_patience_epochs: 50,
            max_epochs: 200,
            gan_mode: GanMode::Vanilla,
            seed: 0,
        }
    }
}

/// Everything needed to rebuild and train a translation model.
#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CutConfig {
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
    pub projector: ProjectorSpec,
    pub nce: NceConfig,
    pub train: CutTrainConfig,
}

impl CutConfig {
    /// Tap ids after resolving the empty default.
    pub fn taps(&self) -> Vec<usize> {
        if self.nce.tap_layers.is_empty() {
            self.generator.default_taps()
        } else {
            self.nce.tap_layers.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        let t = &self.train;
        if [t.lambda_gan, t.lambda_syn, t.lambda_idt].iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::InvalidArgument("loss weights must be non-negative".into()));
        }
        if !(t.lr > 0.0) || t.batch_size == 0 {
            return Err(Error::InvalidArgument("learning rate and batch size must be positive".into()));
        }
        if self.nce.num_patches < 2 {
            return Err(Error::InvalidArgument("at least two patches per layer are needed".into()));
        }
        if !(self.nce.temperature > 0.0) {
            return Err(Error::InvalidArgument("temperature must be positive".into()));
        }
        let taps = self.taps();
        let depth = self.generator.encoder_depth();
        if taps.is_empty() || taps.iter().any(|&l| l >= depth) {
            return Err(Error::InvalidArgument(format!("tap layers {taps:?} invalid for encoder depth {depth}")));
        }
        if self.discriminator.n_layers == 0 || self.discriminator.base_filters == 0 {
            return Err(Error::InvalidArgument("discriminator needs layers and filters".into()));
        }
        if self.projector.n_layers == 0 || self.projector.embed_dim == 0 {
            return Err(Error::InvalidArgument("projector needs layers and an embedding size".into()));
        }
        Ok(())
    }
}
