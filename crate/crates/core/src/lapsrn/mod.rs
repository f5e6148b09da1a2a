//! Progressive ×2 volumetric super-resolution: a Laplacian pyramid network
//! trained with a Charbonnier penalty on overlapping chunks of augmented
//! high-resolution CT.

mod augment;
mod chunks;
mod network;
mod trainer;

pub use augment::{augment, flip_axis, gaussian_blur, AugmentationConfig};
pub use chunks::{assemble_chunks, chunk_volume, Chunk, ChunkExtent, ChunkGrid};
pub use network::{charbonnier_loss, charbonnier_value, predict_levels, sr_forward, upsample_image, SrNetwork, SR_LEAKY_SLOPE};
pub use trainer::{
    load_sr_network, make_lr_hr_pairs, super_resolve, train_lapsrn, SrDataset, SrLossReport, SrTrainer, CHECKPOINT_KIND,
    SR_LOSS_CSV_HEADER,
};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PyramidSpec {
    /// Number of ×2 levels.
    pub levels: usize,
    /// 3×3×3 conv layers of the feature branch per level, before upsampling.
    pub feat_layers: usize,
    /// Layers from the feature upsampling to the residual output, both included.
    pub recon_layers: usize,
    pub filters: usize,
    /// Cap on the im2col buffer (elements) of the finest convolution.
    pub max_conv_elements: u64,
}

impl Default for PyramidSpec {
    fn default() -> Self {
        Self { levels: 1, feat_layers: 8, recon_layers: 2, filters: 64, max_conv_elements: 1 << 28 }
    }
}

impl PyramidSpec {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.filters == 0 {
            return Err(Error::InvalidArgument("pyramid needs at least one level and one filter".into()));
        }
        if self.recon_layers < 2 {
            return Err(Error::InvalidArgument(format!("recon_layers must be at least 2, got {}", self.recon_layers)));
        }
        Ok(())
    }

    /// Fails when the finest level of a `levels`-deep pass on `dims` would exceed the budget.
    pub fn check_budget(&self, dims: [usize; 3], levels: usize) -> Result<()> {
        let voxels: u64 = dims.iter().map(|&d| (d as u64) << levels).product();
        let need = voxels.saturating_mul(27 * self.filters as u64);
        if need > self.max_conv_elements {
            return Err(Error::InvalidArgument(format!(
                "input {dims:?} at {levels} level(s) needs {need} conv elements, budget is {}; use smaller chunks",
                self.max_conv_elements
            )));
        }
        Ok(())
    }

    /// Context radius in input voxels that one output voxel depends on, rounded up.
    pub fn receptive_radius(&self, levels: usize) -> usize {
        let mut r = 1.0;
        for s in 0..levels {
            let scale = 0.5f64.powi(s as i32);
            r += (self.feat_layers as f64 + 1.0) * scale + (self.recon_layers - 1) as f64 * scale / 2.0;
        }
        r.ceil() as usize + 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum SrOptimizer {
    /// Momentum SGD.
    #[default]
    #[serde(rename = "SGD")]
    Sgd,
    /// Adam with `adam_beta1` / `adam_beta2`; `momentum` is unused.
    #[serde(rename = "ADAM")]
    Adam,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SrTrainConfig {
    pub optimizer: SrOptimizer,
    pub lr: f64,
    pub momentum: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    /// L2 penalty added to the gradient, for either optimizer.
    pub weight_decay: f64,
    pub plateau_patience_epochs: usize,
    pub max_epochs: usize,
    pub eps_charbonnier: f64,
    /// Chunks per micro-batch.
    pub micro_batch: usize,
    /// Micro-batches whose gradients are summed into one update.
    pub grad_accum: usize,
    /// Chunk core edge length in high-resolution voxels.
    pub core_size: usize,
    pub halo: usize,
    pub seed: u64,
}

impl Default for SrTrainConfig {
    fn default() -> Self {
        Self {
            optimizer: SrOptimizer::Sgd,
            lr: 1e-5,
            momentum: 0.9,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            weight_decay: 1e-4,
            plateau_patience_epochs: 5,
            max_epochs: 100,
            eps_charbonnier: 1e-3,
            micro_batch: 1,
            grad_accum: 16,
            core_size: 64,
            halo: 8,
            seed: 0,
        }
    }
}

impl SrTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(self.eps_charbonnier > 0.0) {
            return Err(Error::InvalidArgument("lr and eps_charbonnier must be positive".into()));
        }
        if self.micro_batch == 0 || self.grad_accum == 0 || self.core_size == 0 {
            return Err(Error::InvalidArgument("micro_batch, grad_accum and core_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::InvalidArgument("momentum must lie in [0, 1), weight_decay ≥ 0".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::InvalidArgument("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}
