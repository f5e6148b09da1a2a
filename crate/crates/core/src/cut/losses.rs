//! Patchwise contrastive and adversarial objectives.

use rand::Rng;
use skullcut_nn::{Binding, Graph, Scalar, Tensor, Var};

use super::networks::{Discriminator, Projector};
use super::GanMode;
use crate::error::{Error, Result};

/// InfoNCE of one reference vector against its positive and negatives, by
/// dot-product similarity scaled by `1/temperature`.
pub fn info_nce(reference: &[f64], positive: &[f64], negatives: &[Vec<f64>], temperature: f64) -> Result<f64> {
    if negatives.is_empty() {
        return Err(Error::InvalidArgument("InfoNCE needs at least one negative".into()));
    }
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature {temperature} must be positive")));
    }
    let dim = reference.len();
    if positive.len() != dim || negatives.iter().any(|n| n.len() != dim) {
        return Err(Error::Shape(format!("InfoNCE vectors must all have dimension {dim}")));
    }
    let sim = |v: &[f64]| reference.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / temperature;
    let logits: Vec<f64> = std::iter::once(sim(positive)).chain(negatives.iter().map(|n| sim(n))).collect();
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    Ok(lse - logits[0])
}

/// `min(count, n_sites)` distinct sites drawn uniformly from `0..n_sites`.
pub fn sample_sites<R: Rng + ?Sized>(n_sites: usize, count: usize, rng: &mut R) -> Vec<usize> {
    rand::seq::index::sample(rng, n_sites, count.min(n_sites)).into_vec()
}

/// Projected patch embeddings of a set of encoder taps.
pub struct FeatureStack {
    /// Sampled flat spatial sites, one list per tap layer.
    pub sites: Vec<Vec<usize>>,
    /// `[S_l, E]` unit-norm embeddings per tap layer.
    pub embeddings: Vec<Var>,
}

/// Samples (or reuses) sites on each tap and projects them through the matching head.
pub fn encoder_features<T: Scalar, R: Rng + ?Sized>(
    g: &mut Graph<T>,
    projector: &Projector<T>,
    proj_params: &[Var],
    taps: &[Var],
    sites: Option<&[Vec<usize>]>,
    num_patches: usize,
    rng: &mut R,
) -> Result<FeatureStack> {
    if let Some(s) = sites {
        if s.len() != taps.len() {
            return Err(Error::Shape(format!("{} site lists for {} tap layers", s.len(), taps.len())));
        }
    }
    let mut stack = FeatureStack { sites: Vec::new(), embeddings: Vec::new() };
    for (l, &tap) in taps.iter().enumerate() {
        let (_, dims) = g.value(tap).dims4()?;
        let n_sites: usize = dims.iter().product();
        let chosen = match sites {
            Some(s) => {
                if let Some(&bad) = s[l].iter().find(|&&i| i >= n_sites) {
                    return Err(Error::Shape(format!("site {bad} outside layer {l} grid {dims:?}")));
                }
                s[l].clone()
            }
            None => sample_sites(n_sites, num_patches, rng),
        };
        let feats = g.gather_sites(tap, &chosen)?;
        stack.embeddings.push(projector.forward(g, proj_params, l, feats)?);
        stack.sites.push(chosen);
    }
    Ok(stack)
}

/// Mean over tap layers of the row-mean InfoNCE with translated-stack
/// embeddings as references and source-stack embeddings at the same site as
/// positives; the other sampled source sites are the negatives.
/// Returns the loss node and the per-layer values.
pub fn patch_nce_loss<T: Scalar>(
    g: &mut Graph<T>,
    source: &FeatureStack,
    translated: &FeatureStack,
    temperature: f64,
    detach_keys: bool,
) -> Result<(Var, Vec<f64>)> {
    if source.sites != translated.sites {
        return Err(Error::InvalidArgument("source and translated stacks must share sampled sites".into()));
    }
    if source.sites.is_empty() {
        return Err(Error::InvalidArgument("no tap layers".into()));
    }
    if let Some(l) = source.sites.iter().position(|s| s.len() < 2) {
        return Err(Error::InvalidArgument(format!("tap layer {l} has fewer than two sampled sites")));
    }
    let w = 1.0 / source.sites.len() as f64;
    let mut terms = Vec::new();
    let mut per_layer = Vec::new();
    for (&k, &q) in source.embeddings.iter().zip(&translated.embeddings) {
        let k = if detach_keys { g.detach(k) } else { k };
        let loss = g.info_nce(q, k, temperature)?;
        per_layer.push(g.value(loss).item().to_f64().unwrap_or(f64::NAN));
        terms.push((loss, w));
    }
    Ok((g.weighted_sum(&terms)?, per_layer))
}

/// Discriminator objective on real and synthetic logit grids.
pub fn discriminator_loss<T: Scalar>(g: &mut Graph<T>, real_logits: Var, syn_logits: Var, mode: GanMode) -> Result<Var> {
    let (real, syn) = match mode {
        GanMode::Vanilla => (g.bce_with_logits(real_logits, true), g.bce_with_logits(syn_logits, false)),
        GanMode::Lsgan => (g.mse_to(real_logits, 1.0), g.mse_to(syn_logits, 0.0)),
    };
    Ok(g.weighted_sum(&[(real, 1.0), (syn, 1.0)])?)
}

/// Non-saturating generator objective `−E log D(syn)` (or its least-squares form).
pub fn generator_adv_loss<T: Scalar>(g: &mut Graph<T>, syn_logits: Var, mode: GanMode) -> Var {
    match mode {
        GanMode::Vanilla => g.bce_with_logits(syn_logits, true),
        GanMode::Lsgan => g.mse_to(syn_logits, 1.0),
    }
}

/// `(d_loss, g_adv_loss)` directly from logits, with log arguments clamped at 1e-12.
pub fn gan_losses_from_logits(real: &[f64], syn: &[f64], mode: GanMode) -> (f64, f64) {
    let clamp = -(1e-12f64).ln();
    let nll = |z: f64| (z.max(0.0) + (-z.abs()).exp().ln_1p()).min(clamp); // −ln σ(−z)
    let mean = |v: &[f64], f: &dyn Fn(f64) -> f64| v.iter().map(|&z| f(z)).sum::<f64>() / v.len() as f64;
    match mode {
        GanMode::Vanilla => (mean(real, &|z| nll(-z)) + mean(syn, &nll), mean(syn, &|z| nll(-z))),
        GanMode::Lsgan => (
            mean(real, &|z| (z - 1.0).powi(2)) + mean(syn, &|z| z * z),
            mean(syn, &|z| (z - 1.0).powi(2)),
        ),
    }
}

/// Adversarial losses of `d` on one real and one synthetic `[1, D, H, W]` volume.
pub fn gan_losses<T: Scalar>(d: &Discriminator<T>, real: &Tensor<T>, syn: &Tensor<T>, mode: GanMode) -> Result<(f64, f64)> {
    if real.shape() != syn.shape() {
        return Err(Error::Shape(format!("real {:?} vs synthetic {:?}", real.shape(), syn.shape())));
    }
    let mut g = Graph::new();
    let p = g.bind(&d.params, Binding::Frozen);
    let (xr, xs) = (g.input(real.clone()), g.input(syn.clone()));
    let (lr, ls) = (d.forward(&mut g, &p, xr)?, d.forward(&mut g, &p, xs)?);
    let to64 = |v: Var, g: &Graph<T>| g.value(v).data().iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect::<Vec<_>>();
    Ok(gan_losses_from_logits(&to64(lr, &g), &to64(ls, &g), mode))
}

/// Unweighted generator-side loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CutLossComponents {
    pub gan: f64,
    pub nce_syn: f64,
    pub nce_idt: f64,
}

pub const LOSS_CSV_HEADER: &str = "step,epoch,L_GAN_D,L_GAN_G,L_NCE_syn,L_NCE_idt,total,lr";

/// One row of the training log.
#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossReport {
    pub step: u64,
    pub epoch: usize,
    pub l_gan_d: f64,
    pub l_gan_g: f64,
    pub l_nce_syn: f64,
    pub l_nce_idt: f64,
    pub total: f64,
    pub lr: f64,
}

impl LossReport {
    /// CSV row; floats use shortest round-trip formatting so logs compare bitwise.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:?},{:?},{:?},{:?},{:?},{:?}",
            self.step, self.epoch, self.l_gan_d, self.l_gan_g, self.l_nce_syn, self.l_nce_idt, self.total, self.lr
        )
    }
}

/// `λ_GAN·L_GAN + λ_syn·L_NCE(MR) + λ_idt·L_NCE(CT)`, with a report carrying each term.
pub fn cut_total_loss(lambdas: [f64; 3], c: CutLossComponents) -> (f64, LossReport) {
    let total = lambdas[0] * c.gan + lambdas[1] * c.nce_syn + lambdas[2] * c.nce_idt;
    let report = LossReport { l_gan_g: c.gan, l_nce_syn: c.nce_syn, l_nce_idt: c.nce_idt, total, ..Default::default() };
    (total, report)
}
