//! Laplacian pyramid network: per level a feature branch predicts a residual
//! at twice the resolution, and an image branch upsamples the previous
//! estimate; the level output is their sum.

use rand::Rng;
use skullcut_nn::init::{he_normal, trilinear_filter};
use skullcut_nn::{Graph, PadMode, ParamSet, Scalar, Tensor, Var};

use super::PyramidSpec;
use crate::error::{Error, Result};
use crate::volume::{Domain, Volume};

/// Leaky ReLU slope of the feature branch.
pub const SR_LEAKY_SLOPE: f64 = 0.2;

const UP_KERNEL: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct SrNetwork<T> {
    pub spec: PyramidSpec,
    pub params: ParamSet<T>,
}

fn zeros<T: Scalar>(shape: &[usize]) -> Tensor<T> {
    Tensor::zeros(shape)
}

impl<T: Scalar> SrNetwork<T> {
    /// He-initialized convolutions, trilinear upsampling filters and a
    /// zero residual head, so an untrained level is plain trilinear upsampling.
    pub fn init<R: Rng + ?Sized>(spec: &PyramidSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let nf = spec.filters;
        let mut p = ParamSet::new();
        p.push("conv_in.w", he_normal(&[nf, 1, 3, 3, 3], SR_LEAKY_SLOPE, rng));
        p.push("conv_in.b", zeros(&[nf]));
        for s in 0..spec.levels {
            for i in 0..spec.feat_layers {
                p.push(format!("l{s}.feat{i}.w"), he_normal(&[nf, nf, 3, 3, 3], SR_LEAKY_SLOPE, rng));
                p.push(format!("l{s}.feat{i}.b"), zeros(&[nf]));
            }
            p.push(format!("l{s}.up.w"), trilinear_filter(nf, UP_KERNEL));
            p.push(format!("l{s}.up.b"), zeros(&[nf]));
            for i in 0..spec.recon_layers - 2 {
                p.push(format!("l{s}.recon{i}.w"), he_normal(&[nf, nf, 3, 3, 3], SR_LEAKY_SLOPE, rng));
                p.push(format!("l{s}.recon{i}.b"), zeros(&[nf]));
            }
            p.push(format!("l{s}.residual.w"), zeros(&[1, nf, 3, 3, 3]));
            p.push(format!("l{s}.residual.b"), zeros(&[1]));
            p.push(format!("l{s}.image_up.w"), trilinear_filter(1, UP_KERNEL));
        }
        Ok(Self { spec: spec.clone(), params: p })
    }

    pub fn cast<U: Scalar>(&self) -> SrNetwork<U> {
        SrNetwork { spec: self.spec.clone(), params: self.params.cast() }
    }
}

/// Trilinear ×2 upsampling (half-voxel centres, clamped edges) as a graph op.
pub fn upsample_image<T: Scalar>(g: &mut Graph<T>, x: Var, w: Var) -> Result<Var> {
    let (_, dims) = g.value(x).dims4()?;
    let padded = g.pad(x, 1, PadMode::Replicate)?;
    let up = g.conv_transpose3d(padded, w, None, 2, 1)?;
    Ok(g.crop(up, [2; 3], dims.map(|d| 2 * d))?)
}

/// Per-level predictions for `levels ≤ spec.levels`, coarse to fine, unclamped.
pub fn sr_forward<T: Scalar>(net: &SrNetwork<T>, g: &mut Graph<T>, params: &[Var], x: Var, levels: usize) -> Result<Vec<Var>> {
    let spec = &net.spec;
    if levels > spec.levels {
        return Err(Error::InvalidArgument(format!("{levels} levels requested, network has {}", spec.levels)));
    }
    let (c, dims) = g.value(x).dims4()?;
    if c != 1 {
        return Err(Error::Shape(format!("expected one input channel, got {c}")));
    }
    spec.check_budget(dims, levels)?;
    let mut it = params.iter().copied();
    let mut next = || it.next().expect("parameter list matches spec");
    let (w, b) = (next(), next());
    let conv = g.conv3d(x, w, Some(b), 1, 1)?;
    let mut feat = g.leaky_relu(conv, SR_LEAKY_SLOPE);
    let mut image = x;
    let mut outputs = Vec::with_capacity(levels);
    for _ in 0..levels {
        for _ in 0..spec.feat_layers {
            let (w, b) = (next(), next());
            let conv = g.conv3d(feat, w, Some(b), 1, 1)?;
            feat = g.leaky_relu(conv, SR_LEAKY_SLOPE);
        }
        let (w, b) = (next(), next());
        let up = g.conv_transpose3d(feat, w, Some(b), 2, 1)?;
        feat = g.leaky_relu(up, SR_LEAKY_SLOPE);
        let mut r = feat;
        for _ in 0..spec.recon_layers - 2 {
            let (w, b) = (next(), next());
            let conv = g.conv3d(r, w, Some(b), 1, 1)?;
            r = g.leaky_relu(conv, SR_LEAKY_SLOPE);
        }
        let (w, b) = (next(), next());
        let residual = g.conv3d(r, w, Some(b), 1, 1)?;
        let up_w = next();
        let upsampled = upsample_image(g, image, up_w)?;
        image = g.add(upsampled, residual)?;
        outputs.push(image);
    }
    Ok(outputs)
}

/// Summed per-level voxel-mean Charbonnier penalty.
pub fn charbonnier_loss<T: Scalar>(g: &mut Graph<T>, preds: &[Var], targets: &[Tensor<T>], eps: f64) -> Result<Var> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(Error::Shape(format!("{} predictions for {} targets", preds.len(), targets.len())));
    }
    let terms = preds.iter().zip(targets).map(|(&p, t)| Ok((g.charbonnier(p, t, eps)?, 1.0))).collect::<Result<Vec<_>>>()?;
    Ok(g.weighted_sum(&terms)?)
}

/// Charbonnier penalty of volume predictions, evaluated in f64.
pub fn charbonnier_value(preds: &[Volume], targets: &[Volume], eps: f64) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(Error::Shape(format!("{} predictions for {} targets", preds.len(), targets.len())));
    }
    let mut total = 0.0;
    for (p, t) in preds.iter().zip(targets) {
        if p.shape() != t.shape() {
            return Err(Error::Shape(format!("prediction {:?} vs target {:?}", p.shape(), t.shape())));
        }
        let sum: f64 =
            p.data().iter().zip(t.data()).map(|(&a, &b)| ((b as f64 - a as f64).powi(2) + eps * eps).sqrt()).sum();
        total += sum / p.len() as f64;
    }
    Ok(total)
}

/// Inference on one `UNIT` volume: per-level outputs, each clamped to `[0, 1]`.
pub fn predict_levels(net: &SrNetwork<f32>, lr: &Volume, levels: usize) -> Result<Vec<Volume>> {
    lr.require_domain(Domain::Unit)?;
    let mut g = Graph::new();
    let p = g.bind(&net.params, skullcut_nn::Binding::Frozen);
    let x = g.input(lr.to_tensor());
    let outs = sr_forward(net, &mut g, &p, x, levels)?;
    let mut spacing = lr.spacing();
    outs.into_iter()
        .map(|o| {
            spacing = spacing.map(|s| s / 2.0);
            let t = g.value(o).map(|v| v.clamp(0.0, 1.0));
            Ok(Volume::from_tensor(&t, spacing, Domain::Unit)?.with_provenance(lr.provenance().to_owned()))
        })
        .collect()
}
