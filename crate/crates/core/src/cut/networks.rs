//! Generator, discriminator and projection heads as parameter sets plus
//! graph-building forward passes.

use rand::Rng;
use skullcut_nn::{init, Graph, PadMode, ParamSet, Scalar, Tensor, Var};

use super::{DiscriminatorSpec, GeneratorSpec, ProjectorSpec, LEAKY_SLOPE, NORM_EPS};
use crate::error::Result;

const INIT_STD: f64 = 0.02;

fn conv_w<T: Scalar, R: Rng + ?Sized>(cout: usize, cin: usize, k: usize, rng: &mut R) -> Tensor<T> {
    init::normal(&[cout, cin, k, k, k], INIT_STD, rng)
}

/// Variance-scaling init for convolutions that feed an instance norm; keeps
/// pre-norm activations well above the norm epsilon.
fn he_conv_w<T: Scalar, R: Rng + ?Sized>(cout: usize, cin: usize, k: usize, rng: &mut R) -> Tensor<T> {
    init::he_normal(&[cout, cin, k, k, k], 0.0, rng)
}

fn push_norm<T: Scalar>(p: &mut ParamSet<T>, name: &str, c: usize) {
    p.push(format!("{name}.gamma"), Tensor::full(&[c], T::one()));
    p.push(format!("{name}.beta"), Tensor::zeros(&[c]));
}

/// Walks a bound parameter list in construction order.
struct Cursor<'a> {
    vars: &'a [Var],
    at: usize,
}

impl Cursor<'_> {
    fn next(&mut self) -> Var {
        self.at += 1;
        self.vars[self.at - 1]
    }
}

/// Instance norm (recorded in `norms`) followed by the learnable per-channel affine.
fn norm<T: Scalar>(g: &mut Graph<T>, c: &mut Cursor, x: Var, norms: &mut Vec<Var>) -> Result<Var> {
    let n = g.instance_norm(x, NORM_EPS)?;
    norms.push(n);
    let (gamma, beta) = (c.next(), c.next());
    Ok(g.channel_affine(n, gamma, beta)?)
}

/// ResNet generator: reflect-padded stem, strided downsampling, residual
/// blocks, transposed-conv upsampling and a tanh head mapped to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator<T: Scalar> {
    pub spec: GeneratorSpec,
    pub params: ParamSet<T>,
}

/// Result of a generator forward pass.
pub struct GeneratorOutput {
    /// `[1, D, H, W]` in `[0, 1]`; absent for encoder-only passes.
    pub output: Option<Var>,
    /// Encoder taps in id order (stem conv, downsampling convs, residual blocks).
    pub taps: Vec<Var>,
    /// Instance-norm outputs before their affine rescale.
    pub norms: Vec<Var>,
}

impl<T: Scalar> Generator<T> {
    pub fn init<R: Rng + ?Sized>(spec: &GeneratorSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let (nf, k) = (spec.base_filters, spec.outer_kernel);
        let mut p = ParamSet::new();
        p.push("stem.w", he_conv_w(nf, 1, k, rng));
        push_norm(&mut p, "stem", nf);
        for i in 0..spec.n_downsample {
            let (cin, cout) = (nf << i, nf << (i + 1));
            p.push(format!("down{i}.w"), he_conv_w(cout, cin, 3, rng));
            push_norm(&mut p, &format!("down{i}"), cout);
        }
        let c = nf << spec.n_downsample;
        for j in 0..spec.n_residual_blocks {
            for half in 0..2 {
                p.push(format!("res{j}.conv{half}.w"), he_conv_w(c, c, 3, rng));
                push_norm(&mut p, &format!("res{j}.norm{half}"), c);
            }
        }
        for i in (0..spec.n_downsample).rev() {
            let (cin, cout) = (nf << (i + 1), nf << i);
            // A stride-2 kernel-4 transposed conv feeds each output from cin·8 taps.
            p.push(format!("up{i}.w"), init::normal(&[cin, cout, 4, 4, 4], (2.0 / (cin * 8) as f64).sqrt(), rng));
            push_norm(&mut p, &format!("up{i}"), cout);
        }
        p.push("head.w", conv_w(1, nf, k, rng));
        p.push("head.b", Tensor::zeros(&[1]));
        Ok(Self { spec: spec.clone(), params: p })
    }

    /// Builds the forward pass. With `encoder_only = Some(n)` it stops after tap `n - 1`.
    pub fn forward(&self, g: &mut Graph<T>, p: &[Var], x: Var, encoder_only: Option<usize>) -> Result<GeneratorOutput> {
        let s = &self.spec;
        let (_, dims) = g.value(x).dims4()?;
        s.check_input(dims)?;
        let stop = encoder_only.unwrap_or(usize::MAX);
        let mut c = Cursor { vars: p, at: 0 };
        let (mut taps, mut norms) = (Vec::new(), Vec::new());
        let done = |taps: &Vec<Var>| taps.len() >= stop;

        let half = s.outer_kernel / 2;
        let padded = g.pad(x, half, PadMode::Reflect)?;
        let w = c.next();
        let mut h = g.conv3d(padded, w, None, 1, 0)?;
        taps.push(h);
        if done(&taps) {
            return Ok(GeneratorOutput { output: None, taps, norms });
        }
        h = norm(g, &mut c, h, &mut norms)?;
        h = g.relu(h);
        for _ in 0..s.n_downsample {
            let w = c.next();
            h = g.conv3d(h, w, None, 2, 1)?;
            taps.push(h);
            if done(&taps) {
                return Ok(GeneratorOutput { output: None, taps, norms });
            }
            h = norm(g, &mut c, h, &mut norms)?;
            h = g.relu(h);
        }
        for _ in 0..s.n_residual_blocks {
            let mut r = h;
            for half in 0..2 {
                let padded = g.pad(r, 1, PadMode::Reflect)?;
                let w = c.next();
                r = g.conv3d(padded, w, None, 1, 0)?;
                r = norm(g, &mut c, r, &mut norms)?;
                if half == 0 {
                    r = g.relu(r);
                }
            }
            h = g.add(h, r)?;
            taps.push(h);
            if done(&taps) {
                return Ok(GeneratorOutput { output: None, taps, norms });
            }
        }
        for _ in 0..s.n_downsample {
            let w = c.next();
            h = g.conv_transpose3d(h, w, None, 2, 1)?;
            h = norm(g, &mut c, h, &mut norms)?;
            h = g.relu(h);
        }
        let padded = g.pad(h, half, PadMode::Reflect)?;
        let (w, b) = (c.next(), c.next());
        let out = g.conv3d(padded, w, Some(b), 1, 0)?;
        let out = g.tanh(out);
        let out = g.affine(out, 0.5, 0.5);
        Ok(GeneratorOutput { output: Some(out), taps, norms })
    }
}

/// PatchGAN discriminator producing a grid of real/synthetic logits.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator<T: Scalar> {
    pub spec: DiscriminatorSpec,
    pub params: ParamSet<T>,
}

impl<T: Scalar> Discriminator<T> {
    fn widths(spec: &DiscriminatorSpec) -> Vec<usize> {
        // channels after each conv before the final logit conv
        (0..=spec.n_layers).map(|i| spec.base_filters * (1usize << i.min(3))).collect()
    }

    pub fn init<R: Rng + ?Sized>(spec: &DiscriminatorSpec, rng: &mut R) -> Self {
        let widths = Self::widths(spec);
        let mut p = ParamSet::new();
        p.push("c0.w", conv_w(widths[0], 1, 4, rng));
        p.push("c0.b", Tensor::zeros(&[widths[0]]));
        for i in 1..=spec.n_layers {
            p.push(format!("c{i}.w"), conv_w(widths[i], widths[i - 1], 4, rng));
            push_norm(&mut p, &format!("c{i}"), widths[i]);
        }
        p.push("out.w", conv_w(1, widths[spec.n_layers], 4, rng));
        p.push("out.b", Tensor::zeros(&[1]));
        Self { spec: spec.clone(), params: p }
    }

    /// Logit grid `[1, d, h, w]` for a `[1, D, H, W]` input.
    pub fn forward(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        let mut c = Cursor { vars: p, at: 0 };
        let mut unused = Vec::new();
        let (w, b) = (c.next(), c.next());
        let mut h = g.conv3d(x, w, Some(b), 2, 1)?;
        h = g.leaky_relu(h, LEAKY_SLOPE);
        for i in 1..=self.spec.n_layers {
            let stride = if i < self.spec.n_layers { 2 } else { 1 };
            let w = c.next();
            h = g.conv3d(h, w, None, stride, 1)?;
            h = norm(g, &mut c, h, &mut unused)?;
            h = g.leaky_relu(h, LEAKY_SLOPE);
        }
        let (w, b) = (c.next(), c.next());
        Ok(g.conv3d(h, w, Some(b), 1, 1)?)
    }
}

/// One MLP head per contrastive tap layer, ending in row-wise L2 normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct Projector<T: Scalar> {
    pub spec: ProjectorSpec,
    pub params: ParamSet<T>,
}

impl<T: Scalar> Projector<T> {
    pub fn init<R: Rng + ?Sized>(spec: &ProjectorSpec, in_channels: &[usize], rng: &mut R) -> Self {
        let e = spec.embed_dim;
        let mut p = ParamSet::new();
        for (l, &c) in in_channels.iter().enumerate() {
            for i in 0..spec.n_layers {
                let fan_in = if i == 0 { c } else { e };
                p.push(format!("head{l}.w{i}"), init::normal(&[fan_in, e], INIT_STD, rng));
                p.push(format!("head{l}.b{i}"), Tensor::zeros(&[e]));
            }
        }
        Self { spec: spec.clone(), params: p }
    }

    /// Unit-norm embeddings `[S, E]` of the `[S, C]` features of head `layer`.
    pub fn forward(&self, g: &mut Graph<T>, p: &[Var], layer: usize, feats: Var) -> Result<Var> {
        let n = self.spec.n_layers;
        let base = layer * 2 * n;
        let mut h = feats;
        for i in 0..n {
            h = g.linear(h, p[base + 2 * i], p[base + 2 * i + 1])?;
            if i + 1 < n {
                h = g.relu(h);
            }
        }
        Ok(g.l2_normalize_rows(h)?)
    }
}
