//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] is append-only: every operation evaluates eagerly and records
//! what its backward pass needs. Values are per-instance tensors shaped
//! `[C, D, H, W]` for volumetric ops and `[rows, cols]` for the projection
//! head ops.

use crate::conv::{self, ConvGeom};
use crate::error::{NnError, Result};
use crate::params::{Binding, ParamSet};
use crate::scalar::{gemm, MatRef, Scalar};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PadMode {
    Reflect,
    Replicate,
}

enum Op<T> {
    Leaf,
    Conv { x: usize, w: usize, b: Option<usize>, geom: ConvGeom, cout: usize },
    ConvT { x: usize, w: usize, b: Option<usize>, geom: ConvGeom, cin: usize },
    InstanceNorm { x: usize, inv_std: Vec<T> },
    ChannelAffine { x: usize, scale: usize, shift: usize },
    Relu { x: usize },
    LeakyRelu { x: usize, slope: T },
    Tanh { x: usize },
    Affine { x: usize, a: T },
    Add { a: usize, b: usize },
    Pad { x: usize, pad: usize, mode: PadMode },
    Crop { x: usize, offset: [usize; 3] },
    GatherSites { x: usize, sites: Vec<usize> },
    Linear { x: usize, w: usize, b: usize },
    L2NormalizeRows { x: usize, inv_norm: Vec<T> },
    InfoNce { q: usize, k: usize, inv_tau: T, probs: Vec<T> },
    BceWithLogits { x: usize, target_one: bool, clamp: T },
    MseTo { x: usize, target: T },
    Charbonnier { x: usize, target: Tensor<T>, eps: T },
    WeightedSum { terms: Vec<(usize, T)> },
    Mean { x: usize },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    param: Option<(u32, usize)>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

/// Clamp applied to `-ln p` terms so saturated probabilities stay finite.
pub fn log_clamp<T: Scalar>() -> T {
    T::lit(-(1e-12f64).ln())
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err<R>(msg: String) -> Result<R> {
    Err(NnError::Shape(msg))
}

fn softplus<T: Scalar>(z: T) -> T {
    z.max(T::zero()) + (-z.abs()).exp().ln_1p()
}

fn sigmoid<T: Scalar>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}

fn pad_index(i: isize, n: usize, mode: PadMode) -> usize {
    let n = n as isize;
    let j = match mode {
        PadMode::Replicate => i.clamp(0, n - 1),
        PadMode::Reflect => {
            if i < 0 {
                -i
            } else if i >= n {
                2 * (n - 1) - i
            } else {
                i
            }
        }
    };
    j as usize
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad, param: None });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    /// Constant input (no gradient).
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf that receives a gradient but is not tied to a parameter set.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Copy of `v` with its history cut.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.nodes[v.0].value.clone();
        self.input(t)
    }

    /// Registers every tensor of `params` as a leaf and returns their handles in order.
    pub fn bind(&mut self, params: &ParamSet<T>, binding: Binding) -> Vec<Var> {
        params
            .tensors()
            .iter()
            .enumerate()
            .map(|(i, t)| match binding {
                Binding::Frozen => self.input(t.clone()),
                Binding::Trainable(group) => {
                    let v = self.leaf(t.clone());
                    self.nodes[v.0].param = Some((group, i));
                    v
                }
            })
            .collect()
    }

    /// Gradient for each parameter of `group`, zero-filled where no gradient flowed.
    pub fn param_grads(&self, grads: &Gradients<T>, group: u32, params: &ParamSet<T>) -> Vec<Tensor<T>> {
        let mut out = params.zeros_like();
        for (id, node) in self.nodes.iter().enumerate() {
            if let (Some((g, i)), Some(grad)) = (node.param, grads.grads.get(id).and_then(Option::as_ref)) {
                if g == group {
                    out[i].add_assign(grad);
                }
            }
        }
        out
    }

    // ---------------------------------------------------------------- volumetric ops

    pub fn conv3d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (cin, dims) = self.value(x).dims4()?;
        let ws = self.value(w).shape().to_vec();
        if ws.len() != 5 || ws[1] != cin || ws[2] != ws[3] || ws[3] != ws[4] {
            return shape_err(format!("conv weight {ws:?} incompatible with {cin} input channels"));
        }
        let cout = ws[0];
        let geom = ConvGeom::new(cin, dims, ws[2], stride, pad)?;
        let bias = match b {
            Some(b) if self.value(b).len() != cout => return shape_err("conv bias length".into()),
            Some(b) => Some(self.value(b).data()),
            None => None,
        };
        let out = conv::conv_forward(&geom, self.value(x).data(), self.value(w).data(), bias, cout);
        let [od, oh, ow] = geom.output;
        let t = Tensor::from_vec(&[cout, od, oh, ow], out)?;
        let mut ids = vec![x.0, w.0];
        ids.extend(b.map(|b| b.0));
        let rg = self.rg(&ids);
        Ok(self.push(t, Op::Conv { x: x.0, w: w.0, b: b.map(|b| b.0), geom, cout }, rg))
    }

    /// Transposed convolution with weight `[cin, cout, k, k, k]`.
    pub fn conv_transpose3d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (cin, dims) = self.value(x).dims4()?;
        let ws = self.value(w).shape().to_vec();
        if ws.len() != 5 || ws[0] != cin || ws[2] != ws[3] || ws[3] != ws[4] {
            return shape_err(format!("transposed conv weight {ws:?} incompatible with {cin} input channels"));
        }
        let cout = ws[1];
        let geom = ConvGeom::transposed(cout, dims, ws[2], stride, pad)?;
        let bias = match b {
            Some(b) if self.value(b).len() != cout => return shape_err("transposed conv bias length".into()),
            Some(b) => Some(self.value(b).data()),
            None => None,
        };
        let out = conv::conv_transpose_forward(&geom, self.value(x).data(), self.value(w).data(), bias, cin);
        let [d, h, wd] = geom.input;
        let t = Tensor::from_vec(&[cout, d, h, wd], out)?;
        let mut ids = vec![x.0, w.0];
        ids.extend(b.map(|b| b.0));
        let rg = self.rg(&ids);
        Ok(self.push(t, Op::ConvT { x: x.0, w: w.0, b: b.map(|b| b.0), geom, cin }, rg))
    }

    /// Per-channel normalization over spatial positions (no affine part).
    pub fn instance_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let (c, _) = self.value(x).dims4()?;
        let xv = self.value(x);
        let per = xv.len() / c;
        let mut out = Vec::with_capacity(xv.len());
        let mut inv_std = Vec::with_capacity(c);
        for chunk in xv.data().chunks(per) {
            let mean = chunk.iter().map(|v| v.to_f64().unwrap()).sum::<f64>() / per as f64;
            let var = chunk
                .iter()
                .map(|v| {
                    let d = v.to_f64().unwrap() - mean;
                    d * d
                })
                .sum::<f64>()
                / per as f64;
            let inv = 1.0 / (var + eps).sqrt();
            out.extend(chunk.iter().map(|v| T::lit((v.to_f64().unwrap() - mean) * inv)));
            inv_std.push(T::lit(inv));
        }
        let t = Tensor::from_vec(xv.shape(), out)?;
        let rg = self.rg(&[x.0]);
        Ok(self.push(t, Op::InstanceNorm { x: x.0, inv_std }, rg))
    }

    /// `y[c] = x[c] * scale[c] + shift[c]`.
    pub fn channel_affine(&mut self, x: Var, scale: Var, shift: Var) -> Result<Var> {
        let (c, _) = self.value(x).dims4()?;
        if self.value(scale).len() != c || self.value(shift).len() != c {
            return shape_err("channel affine parameter length".into());
        }
        let xv = self.value(x);
        let per = xv.len() / c;
        let (s, b) = (self.value(scale).data(), self.value(shift).data());
        let out: Vec<T> = xv.data().chunks(per).enumerate().flat_map(|(ci, ch)| ch.iter().map(move |&v| v * s[ci] + b[ci])).collect();
        let t = Tensor::from_vec(xv.shape(), out)?;
        let rg = self.rg(&[x.0, scale.0, shift.0]);
        Ok(self.push(t, Op::ChannelAffine { x: x.0, scale: scale.0, shift: shift.0 }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v.max(T::zero()));
        let rg = self.rg(&[x.0]);
        self.push(t, Op::Relu { x: x.0 }, rg)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let s = T::lit(slope);
        let t = self.value(x).map(|v| if v > T::zero() { v } else { v * s });
        let rg = self.rg(&[x.0]);
        self.push(t, Op::LeakyRelu { x: x.0, slope: s }, rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v.tanh());
        let rg = self.rg(&[x.0]);
        self.push(t, Op::Tanh { x: x.0 }, rg)
    }

    /// `a * x + b` with scalar coefficients.
    pub fn affine(&mut self, x: Var, a: f64, b: f64) -> Var {
        let (ta, tb) = (T::lit(a), T::lit(b));
        let t = self.value(x).map(|v| v * ta + tb);
        let rg = self.rg(&[x.0]);
        self.push(t, Op::Affine { x: x.0, a: ta }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return shape_err(format!("add {:?} + {:?}", self.value(a).shape(), self.value(b).shape()));
        }
        let mut t = self.value(a).clone();
        t.add_assign(self.value(b));
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(t, Op::Add { a: a.0, b: b.0 }, rg))
    }

    pub fn pad(&mut self, x: Var, pad: usize, mode: PadMode) -> Result<Var> {
        let (c, [d, h, w]) = self.value(x).dims4()?;
        if mode == PadMode::Reflect && (pad >= d || pad >= h || pad >= w) {
            return shape_err(format!("reflect pad {pad} too large for {:?}", [d, h, w]));
        }
        let (pd, ph, pw) = (d + 2 * pad, h + 2 * pad, w + 2 * pad);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(c * pd * ph * pw);
        let p = pad as isize;
        for ci in 0..c {
            for z in 0..pd {
                let sz = pad_index(z as isize - p, d, mode);
                for y in 0..ph {
                    let sy = pad_index(y as isize - p, h, mode);
                    let row = ((ci * d + sz) * h + sy) * w;
                    out.extend((0..pw).map(|xx| src[row + pad_index(xx as isize - p, w, mode)]));
                }
            }
        }
        let t = Tensor::from_vec(&[c, pd, ph, pw], out)?;
        let rg = self.rg(&[x.0]);
        Ok(self.push(t, Op::Pad { x: x.0, pad, mode }, rg))
    }

    pub fn crop(&mut self, x: Var, offset: [usize; 3], size: [usize; 3]) -> Result<Var> {
        let (c, [d, h, w]) = self.value(x).dims4()?;
        if (0..3).any(|a| offset[a] + size[a] > [d, h, w][a]) {
            return shape_err(format!("crop {offset:?}+{size:?} exceeds {:?}", [d, h, w]));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(c * size.iter().product::<usize>());
        for ci in 0..c {
            for z in 0..size[0] {
                for y in 0..size[1] {
                    let row = ((ci * d + z + offset[0]) * h + y + offset[1]) * w + offset[2];
                    out.extend_from_slice(&src[row..row + size[2]]);
                }
            }
        }
        let t = Tensor::from_vec(&[c, size[0], size[1], size[2]], out)?;
        let rg = self.rg(&[x.0]);
        Ok(self.push(t, Op::Crop { x: x.0, offset }, rg))
    }

    // ---------------------------------------------------------------- projection head ops

    /// Feature vectors at flat spatial `sites`: `[C, D, H, W]` → `[S, C]`.
    pub fn gather_sites(&mut self, x: Var, sites: &[usize]) -> Result<Var> {
        let (c, dims) = self.value(x).dims4()?;
        let n: usize = dims.iter().product();
        if let Some(&bad) = sites.iter().find(|&&s| s >= n) {
            return shape_err(format!("site {bad} outside grid of {n} positions"));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(sites.len() * c);
        for &s in sites {
            out.extend((0..c).map(|ci| src[ci * n + s]));
        }
        let t = Tensor::from_vec(&[sites.len(), c], out)?;
        let rg = self.rg(&[x.0]);
        Ok(self.push(t, Op::GatherSites { x: x.0, sites: sites.to_vec() }, rg))
    }

    /// `x[S, in] · w[in, out] + b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws) = (self.value(x).shape(), self.value(w).shape());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] || self.value(b).len() != ws[1] {
            return shape_err(format!("linear {xs:?} · {ws:?}"));
        }
        let (s, i, o) = (xs[0], xs[1], ws[1]);
        let mut out = vec![T::zero(); s * o];
        gemm(s, i, o, T::one(), MatRef::new(self.value(x).data(), i), MatRef::new(self.value(w).data(), o), T::zero(), &mut out, o);
        let bias = self.value(b).data();
        for row in out.chunks_mut(o) {
            for (v, &bb) in row.iter_mut().zip(bias) {
                *v += bb;
            }
        }
        let t = Tensor::from_vec(&[s, o], out)?;
        let rg = self.rg(&[x.0, w.0, b.0]);
        Ok(self.push(t, Op::Linear { x: x.0, w: w.0, b: b.0 }, rg))
    }

    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 2 {
            return shape_err(format!("row normalization of {xs:?}"));
        }
        let mut out = self.value(x).clone();
        let mut inv_norm = Vec::with_capacity(xs[0]);
        for row in out.data_mut().chunks_mut(xs[1]) {
            let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt().max(T::lit(1e-12));
            let inv = T::one() / norm;
            row.iter_mut().for_each(|v| *v *= inv);
            inv_norm.push(inv);
        }
        let rg = self.rg(&[x.0]);
        Ok(self.push(out, Op::L2NormalizeRows { x: x.0, inv_norm }, rg))
    }

    // ---------------------------------------------------------------- losses

    /// Row-wise InfoNCE: query row `i` is scored against every key row, with
    /// key `i` as the positive and the remaining rows as negatives. Mean over rows.
    pub fn info_nce(&mut self, q: Var, k: Var, temperature: f64) -> Result<Var> {
        let (qs, ks) = (self.value(q).shape(), self.value(k).shape());
        if qs.len() != 2 || qs != ks {
            return shape_err(format!("info_nce query {qs:?} vs keys {ks:?}"));
        }
        let (s, e) = (qs[0], qs[1]);
        if s < 2 {
            return Err(NnError::InvalidArgument("info_nce needs at least one negative".into()));
        }
        let inv_tau = T::lit(1.0 / temperature);
        let mut logits = vec![T::zero(); s * s];
        gemm(s, e, s, inv_tau, MatRef::new(self.value(q).data(), e), MatRef::t(self.value(k).data(), e), T::zero(), &mut logits, s);
        let mut loss = 0.0f64;
        for (i, row) in logits.chunks_mut(s).enumerate() {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            let pos = row[i];
            for v in row.iter_mut() {
                *v /= z;
            }
            loss += -(pos / z).ln().to_f64().unwrap();
        }
        let t = Tensor::scalar(T::lit(loss / s as f64));
        let rg = self.rg(&[q.0, k.0]);
        Ok(self.push(t, Op::InfoNce { q: q.0, k: k.0, inv_tau, probs: logits }, rg))
    }

    /// Mean binary cross-entropy of logits against an all-one or all-zero target.
    pub fn bce_with_logits(&mut self, x: Var, target_one: bool) -> Var {
        let clamp = log_clamp::<T>();
        let xv = self.value(x);
        let n = T::lit(xv.len() as f64);
        let sum: T = xv.data().iter().map(|&z| softplus(if target_one { -z } else { z }).min(clamp)).sum();
        let rg = self.rg(&[x.0]);
        self.push(Tensor::scalar(sum / n), Op::BceWithLogits { x: x.0, target_one, clamp }, rg)
    }

    /// Mean squared distance to a constant target.
    pub fn mse_to(&mut self, x: Var, target: f64) -> Var {
        let t = T::lit(target);
        let xv = self.value(x);
        let n = T::lit(xv.len() as f64);
        let sum: T = xv.data().iter().map(|&v| (v - t) * (v - t)).sum();
        let rg = self.rg(&[x.0]);
        self.push(Tensor::scalar(sum / n), Op::MseTo { x: x.0, target: t }, rg)
    }

    /// Voxel-mean of `sqrt((target - x)^2 + eps^2)`.
    pub fn charbonnier(&mut self, x: Var, target: &Tensor<T>, eps: f64) -> Result<Var> {
        if self.value(x).shape() != target.shape() {
            return shape_err(format!("charbonnier {:?} vs {:?}", self.value(x).shape(), target.shape()));
        }
        let e = T::lit(eps);
        let xv = self.value(x);
        let sum: f64 = xv
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &y)| {
                let d = y - p;
                (d * d + e * e).sqrt().to_f64().unwrap()
            })
            .sum();
        let t = Tensor::scalar(T::lit(sum / xv.len() as f64));
        let rg = self.rg(&[x.0]);
        Ok(self.push(t, Op::Charbonnier { x: x.0, target: target.clone(), eps: e }, rg))
    }

    /// Weighted sum of scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut total = T::zero();
        for &(v, w) in terms {
            if self.value(v).len() != 1 {
                return shape_err("weighted_sum expects scalar terms".into());
            }
            total += self.value(v).item() * T::lit(w);
        }
        let ids: Vec<usize> = terms.iter().map(|(v, _)| v.0).collect();
        let rg = self.rg(&ids);
        let terms = terms.iter().map(|&(v, w)| (v.0, T::lit(w))).collect();
        Ok(self.push(Tensor::scalar(total), Op::WeightedSum { terms }, rg))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let m = xv.data().iter().copied().sum::<T>() / T::lit(xv.len() as f64);
        let rg = self.rg(&[x.0]);
        self.push(Tensor::scalar(m), Op::Mean { x: x.0 }, rg)
    }

    // ---------------------------------------------------------------- backward

    /// Back-propagates from a scalar node. Gradients are kept for leaves only.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        assert_eq!(self.nodes[loss.0].value.len(), 1, "backward from non-scalar node");
        if !self.nodes[loss.0].requires_grad {
            return Gradients { grads };
        }
        grads[loss.0] = Some(Tensor::full(self.nodes[loss.0].value.shape(), T::one()));
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.backward_node(id, &g, &mut grads);
        }
        Gradients { grads }
    }

    fn acc(&self, grads: &mut [Option<Tensor<T>>], id: usize, t: Tensor<T>) {
        if !self.nodes[id].requires_grad {
            return;
        }
        match &mut grads[id] {
            Some(g) => g.add_assign(&t),
            slot => *slot = Some(t),
        }
    }

    fn acc_vec(&self, grads: &mut [Option<Tensor<T>>], id: usize, v: Vec<T>) {
        if !self.nodes[id].requires_grad {
            return;
        }
        let t = Tensor::from_vec(self.nodes[id].value.shape(), v).expect("gradient shape");
        self.acc(grads, id, t);
    }

    fn backward_node(&self, id: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[id];
        let y = &node.value;
        let val = |i: usize| &self.nodes[i].value;
        let need = |i: usize| self.nodes[i].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, w, b, geom, cout } => {
                let cg = conv::conv_backward(geom, val(*x).data(), val(*w).data(), *cout, g.data(), need(*x));
                if let Some(dx) = cg.dx {
                    self.acc_vec(grads, *x, dx);
                }
                self.acc_vec(grads, *w, cg.dw);
                if let Some(b) = b {
                    self.acc_vec(grads, *b, cg.db);
                }
            }
            Op::ConvT { x, w, b, geom, cin } => {
                let cg = conv::conv_transpose_backward(geom, val(*x).data(), val(*w).data(), *cin, g.data(), need(*x));
                if let Some(dx) = cg.dx {
                    self.acc_vec(grads, *x, dx);
                }
                self.acc_vec(grads, *w, cg.dw);
                if let Some(b) = b {
                    self.acc_vec(grads, *b, cg.db);
                }
            }
            Op::InstanceNorm { x, inv_std } => {
                let c = inv_std.len();
                let per = y.len() / c;
                let mut dx = Vec::with_capacity(y.len());
                for ci in 0..c {
                    let yc = &y.data()[ci * per..(ci + 1) * per];
                    let gc = &g.data()[ci * per..(ci + 1) * per];
                    let mean_g = gc.iter().map(|v| v.to_f64().unwrap()).sum::<f64>() / per as f64;
                    let mean_gy = gc.iter().zip(yc).map(|(a, b)| a.to_f64().unwrap() * b.to_f64().unwrap()).sum::<f64>() / per as f64;
                    let (mg, mgy) = (T::lit(mean_g), T::lit(mean_gy));
                    let inv = inv_std[ci];
                    dx.extend(gc.iter().zip(yc).map(|(&gv, &yv)| inv * (gv - mg - yv * mgy)));
                }
                self.acc_vec(grads, *x, dx);
            }
            Op::ChannelAffine { x, scale, shift } => {
                let c = val(*scale).len();
                let per = y.len() / c;
                let xv = val(*x).data();
                let s = val(*scale).data();
                let mut dx = Vec::with_capacity(y.len());
                let mut ds = vec![T::zero(); c];
                let mut db = vec![T::zero(); c];
                for ci in 0..c {
                    for j in ci * per..(ci + 1) * per {
                        let gv = g.data()[j];
                        dx.push(gv * s[ci]);
                        ds[ci] += gv * xv[j];
                        db[ci] += gv;
                    }
                }
                self.acc_vec(grads, *x, dx);
                self.acc_vec(grads, *scale, ds);
                self.acc_vec(grads, *shift, db);
            }
            Op::Relu { x } => {
                let dx = g.data().iter().zip(y.data()).map(|(&gv, &yv)| if yv > T::zero() { gv } else { T::zero() }).collect();
                self.acc_vec(grads, *x, dx);
            }
            Op::LeakyRelu { x, slope } => {
                let dx = g.data().iter().zip(y.data()).map(|(&gv, &yv)| if yv > T::zero() { gv } else { gv * *slope }).collect();
                self.acc_vec(grads, *x, dx);
            }
            Op::Tanh { x } => {
                let dx = g.data().iter().zip(y.data()).map(|(&gv, &yv)| gv * (T::one() - yv * yv)).collect();
                self.acc_vec(grads, *x, dx);
            }
            Op::Affine { x, a } => {
                self.acc(grads, *x, g.map(|v| v * *a));
            }
            Op::Add { a, b } => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Pad { x, pad, mode } => {
                let (c, [d, h, w]) = val(*x).dims4().expect("4-d");
                let (_, [pd, ph, pw]) = y.dims4().expect("4-d");
                let p = *pad as isize;
                let mut dx = vec![T::zero(); val(*x).len()];
                let gd = g.data();
                let mut k = 0;
                for ci in 0..c {
                    for z in 0..pd {
                        let sz = pad_index(z as isize - p, d, *mode);
                        for yy in 0..ph {
                            let sy = pad_index(yy as isize - p, h, *mode);
                            let row = ((ci * d + sz) * h + sy) * w;
                            for xx in 0..pw {
                                dx[row + pad_index(xx as isize - p, w, *mode)] += gd[k];
                                k += 1;
                            }
                        }
                    }
                }
                self.acc_vec(grads, *x, dx);
            }
            Op::Crop { x, offset } => {
                let (c, [d, h, w]) = val(*x).dims4().expect("4-d");
                let (_, size) = y.dims4().expect("4-d");
                let mut dx = vec![T::zero(); val(*x).len()];
                let mut k = 0;
                for ci in 0..c {
                    for z in 0..size[0] {
                        for yy in 0..size[1] {
                            let row = ((ci * d + z + offset[0]) * h + yy + offset[1]) * w + offset[2];
                            dx[row..row + size[2]].copy_from_slice(&g.data()[k..k + size[2]]);
                            k += size[2];
                        }
                    }
                }
                self.acc_vec(grads, *x, dx);
            }
            Op::GatherSites { x, sites } => {
                let (c, dims) = val(*x).dims4().expect("4-d");
                let n: usize = dims.iter().product();
                let mut dx = vec![T::zero(); val(*x).len()];
                for (si, &s) in sites.iter().enumerate() {
                    for ci in 0..c {
                        dx[ci * n + s] += g.data()[si * c + ci];
                    }
                }
                self.acc_vec(grads, *x, dx);
            }
            Op::Linear { x, w, b } => {
                let (s, i) = (val(*x).shape()[0], val(*x).shape()[1]);
                let o = val(*w).shape()[1];
                if need(*x) {
                    let mut dx = vec![T::zero(); s * i];
                    gemm(s, o, i, T::one(), MatRef::new(g.data(), o), MatRef::t(val(*w).data(), o), T::zero(), &mut dx, i);
                    self.acc_vec(grads, *x, dx);
                }
                if need(*w) {
                    let mut dw = vec![T::zero(); i * o];
                    gemm(i, s, o, T::one(), MatRef::t(val(*x).data(), i), MatRef::new(g.data(), o), T::zero(), &mut dw, o);
                    self.acc_vec(grads, *w, dw);
                }
                if need(*b) {
                    let mut db = vec![T::zero(); o];
                    for row in g.data().chunks(o) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    self.acc_vec(grads, *b, db);
                }
            }
            Op::L2NormalizeRows { x, inv_norm } => {
                let cols = y.shape()[1];
                let mut dx = Vec::with_capacity(y.len());
                for ((yr, gr), &inv) in y.data().chunks(cols).zip(g.data().chunks(cols)).zip(inv_norm) {
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    dx.extend(yr.iter().zip(gr).map(|(&yv, &gv)| inv * (gv - yv * dot)));
                }
                self.acc_vec(grads, *x, dx);
            }
            Op::InfoNce { q, k, inv_tau, probs } => {
                let (s, e) = (val(*q).shape()[0], val(*q).shape()[1]);
                let scale = g.item() / T::lit(s as f64);
                let mut dl = probs.clone();
                for i in 0..s {
                    dl[i * s + i] -= T::one();
                }
                for v in &mut dl {
                    *v *= scale;
                }
                if need(*q) {
                    let mut dq = vec![T::zero(); s * e];
                    gemm(s, s, e, *inv_tau, MatRef::new(&dl, s), MatRef::new(val(*k).data(), e), T::zero(), &mut dq, e);
                    self.acc_vec(grads, *q, dq);
                }
                if need(*k) {
                    let mut dk = vec![T::zero(); s * e];
                    gemm(s, s, e, *inv_tau, MatRef::t(&dl, s), MatRef::new(val(*q).data(), e), T::zero(), &mut dk, e);
                    self.acc_vec(grads, *k, dk);
                }
            }
            Op::BceWithLogits { x, target_one, clamp } => {
                let xv = val(*x);
                let scale = g.item() / T::lit(xv.len() as f64);
                let dx = xv
                    .data()
                    .iter()
                    .map(|&z| {
                        let arg = if *target_one { -z } else { z };
                        if softplus(arg) >= *clamp {
                            T::zero()
                        } else if *target_one {
                            (sigmoid(z) - T::one()) * scale
                        } else {
                            sigmoid(z) * scale
                        }
                    })
                    .collect();
                self.acc_vec(grads, *x, dx);
            }
            Op::MseTo { x, target } => {
                let xv = val(*x);
                let scale = g.item() * T::lit(2.0 / xv.len() as f64);
                self.acc(grads, *x, xv.map(|v| (v - *target) * scale));
            }
            Op::Charbonnier { x, target, eps } => {
                let xv = val(*x);
                let scale = g.item() / T::lit(xv.len() as f64);
                let dx = xv
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(&p, &t)| {
                        let d = p - t;
                        d / (d * d + *eps * *eps).sqrt() * scale
                    })
                    .collect();
                self.acc_vec(grads, *x, dx);
            }
            Op::WeightedSum { terms } => {
                for &(t, w) in terms {
                    self.acc(grads, t, Tensor::scalar(g.item() * w));
                }
            }
            Op::Mean { x } => {
                let xv = val(*x);
                let v = g.item() / T::lit(xv.len() as f64);
                self.acc(grads, *x, Tensor::full(xv.shape(), v));
            }
        }
    }
}
