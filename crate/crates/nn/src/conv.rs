//! Blocked im2col convolution kernels.
//!
//! A [`ConvGeom`] always describes a *forward* convolution from a "big" grid
//! (`input`) to a "small" grid (`output`). A transposed convolution uses the
//! same geometry with the roles reversed, which makes the two operators exact
//! adjoints of each other.

use crate::error::{NnError, Result};
use crate::scalar::{gemm, MatRef, Scalar};

/// Upper bound on im2col buffer elements per block.
const BLOCK_ELEMS: usize = 1 << 21;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    /// Channels on the big side.
    pub channels: usize,
    pub input: [usize; 3],
    pub output: [usize; 3],
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn new(channels: usize, input: [usize; 3], kernel: usize, stride: usize, pad: usize) -> Result<Self> {
        if kernel == 0 || stride == 0 {
            return Err(NnError::InvalidArgument("kernel and stride must be positive".into()));
        }
        let mut output = [0; 3];
        for a in 0..3 {
            let padded = input[a] + 2 * pad;
            if padded < kernel {
                return Err(NnError::Shape(format!(
                    "input extent {} (pad {pad}) smaller than kernel {kernel}",
                    input[a]
                )));
            }
            output[a] = (padded - kernel) / stride + 1;
        }
        Ok(Self { channels, input, output, kernel, stride, pad })
    }

    /// Geometry of a transposed convolution producing `channels` outputs from a `small` grid.
    pub fn transposed(channels: usize, small: [usize; 3], kernel: usize, stride: usize, pad: usize) -> Result<Self> {
        let mut big = [0; 3];
        for a in 0..3 {
            let full = (small[a] - 1) * stride + kernel;
            if small[a] == 0 || full <= 2 * pad {
                return Err(NnError::Shape(format!("transposed conv of extent {} collapses", small[a])));
            }
            big[a] = full - 2 * pad;
        }
        let g = Self::new(channels, big, kernel, stride, pad)?;
        if g.output != small {
            return Err(NnError::Shape(format!("transposed geometry mismatch {:?} vs {small:?}", g.output)));
        }
        Ok(g)
    }

    pub fn rows(&self) -> usize {
        self.channels * self.kernel.pow(3)
    }

    pub fn cols(&self) -> usize {
        self.output.iter().product()
    }

    pub fn big_len(&self) -> usize {
        self.channels * self.input.iter().product::<usize>()
    }

    fn lines(&self) -> usize {
        self.output[0] * self.output[1]
    }

    fn lines_per_block(&self) -> usize {
        (BLOCK_ELEMS / (self.rows() * self.output[2]).max(1)).clamp(1, self.lines())
    }

    fn blocks(&self) -> impl Iterator<Item = (usize, usize)> {
        let per = self.lines_per_block();
        let total = self.lines();
        (0..total).step_by(per).map(move |l0| (l0, per.min(total - l0)))
    }

    /// Valid `ox` range for kernel offset `kx` (stride-1 fast path).
    fn x_range(&self, kx: usize) -> (usize, usize) {
        let (w, ow, p) = (self.input[2], self.output[2], self.pad);
        let lo = p.saturating_sub(kx);
        let hi = (w + p).saturating_sub(kx).min(ow);
        (lo, hi.max(lo))
    }
}

/// Gathers the receptive fields of output lines `[line0, line0 + nlines)`.
fn im2col<T: Scalar>(g: &ConvGeom, x: &[T], line0: usize, nlines: usize, out: &mut [T]) {
    let [d, h, w] = g.input;
    let [_, oh, ow] = g.output;
    let (k, s, p) = (g.kernel, g.stride, g.pad);
    let ncols = nlines * ow;
    let vol = d * h * w;
    let mut row = 0;
    for c in 0..g.channels {
        let xc = &x[c * vol..(c + 1) * vol];
        for kz in 0..k {
            for ky in 0..k {
                for kx in 0..k {
                    let dst_row = &mut out[row * ncols..(row + 1) * ncols];
                    let (lo, hi) = g.x_range(kx);
                    for li in 0..nlines {
                        let line = line0 + li;
                        let (oz, oy) = (line / oh, line % oh);
                        let dst = &mut dst_row[li * ow..(li + 1) * ow];
                        let iz = (oz * s + kz).wrapping_sub(p);
                        let iy = (oy * s + ky).wrapping_sub(p);
                        if iz >= d || iy >= h {
                            dst.fill(T::zero());
                            continue;
                        }
                        let src = &xc[(iz * h + iy) * w..(iz * h + iy + 1) * w];
                        if s == 1 {
                            dst[..lo].fill(T::zero());
                            dst[hi..].fill(T::zero());
                            if hi > lo {
                                let start = lo + kx - p;
                                dst[lo..hi].copy_from_slice(&src[start..start + (hi - lo)]);
                            }
                        } else {
                            for (ox, v) in dst.iter_mut().enumerate() {
                                let ix = (ox * s + kx).wrapping_sub(p);
                                *v = if ix < w { src[ix] } else { T::zero() };
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back onto the big grid.
fn col2im_add<T: Scalar>(g: &ConvGeom, cols: &[T], line0: usize, nlines: usize, x: &mut [T]) {
    let [d, h, w] = g.input;
    let [_, oh, ow] = g.output;
    let (k, s, p) = (g.kernel, g.stride, g.pad);
    let ncols = nlines * ow;
    let vol = d * h * w;
    let mut row = 0;
    for c in 0..g.channels {
        let xc = &mut x[c * vol..(c + 1) * vol];
        for kz in 0..k {
            for ky in 0..k {
                for kx in 0..k {
                    let src_row = &cols[row * ncols..(row + 1) * ncols];
                    let (lo, hi) = g.x_range(kx);
                    for li in 0..nlines {
                        let line = line0 + li;
                        let (oz, oy) = (line / oh, line % oh);
                        let iz = (oz * s + kz).wrapping_sub(p);
                        let iy = (oy * s + ky).wrapping_sub(p);
                        if iz >= d || iy >= h {
                            continue;
                        }
                        let src = &src_row[li * ow..(li + 1) * ow];
                        let dst = &mut xc[(iz * h + iy) * w..(iz * h + iy + 1) * w];
                        if s == 1 {
                            if hi > lo {
                                let start = lo + kx - p;
                                for (a, &b) in dst[start..start + (hi - lo)].iter_mut().zip(&src[lo..hi]) {
                                    *a += b;
                                }
                            }
                        } else {
                            for (ox, &v) in src.iter().enumerate() {
                                let ix = (ox * s + kx).wrapping_sub(p);
                                if ix < w {
                                    dst[ix] += v;
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn add_bias<T: Scalar>(out: &mut [T], bias: &[T], per_channel: usize) {
    for (chunk, &b) in out.chunks_mut(per_channel).zip(bias) {
        for v in chunk {
            *v += b;
        }
    }
}

fn bias_grad<T: Scalar>(dout: &[T], channels: usize) -> Vec<T> {
    let per = dout.len() / channels;
    dout.chunks(per).map(|c| c.iter().copied().sum()).collect()
}

/// Convolution: `x` is `[g.channels, big]`, `w` is `[cout, g.rows()]`; returns `[cout, small]`.
pub fn conv_forward<T: Scalar>(g: &ConvGeom, x: &[T], w: &[T], bias: Option<&[T]>, cout: usize) -> Vec<T> {
    let (rows, ncols_total, ow) = (g.rows(), g.cols(), g.output[2]);
    let mut out = vec![T::zero(); cout * ncols_total];
    let mut buf = Vec::new();
    for (l0, nl) in g.blocks() {
        let nb = nl * ow;
        buf.resize(rows * nb, T::zero());
        im2col(g, x, l0, nl, &mut buf);
        gemm(
            cout,
            rows,
            nb,
            T::one(),
            MatRef::new(w, rows),
            MatRef::new(&buf, nb),
            T::zero(),
            &mut out[l0 * ow..],
            ncols_total,
        );
    }
    if let Some(b) = bias {
        add_bias(&mut out, b, ncols_total);
    }
    out
}

pub struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Vec<T>,
    pub db: Vec<T>,
}

pub fn conv_backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    cout: usize,
    dout: &[T],
    need_dx: bool,
) -> ConvGrads<T> {
    let (rows, ncols_total, ow) = (g.rows(), g.cols(), g.output[2]);
    let mut dw = vec![T::zero(); cout * rows];
    let mut dx = need_dx.then(|| vec![T::zero(); g.big_len()]);
    let mut buf = Vec::new();
    let mut dcols = Vec::new();
    for (l0, nl) in g.blocks() {
        let nb = nl * ow;
        buf.resize(rows * nb, T::zero());
        im2col(g, x, l0, nl, &mut buf);
        let dblk = &dout[l0 * ow..];
        gemm(cout, nb, rows, T::one(), MatRef::new(dblk, ncols_total), MatRef::t(&buf, nb), T::one(), &mut dw, rows);
        if let Some(dx) = dx.as_mut() {
            dcols.resize(rows * nb, T::zero());
            gemm(rows, cout, nb, T::one(), MatRef::t(w, rows), MatRef::new(dblk, ncols_total), T::zero(), &mut dcols, nb);
            col2im_add(g, &dcols, l0, nl, dx);
        }
    }
    ConvGrads { dx, dw, db: bias_grad(dout, cout) }
}

/// Transposed convolution: `x` is `[cin, small]`, `w` is `[cin, g.rows()]`; returns `[g.channels, big]`.
pub fn conv_transpose_forward<T: Scalar>(g: &ConvGeom, x: &[T], w: &[T], bias: Option<&[T]>, cin: usize) -> Vec<T> {
    let (rows, ncols_total, ow) = (g.rows(), g.cols(), g.output[2]);
    let mut out = vec![T::zero(); g.big_len()];
    let mut buf = Vec::new();
    for (l0, nl) in g.blocks() {
        let nb = nl * ow;
        buf.resize(rows * nb, T::zero());
        gemm(rows, cin, nb, T::one(), MatRef::t(w, rows), MatRef::new(&x[l0 * ow..], ncols_total), T::zero(), &mut buf, nb);
        col2im_add(g, &buf, l0, nl, &mut out);
    }
    if let Some(b) = bias {
        add_bias(&mut out, b, g.input.iter().product());
    }
    out
}

pub fn conv_transpose_backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    cin: usize,
    dout: &[T],
    need_dx: bool,
) -> ConvGrads<T> {
    let (rows, ncols_total, ow) = (g.rows(), g.cols(), g.output[2]);
    let mut dw = vec![T::zero(); cin * rows];
    let mut dx = need_dx.then(|| vec![T::zero(); cin * ncols_total]);
    let mut buf = Vec::new();
    for (l0, nl) in g.blocks() {
        let nb = nl * ow;
        buf.resize(rows * nb, T::zero());
        im2col(g, dout, l0, nl, &mut buf);
        gemm(cin, nb, rows, T::one(), MatRef::new(&x[l0 * ow..], ncols_total), MatRef::t(&buf, nb), T::one(), &mut dw, rows);
        if let Some(dx) = dx.as_mut() {
            gemm(cin, rows, nb, T::one(), MatRef::new(w, rows), MatRef::new(&buf, nb), T::zero(), &mut dx[l0 * ow..], ncols_total);
        }
    }
    ConvGrads { dx, dw, db: bias_grad(dout, g.channels) }
}
