//! Raw CPU kernels behind the differentiable ops.
//!
//! Convolutions use the cross-correlation convention and channel-first
//! `[C, H, W]` layout. A single [`ConvGeom`] describes a (grouped) strided
//! convolution from an input plane to an output plane. Three loops cover
//! every case:
//!
//! * [`conv_gather`]: forward convolution, and the backward-input pass of a
//!   transposed convolution;
//! * [`conv_scatter`]: backward-input of a convolution, and the forward pass
//!   of a transposed convolution;
//! * [`conv_weight_grad`]: the weight gradient for both.
//!
//! Work is split over channels with rayon. Every output element is summed by
//! one thread in a fixed order, so results do not depend on the thread count.

use rayon::prelude::*;

use super::Element;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    /// Channels, height and width of the larger-resolution side read by the
    /// kernel window.
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    /// Channels, height and width of the side produced by the window.
    pub cout: usize,
    pub ho: usize,
    pub wo: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

/// `(n + 2 pad - k) / stride + 1`, rejecting non-integral or non-positive results.
pub fn conv_out_len(n: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 || k == 0 {
        return Err(Error::InvalidArgument("kernel size and stride must be positive".into()));
    }
    let span = n + 2 * pad;
    if span < k {
        return Err(Error::shape("conv2d", format!("kernel {k} larger than padded input {span}")));
    }
    if (span - k) % stride != 0 {
        return Err(Error::shape(
            "conv2d",
            format!("non-integral output size: ({n} + 2*{pad} - {k}) / {stride} + 1"),
        ));
    }
    Ok((span - k) / stride + 1)
}

/// `(n - 1) stride - 2 pad + k + output_pad`.
pub fn conv_transpose_out_len(n: usize, k: usize, stride: usize, pad: usize, output_pad: usize) -> Result<usize> {
    if output_pad >= stride.max(1) {
        return Err(Error::InvalidArgument(format!("output padding {output_pad} must be below stride {stride}")));
    }
    let full = (n - 1) * stride + k + output_pad;
    if full <= 2 * pad {
        return Err(Error::shape("conv_transpose2d", "non-positive output size"));
    }
    Ok(full - 2 * pad)
}

impl ConvGeom {
    #[allow(clippy::too_many_arguments)]
    pub fn conv(cin: usize, h: usize, w: usize, cout: usize, k: usize, stride: usize, pad: usize, groups: usize) -> Result<Self> {
        if groups == 0 || cin % groups != 0 || cout % groups != 0 {
            return Err(Error::shape("conv2d", format!("groups {groups} must divide {cin} and {cout}")));
        }
        let ho = conv_out_len(h, k, stride, pad)?;
        let wo = conv_out_len(w, k, stride, pad)?;
        Ok(ConvGeom { cin, h, w, cout, ho, wo, k, stride, pad, groups })
    }

    pub fn cin_per_group(&self) -> usize {
        self.cin / self.groups
    }

    pub fn cout_per_group(&self) -> usize {
        self.cout / self.groups
    }

    pub fn weight_len(&self) -> usize {
        self.cout * self.cin_per_group() * self.k * self.k
    }

    /// A 1x1, stride-1, unpadded convolution: a channel mix of whole planes.
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    /// Output positions `o` whose source `o * stride + tap - pad` lies in `[0, n_in)`.
    #[inline]
    fn valid(&self, tap: usize, n_in: usize, n_out: usize) -> (usize, usize) {
        let (s, p) = (self.stride, self.pad);
        let lo = if p > tap { (p - tap).div_ceil(s) } else { 0 };
        let hi = if n_in + p > tap { ((n_in - 1 + p - tap) / s + 1).min(n_out) } else { 0 };
        (lo, hi.max(lo))
    }
}

/// `out[i] += a * x[i * s]`.
#[inline]
fn axpy_strided<T: Element>(out: &mut [T], x: &[T], s: usize, a: T) {
    if s == 1 {
        let n = out.len();
        for (o, &v) in out.iter_mut().zip(&x[..n]) {
            *o += a * v;
        }
    } else {
        for (o, &v) in out.iter_mut().zip(x.iter().step_by(s)) {
            *o += a * v;
        }
    }
}

/// `dst[i * s] += a * src[i]`.
#[inline]
fn scatter_strided<T: Element>(dst: &mut [T], src: &[T], s: usize, a: T) {
    if s == 1 {
        for (d, &v) in dst[..src.len()].iter_mut().zip(src) {
            *d += a * v;
        }
    } else {
        for (d, &v) in dst.iter_mut().step_by(s).zip(src) {
            *d += a * v;
        }
    }
}

/// `sum_i a[i] * b[i * s]`, accumulated left to right.
#[inline]
fn dot_strided<T: Element>(a: &[T], b: &[T], s: usize) -> T {
    let mut acc = T::zero();
    if s == 1 {
        for (&x, &y) in a.iter().zip(&b[..a.len()]) {
            acc += x * y;
        }
    } else {
        for (&x, &y) in a.iter().zip(b.iter().step_by(s)) {
            acc += x * y;
        }
    }
    acc
}

/// Patch matrix `[cin * k * k, ho * wo]` of an ungrouped convolution;
/// taps that fall in the padding are zero.
fn im2col<T: Element>(g: &ConvGeom, x: &[T]) -> Vec<T> {
    let (k, s, hw) = (g.k, g.stride, g.ho * g.wo);
    let mut col = vec![T::zero(); g.cin * k * k * hw];
    col.par_chunks_mut(hw).enumerate().for_each(|(j, crow)| {
        let (ci, ky, kx) = (j / (k * k), (j / k) % k, j % k);
        let xin = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        let (oy0, oy1) = g.valid(ky, g.h, g.ho);
        let (ox0, ox1) = g.valid(kx, g.w, g.wo);
        for oy in oy0..oy1 {
            let iy = oy * s + ky - g.pad;
            let src = &xin[iy * g.w + ox0 * s + kx - g.pad..(iy + 1) * g.w];
            let dst = &mut crow[oy * g.wo + ox0..oy * g.wo + ox1];
            for (d, &v) in dst.iter_mut().zip(src.iter().step_by(s)) {
                *d = v;
            }
        }
    });
    col
}

/// Adds each patch-matrix entry back onto the input position it was read
/// from.
fn col2im_add<T: Element>(g: &ConvGeom, gcol: &[T], gx: &mut [T]) {
    let (k, s, hw) = (g.k, g.stride, g.ho * g.wo);
    gx.par_chunks_mut(g.h * g.w).enumerate().for_each(|(ci, plane)| {
        for t in 0..k * k {
            let (ky, kx) = (t / k, t % k);
            let crow = &gcol[(ci * k * k + t) * hw..(ci * k * k + t + 1) * hw];
            let (oy0, oy1) = g.valid(ky, g.h, g.ho);
            let (ox0, ox1) = g.valid(kx, g.w, g.wo);
            for oy in oy0..oy1 {
                let iy = oy * s + ky - g.pad;
                scatter_strided(&mut plane[iy * g.w + ox0 * s + kx - g.pad..(iy + 1) * g.w], &crow[oy * g.wo + ox0..oy * g.wo + ox1], s, T::one());
            }
        }
    });
}

/// `out[co, o] += sum w[co, ci, ky, kx] * x[ci, o * stride + (ky, kx) - pad]`.
pub fn conv_gather<T: Element>(g: &ConvGeom, x: &[T], w: &[T], out: &mut [T]) {
    let (cig, cog, k, s) = (g.cin_per_group(), g.cout_per_group(), g.k, g.stride);
    debug_assert_eq!(x.len(), g.cin * g.h * g.w);
    debug_assert_eq!(out.len(), g.cout * g.ho * g.wo);
    if g.is_pointwise() {
        let hw = g.h * g.w;
        out.par_chunks_mut(hw).enumerate().for_each(|(co, plane)| {
            let grp = co / cog;
            for cil in 0..cig {
                let ci = grp * cig + cil;
                axpy_strided(plane, &x[ci * hw..(ci + 1) * hw], 1, w[co * cig + cil]);
            }
        });
        return;
    }
    if g.groups == 1 {
        let col = im2col(g, x);
        let (kk, hw) = (g.cin * g.k * g.k, g.ho * g.wo);
        out.par_chunks_mut(hw).enumerate().for_each(|(co, plane)| {
            for (j, crow) in col.chunks(hw).enumerate() {
                axpy_strided(plane, crow, 1, w[co * kk + j]);
            }
        });
        return;
    }
    out.par_chunks_mut(g.ho * g.wo).enumerate().for_each(|(co, plane)| {
        let grp = co / cog;
        for cil in 0..cig {
            let ci = grp * cig + cil;
            let xin = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..k {
                let (oy0, oy1) = g.valid(ky, g.h, g.ho);
                for kx in 0..k {
                    let wv = w[((co * cig + cil) * k + ky) * k + kx];
                    let (ox0, ox1) = g.valid(kx, g.w, g.wo);
                    for oy in oy0..oy1 {
                        let iy = oy * s + ky - g.pad;
                        let xrow = &xin[iy * g.w..(iy + 1) * g.w];
                        let orow = &mut plane[oy * g.wo..(oy + 1) * g.wo];
                        axpy_strided(&mut orow[ox0..ox1], &xrow[ox0 * s + kx - g.pad..], s, wv);
                    }
                }
            }
        }
    });
}

/// `gx[ci, o * stride + (ky, kx) - pad] += sum w[co, ci, ky, kx] * gout[co, o]`.
pub fn conv_scatter<T: Element>(g: &ConvGeom, gout: &[T], w: &[T], gx: &mut [T]) {
    let (cig, cog, k, s) = (g.cin_per_group(), g.cout_per_group(), g.k, g.stride);
    debug_assert_eq!(gx.len(), g.cin * g.h * g.w);
    debug_assert_eq!(gout.len(), g.cout * g.ho * g.wo);
    if g.is_pointwise() {
        let hw = g.h * g.w;
        gx.par_chunks_mut(hw).enumerate().for_each(|(ci, plane)| {
            let (grp, cil) = (ci / cig, ci % cig);
            for co in grp * cog..(grp + 1) * cog {
                axpy_strided(plane, &gout[co * hw..(co + 1) * hw], 1, w[co * cig + cil]);
            }
        });
        return;
    }
    if g.groups == 1 {
        let (kk, hw) = (g.cin * g.k * g.k, g.ho * g.wo);
        let mut gcol = vec![T::zero(); kk * hw];
        gcol.par_chunks_mut(hw).enumerate().for_each(|(j, crow)| {
            for co in 0..g.cout {
                axpy_strided(crow, &gout[co * hw..(co + 1) * hw], 1, w[co * kk + j]);
            }
        });
        col2im_add(g, &gcol, gx);
        return;
    }
    gx.par_chunks_mut(g.h * g.w).enumerate().for_each(|(ci, plane)| {
        let grp = ci / cig;
        let cil = ci % cig;
        for co in grp * cog..(grp + 1) * cog {
            let gplane = &gout[co * g.ho * g.wo..(co + 1) * g.ho * g.wo];
            for ky in 0..k {
                let (oy0, oy1) = g.valid(ky, g.h, g.ho);
                for kx in 0..k {
                    let wv = w[((co * cig + cil) * k + ky) * k + kx];
                    let (ox0, ox1) = g.valid(kx, g.w, g.wo);
                    for oy in oy0..oy1 {
                        let iy = oy * s + ky - g.pad;
                        let grow = &gplane[oy * g.wo..(oy + 1) * g.wo];
                        let xrow = &mut plane[iy * g.w..(iy + 1) * g.w];
                        scatter_strided(&mut xrow[ox0 * s + kx - g.pad..], &grow[ox0..ox1], s, wv);
                    }
                }
            }
        }
    });
}

/// `gw[co, ci, ky, kx] += sum_o gout[co, o] * x[ci, o * stride + (ky, kx) - pad]`.
pub fn conv_weight_grad<T: Element>(g: &ConvGeom, x: &[T], gout: &[T], gw: &mut [T]) {
    let (cig, k, s) = (g.cin_per_group(), g.k, g.stride);
    let cog = g.cout_per_group();
    debug_assert_eq!(gw.len(), g.weight_len());
    if g.is_pointwise() {
        let hw = g.h * g.w;
        gw.par_chunks_mut(cig).enumerate().for_each(|(co, wrow)| {
            let grp = co / cog;
            let gplane = &gout[co * hw..(co + 1) * hw];
            for (cil, wv) in wrow.iter_mut().enumerate() {
                let ci = grp * cig + cil;
                *wv += dot_strided(gplane, &x[ci * hw..(ci + 1) * hw], 1);
            }
        });
        return;
    }
    if g.groups == 1 {
        let col = im2col(g, x);
        let (kk, hw) = (g.cin * g.k * g.k, g.ho * g.wo);
        gw.par_chunks_mut(kk).enumerate().for_each(|(co, wrow)| {
            let gplane = &gout[co * hw..(co + 1) * hw];
            for (wv, crow) in wrow.iter_mut().zip(col.chunks(hw)) {
                *wv += dot_strided(gplane, crow, 1);
            }
        });
        return;
    }
    gw.par_chunks_mut(cig * k * k).enumerate().for_each(|(co, wchunk)| {
        let grp = co / cog;
        let gplane = &gout[co * g.ho * g.wo..(co + 1) * g.ho * g.wo];
        for cil in 0..cig {
            let ci = grp * cig + cil;
            let xin = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..k {
                let (oy0, oy1) = g.valid(ky, g.h, g.ho);
                for kx in 0..k {
                    let (ox0, ox1) = g.valid(kx, g.w, g.wo);
                    let mut acc = T::zero();
                    for oy in oy0..oy1 {
                        let iy = oy * s + ky - g.pad;
                        let xrow = &xin[iy * g.w..(iy + 1) * g.w];
                        let grow = &gplane[oy * g.wo..(oy + 1) * g.wo];
                        acc += dot_strided(&grow[ox0..ox1], &xrow[ox0 * s + kx - g.pad..], s);
                    }
                    wchunk[(cil * k + ky) * k + kx] += acc;
                }
            }
        }
    });
}

/// Sum of each channel plane: the bias gradient.
pub fn channel_sums<T: Element>(gout: &[T], channels: usize) -> Vec<T> {
    let plane = gout.len() / channels;
    gout.chunks(plane).map(|c| c.iter().copied().sum()).collect()
}

/// Max pooling geometry: output size with right/bottom zero padding when the
/// input does not tile exactly.
pub fn pool_out_len(n: usize, window: usize, stride: usize) -> usize {
    if n <= window {
        1
    } else {
        (n - window).div_ceil(stride) + 1
    }
}

/// Windowed maxima over `[C, H, W]`. Returns the pooled values and, for each
/// output, the flat input index of the first (row-major) maximal element, or
/// `usize::MAX` when a zero pad cell wins.
pub fn maxpool2d<T: Element>(x: &[T], c: usize, h: usize, w: usize, window: usize, stride: usize) -> (Vec<T>, Vec<usize>) {
    let ho = pool_out_len(h, window, stride);
    let wo = pool_out_len(w, window, stride);
    let mut out = vec![T::zero(); c * ho * wo];
    let mut arg = vec![0usize; c * ho * wo];
    for ch in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = T::neg_infinity();
                let mut best_i = usize::MAX;
                for dy in 0..window {
                    for dx in 0..window {
                        let (iy, ix) = (oy * stride + dy, ox * stride + dx);
                        let (v, i) = if iy < h && ix < w {
                            let i = (ch * h + iy) * w + ix;
                            (x[i], i)
                        } else {
                            (T::zero(), usize::MAX)
                        };
                        if v > best {
                            best = v;
                            best_i = i;
                        }
                    }
                }
                let o = (ch * ho + oy) * wo + ox;
                out[o] = best;
                arg[o] = best_i;
            }
        }
    }
    (out, arg)
}

/// `[m, n] x [n, p]`, with either operand optionally read transposed.
pub fn matmul<T: Element>(a: &[T], a_shape: [usize; 2], ta: bool, b: &[T], b_shape: [usize; 2], tb: bool) -> (Vec<T>, [usize; 2]) {
    let (m, n) = if ta { (a_shape[1], a_shape[0]) } else { (a_shape[0], a_shape[1]) };
    let (n2, p) = if tb { (b_shape[1], b_shape[0]) } else { (b_shape[0], b_shape[1]) };
    debug_assert_eq!(n, n2);
    let a_at = |i: usize, l: usize| if ta { a[l * a_shape[1] + i] } else { a[i * a_shape[1] + l] };
    // Materialize B as [n, p] so the inner loop is contiguous.
    let bn: Vec<T> = if tb {
        let mut t = vec![T::zero(); n * p];
        for j in 0..p {
            for l in 0..n {
                t[l * p + j] = b[j * b_shape[1] + l];
            }
        }
        t
    } else {
        b.to_vec()
    };
    let mut out = vec![T::zero(); m * p];
    out.par_chunks_mut(p).enumerate().for_each(|(i, row)| {
        for l in 0..n {
            let av = a_at(i, l);
            let brow = &bn[l * p..(l + 1) * p];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    });
    (out, [m, p])
}

/// Right-aligned broadcast of two shapes: each axis must match or be 1 in
/// one operand; missing leading axes count as 1.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let r = a.len().max(b.len());
    let mut out = vec![0; r];
    for i in 0..r {
        let da = if i + a.len() >= r { a[i + a.len() - r] } else { 1 };
        let db = if i + b.len() >= r { b[i + b.len() - r] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For each flat index of `out_shape`, the flat index of the broadcast operand.
pub fn broadcast_map(out_shape: &[usize], in_shape: &[usize]) -> Vec<usize> {
    let r = out_shape.len();
    let off = r - in_shape.len();
    let mut in_strides = vec![0usize; r];
    let mut stride = 1;
    for i in (0..in_shape.len()).rev() {
        in_strides[i + off] = if in_shape[i] == 1 { 0 } else { stride };
        stride *= in_shape[i];
    }
    let total: usize = out_shape.iter().product();
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; r];
    let mut cur = 0usize;
    for _ in 0..total {
        map.push(cur);
        for ax in (0..r).rev() {
            idx[ax] += 1;
            cur += in_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            cur -= in_strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    map
}

/// Splits a shape around `axis` into `(outer, len, inner)`.
pub fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
