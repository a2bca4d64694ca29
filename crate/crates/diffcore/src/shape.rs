//! Shape-only linear maps (reshape, broadcast, reductions, slicing, resampling).
//!
//! Every map knows its adjoint, which is what its backward rule applies to the
//! upstream gradient. Because the adjoint is itself a `LinMap`, these ops are
//! differentiable to any order.

use crate::error::{invalid, Error, Result};
use crate::Elem;

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Numpy-style broadcast of two shapes.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "broadcast",
                    lhs: a.to_vec(),
                    rhs: b.to_vec(),
                })
            }
        };
    }
    Ok(out)
}

/// Strides of `small` laid over `big` (right-aligned), 0 on broadcast axes.
fn broadcast_strides(small: &[usize], big: &[usize]) -> Vec<usize> {
    let s = strides(small);
    let off = big.len() - small.len();
    (0..big.len())
        .map(|i| {
            if i < off || small[i - off] == 1 {
                0
            } else {
                s[i - off]
            }
        })
        .collect()
}

/// Visits every index of `big` in row-major order, yielding the flat offset of
/// the matching element in a tensor with the given strides.
fn for_each_strided(big: &[usize], st: &[usize], mut f: impl FnMut(usize, usize)) {
    let total: usize = big.iter().product();
    if total == 0 {
        return;
    }
    let rank = big.len();
    if rank == 0 {
        f(0, 0);
        return;
    }
    let inner = big[rank - 1];
    let inner_st = st[rank - 1];
    let mut idx = vec![0usize; rank];
    let mut base = 0usize;
    let mut out = 0usize;
    loop {
        for j in 0..inner {
            f(out + j, base + j * inner_st);
        }
        out += inner;
        // advance the odometer over the outer axes
        let mut ax = rank - 1;
        loop {
            if ax == 0 {
                return;
            }
            ax -= 1;
            idx[ax] += 1;
            base += st[ax];
            if idx[ax] < big[ax] {
                break;
            }
            base -= st[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
}

/// Per-output-position source taps for align-corners=false bilinear resampling.
fn bilinear_taps(n_in: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    let f = factor as f64;
    (0..n_in * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / f - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            let lambda = if i1 == i0 { 0.0 } else { src - i0 as f64 };
            (i0, i1, lambda)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum LinMap {
    Reshape { from: Vec<usize>, to: Vec<usize> },
    Broadcast { from: Vec<usize>, to: Vec<usize> },
    SumTo { from: Vec<usize>, to: Vec<usize> },
    Transpose { rows: usize, cols: usize },
    Narrow { shape: Vec<usize>, axis: usize, start: usize, len: usize },
    Pad { shape: Vec<usize>, axis: usize, start: usize, total: usize },
    Upsample { shape: Vec<usize>, fh: usize, fw: usize },
    UpsampleAdjoint { shape: Vec<usize>, fh: usize, fw: usize },
    AvgPool { shape: Vec<usize>, k: usize },
    AvgPoolAdjoint { shape: Vec<usize>, k: usize },
}

impl LinMap {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            LinMap::Reshape { .. } => "reshape",
            LinMap::Broadcast { .. } => "broadcast",
            LinMap::SumTo { .. } => "sum_to",
            LinMap::Transpose { .. } => "transpose",
            LinMap::Narrow { .. } => "narrow",
            LinMap::Pad { .. } => "pad",
            LinMap::Upsample { .. } => "upsample_bilinear",
            LinMap::UpsampleAdjoint { .. } => "upsample_bilinear_adjoint",
            LinMap::AvgPool { .. } => "avg_pool2d",
            LinMap::AvgPoolAdjoint { .. } => "avg_pool2d_adjoint",
        }
    }

    pub(crate) fn in_shape(&self) -> Vec<usize> {
        match self {
            LinMap::Reshape { from, .. }
            | LinMap::Broadcast { from, .. }
            | LinMap::SumTo { from, .. } => from.clone(),
            LinMap::Transpose { rows, cols } => vec![*rows, *cols],
            LinMap::Narrow { shape, .. } | LinMap::Pad { shape, .. } => shape.clone(),
            LinMap::Upsample { shape, .. } | LinMap::AvgPool { shape, .. } => shape.clone(),
            LinMap::UpsampleAdjoint { .. } | LinMap::AvgPoolAdjoint { .. } => {
                self.adjoint().out_shape()
            }
        }
    }

    pub(crate) fn out_shape(&self) -> Vec<usize> {
        match self {
            LinMap::Reshape { to, .. }
            | LinMap::Broadcast { to, .. }
            | LinMap::SumTo { to, .. } => to.clone(),
            LinMap::Transpose { rows, cols } => vec![*cols, *rows],
            LinMap::Narrow { shape, axis, len, .. } => {
                let mut s = shape.clone();
                s[*axis] = *len;
                s
            }
            LinMap::Pad { shape, axis, total, .. } => {
                let mut s = shape.clone();
                s[*axis] = *total;
                s
            }
            LinMap::Upsample { shape, fh, fw } => {
                vec![shape[0], shape[1], shape[2] * fh, shape[3] * fw]
            }
            LinMap::AvgPool { shape, k } => vec![shape[0], shape[1], shape[2] / k, shape[3] / k],
            LinMap::UpsampleAdjoint { shape, .. } | LinMap::AvgPoolAdjoint { shape, .. } => {
                shape.clone()
            }
        }
    }

    pub(crate) fn adjoint(&self) -> LinMap {
        match self.clone() {
            LinMap::Reshape { from, to } => LinMap::Reshape { from: to, to: from },
            LinMap::Broadcast { from, to } => LinMap::SumTo { from: to, to: from },
            LinMap::SumTo { from, to } => LinMap::Broadcast { from: to, to: from },
            LinMap::Transpose { rows, cols } => LinMap::Transpose { rows: cols, cols: rows },
            LinMap::Narrow { shape, axis, start, len } => {
                let mut s = shape.clone();
                s[axis] = len;
                LinMap::Pad { shape: s, axis, start, total: shape[axis] }
            }
            LinMap::Pad { shape, axis, start, total } => {
                let mut s = shape.clone();
                s[axis] = total;
                LinMap::Narrow { shape: s, axis, start, len: shape[axis] }
            }
            LinMap::Upsample { shape, fh, fw } => LinMap::UpsampleAdjoint { shape, fh, fw },
            LinMap::UpsampleAdjoint { shape, fh, fw } => LinMap::Upsample { shape, fh, fw },
            LinMap::AvgPool { shape, k } => LinMap::AvgPoolAdjoint { shape, k },
            LinMap::AvgPoolAdjoint { shape, k } => LinMap::AvgPool { shape, k },
        }
    }

    pub(crate) fn apply<T: Elem>(&self, x: &[T]) -> Vec<T> {
        match self {
            LinMap::Reshape { .. } => x.to_vec(),
            LinMap::Broadcast { from, to } => {
                let st = broadcast_strides(from, to);
                let mut out = vec![T::zero(); to.iter().product()];
                for_each_strided(to, &st, |o, i| out[o] = x[i]);
                out
            }
            LinMap::SumTo { from, to } => {
                let st = broadcast_strides(to, from);
                let mut out = vec![T::zero(); to.iter().product()];
                for_each_strided(from, &st, |o, i| out[i] = out[i] + x[o]);
                out
            }
            LinMap::Transpose { rows, cols } => {
                let mut out = vec![T::zero(); rows * cols];
                for r in 0..*rows {
                    for c in 0..*cols {
                        out[c * rows + r] = x[r * cols + c];
                    }
                }
                out
            }
            LinMap::Narrow { shape, axis, start, len } => {
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let mut out = Vec::with_capacity(outer * len * inner);
                for o in 0..outer {
                    let base = (o * shape[*axis] + start) * inner;
                    out.extend_from_slice(&x[base..base + len * inner]);
                }
                out
            }
            LinMap::Pad { shape, axis, start, total } => {
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let len = shape[*axis];
                let mut out = vec![T::zero(); outer * total * inner];
                for o in 0..outer {
                    let dst = (o * total + start) * inner;
                    let src = o * len * inner;
                    out[dst..dst + len * inner].copy_from_slice(&x[src..src + len * inner]);
                }
                out
            }
            LinMap::Upsample { shape, fh, fw } => upsample(x, shape, *fh, *fw, false),
            LinMap::UpsampleAdjoint { shape, fh, fw } => upsample(x, shape, *fh, *fw, true),
            LinMap::AvgPool { shape, k } => avg_pool(x, shape, *k, false),
            LinMap::AvgPoolAdjoint { shape, k } => avg_pool(x, shape, *k, true),
        }
    }
}

/// Bilinear upsampling of an NCHW tensor of `shape`; with `adjoint`, `x` is
/// the upsampled-shape gradient and the result has `shape`.
fn upsample<T: Elem>(x: &[T], shape: &[usize], fh: usize, fw: usize, adjoint: bool) -> Vec<T> {
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let (ho, wo) = (h * fh, w * fw);
    let rows = bilinear_taps(h, fh);
    let cols = bilinear_taps(w, fw);
    let planes = n * c;
    let mut out = if adjoint {
        vec![T::zero(); planes * h * w]
    } else {
        vec![T::zero(); planes * ho * wo]
    };
    for p in 0..planes {
        let src_off = if adjoint { p * ho * wo } else { p * h * w };
        let dst_off = if adjoint { p * h * w } else { p * ho * wo };
        for (oy, &(y0, y1, ly)) in rows.iter().enumerate() {
            let ly = T::lit(ly);
            for (ox, &(x0, x1, lx)) in cols.iter().enumerate() {
                let lx = T::lit(lx);
                let w00 = (T::one() - ly) * (T::one() - lx);
                let w01 = (T::one() - ly) * lx;
                let w10 = ly * (T::one() - lx);
                let w11 = ly * lx;
                let taps = [(y0, x0, w00), (y0, x1, w01), (y1, x0, w10), (y1, x1, w11)];
                if adjoint {
                    let g = x[src_off + oy * wo + ox];
                    for (yy, xx, wt) in taps {
                        let d = dst_off + yy * w + xx;
                        out[d] = out[d] + wt * g;
                    }
                } else {
                    let mut acc = T::zero();
                    for (yy, xx, wt) in taps {
                        acc = acc + wt * x[src_off + yy * w + xx];
                    }
                    out[dst_off + oy * wo + ox] = acc;
                }
            }
        }
    }
    out
}

/// Non-overlapping k×k average pooling (trailing rows/cols that do not fill a
/// window are dropped).
fn avg_pool<T: Elem>(x: &[T], shape: &[usize], k: usize, adjoint: bool) -> Vec<T> {
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let (ho, wo) = (h / k, w / k);
    let scale = T::one() / T::lit((k * k) as f64);
    let planes = n * c;
    let mut out = if adjoint {
        vec![T::zero(); planes * h * w]
    } else {
        vec![T::zero(); planes * ho * wo]
    };
    for p in 0..planes {
        for oy in 0..ho {
            for ox in 0..wo {
                if adjoint {
                    let g = x[p * ho * wo + oy * wo + ox] * scale;
                    for dy in 0..k {
                        for dx in 0..k {
                            out[p * h * w + (oy * k + dy) * w + ox * k + dx] = g;
                        }
                    }
                } else {
                    let mut acc = T::zero();
                    for dy in 0..k {
                        for dx in 0..k {
                            acc = acc + x[p * h * w + (oy * k + dy) * w + ox * k + dx];
                        }
                    }
                    out[p * ho * wo + oy * wo + ox] = acc * scale;
                }
            }
        }
    }
    out
}

pub(crate) fn check_broadcastable(from: &[usize], to: &[usize]) -> Result<()> {
    if from.len() > to.len() || broadcast_shape(from, to)? != to {
        return invalid("broadcast_to", format!("cannot broadcast {from:?} to {to:?}"));
    }
    Ok(())
}
