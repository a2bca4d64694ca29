//! 2-D convolution and its two adjoint maps.
//!
//! `conv`, `conv_input_grad` (= transposed convolution) and `conv_weight_grad`
//! form a closed family: the backward rule of each is expressed through the
//! other two, which gives arbitrary-order derivatives.

use crate::error::{invalid, Error, Result};
use crate::tensor::{Op, Tensor};
use crate::Elem;

/// Geometry of a convolution from the forward (input → output) point of view.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_ch: usize,
    pub out_ch: usize,
    pub in_hw: (usize, usize),
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub out_hw: (usize, usize),
}

impl ConvGeom {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        in_hw: (usize, usize),
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Self> {
        if stride.0 == 0 || stride.1 == 0 || kernel.0 == 0 || kernel.1 == 0 {
            return invalid("conv2d", "stride and kernel must be positive");
        }
        let span_h = in_hw.0 + 2 * padding.0;
        let span_w = in_hw.1 + 2 * padding.1;
        if span_h < kernel.0 || span_w < kernel.1 {
            return invalid(
                "conv2d",
                format!(
                    "non-positive output size for input {:?}, kernel {:?}, padding {:?}",
                    in_hw, kernel, padding
                ),
            );
        }
        let out_hw = (
            (span_h - kernel.0) / stride.0 + 1,
            (span_w - kernel.1) / stride.1 + 1,
        );
        Ok(ConvGeom {
            in_ch,
            out_ch,
            in_hw,
            kernel,
            stride,
            padding,
            out_hw,
        })
    }

    fn col_rows(&self) -> usize {
        self.in_ch * self.kernel.0 * self.kernel.1
    }

    fn out_len(&self) -> usize {
        self.out_hw.0 * self.out_hw.1
    }

    fn in_len(&self) -> usize {
        self.in_hw.0 * self.in_hw.1
    }
}

/// Source offset within one input plane for every (tap, output position),
/// or `usize::MAX` where the tap lands in padding.
fn tap_table(g: &ConvGeom) -> Vec<usize> {
    let (h, w) = g.in_hw;
    let (kh, kw) = g.kernel;
    let (ho, wo) = g.out_hw;
    let (sh, sw) = g.stride;
    let (ph, pw) = g.padding;
    let mut t = Vec::with_capacity(kh * kw * ho * wo);
    for ky in 0..kh {
        for kx in 0..kw {
            for oy in 0..ho {
                let iy = (oy * sh + ky).wrapping_sub(ph);
                for ox in 0..wo {
                    let ix = (ox * sw + kx).wrapping_sub(pw);
                    t.push(if iy < h && ix < w { iy * w + ix } else { usize::MAX });
                }
            }
        }
    }
    t
}

/// Writes the patch matrix of one image into `cols`, whose rows are `ld`
/// apart; row r holds kernel tap r for every output position.
fn im2col<T: Elem>(x: &[T], g: &ConvGeom, table: &[usize], cols: &mut [T], ld: usize) {
    let il = g.in_len();
    let ol = g.out_len();
    let taps = g.kernel.0 * g.kernel.1;
    for c in 0..g.in_ch {
        let plane = &x[c * il..(c + 1) * il];
        for t in 0..taps {
            let row = (c * taps + t) * ld;
            let idx = &table[t * ol..(t + 1) * ol];
            for (v, &i) in cols[row..row + ol].iter_mut().zip(idx) {
                *v = plane.get(i).copied().unwrap_or_else(T::zero);
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates patch rows back into the image.
fn col2im<T: Elem>(cols: &[T], g: &ConvGeom, table: &[usize], x: &mut [T], ld: usize) {
    let il = g.in_len();
    let ol = g.out_len();
    let taps = g.kernel.0 * g.kernel.1;
    for c in 0..g.in_ch {
        let plane = &mut x[c * il..(c + 1) * il];
        for t in 0..taps {
            let row = (c * taps + t) * ld;
            let idx = &table[t * ol..(t + 1) * ol];
            for (&a, &i) in cols[row..row + ol].iter().zip(idx) {
                if let Some(v) = plane.get_mut(i) {
                    *v = *v + a;
                }
            }
        }
    }
}

fn is_pointwise(g: &ConvGeom) -> bool {
    g.kernel == (1, 1) && g.stride == (1, 1) && g.padding == (0, 0)
}

/// Images per gemm call: small feature maps are batched so that every call
/// sees at least this many columns.
const MIN_GEMM_COLS: usize = 1024;

fn chunk_len(n: usize, ol: usize) -> usize {
    (MIN_GEMM_COLS / ol.max(1)).clamp(1, n.max(1))
}

/// Output-channel counts at or below this use [`direct_forward`]: a gemm
/// with so few rows spends its time packing.
const DIRECT_MAX_OUT: usize = 4;

/// Stride-1 convolution as shifted row axpys, one output plane per channel.
fn direct_forward<T: Elem>(x: &[T], wt: &[T], n: usize, g: &ConvGeom) -> Vec<T> {
    let (h, w) = g.in_hw;
    let (kh, kw) = g.kernel;
    let (ho, wo) = g.out_hw;
    let (ph, pw) = g.padding;
    let (o, c, il, ol) = (g.out_ch, g.in_ch, g.in_len(), g.out_len());
    let mut y = vec![T::zero(); n * o * ol];
    for b in 0..n {
        for ic in 0..c {
            let plane = &x[(b * c + ic) * il..(b * c + ic + 1) * il];
            for ky in 0..kh {
                for kx in 0..kw {
                    // ox + kx − pw ∈ [0, w)
                    let x0 = pw.saturating_sub(kx);
                    let x1 = (w + pw).saturating_sub(kx).min(wo);
                    if x0 >= x1 {
                        continue;
                    }
                    for oc in 0..o {
                        let wv = wt[((oc * c + ic) * kh + ky) * kw + kx];
                        let out = &mut y[(b * o + oc) * ol..(b * o + oc + 1) * ol];
                        for oy in 0..ho {
                            let iy = (oy + ky).wrapping_sub(ph);
                            if iy >= h {
                                continue;
                            }
                            let src = &plane[iy * w + x0 + kx - pw..iy * w + x1 + kx - pw];
                            for (v, &a) in out[oy * wo + x0..oy * wo + x1].iter_mut().zip(src) {
                                *v = *v + wv * a;
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

pub(crate) fn conv_forward<T: Elem>(x: &[T], wt: &[T], n: usize, g: &ConvGeom) -> Vec<T> {
    if g.stride == (1, 1) && g.out_ch <= DIRECT_MAX_OUT && !is_pointwise(g) {
        return direct_forward(x, wt, n, g);
    }
    let (kr, ol, il) = (g.col_rows(), g.out_len(), g.in_len());
    let (o, c) = (g.out_ch, g.in_ch);
    let mut y = vec![T::zero(); n * o * ol];
    let nb = chunk_len(n, ol);
    let table = if is_pointwise(g) { Vec::new() } else { tap_table(g) };
    if nb == 1 {
        let mut cols = vec![T::zero(); if is_pointwise(g) { 0 } else { kr * ol }];
        for b in 0..n {
            let xb = &x[b * c * il..(b + 1) * c * il];
            let src: &[T] = if is_pointwise(g) {
                xb
            } else {
                im2col(xb, g, &table, &mut cols, ol);
                &cols
            };
            let yb = &mut y[b * o * ol..(b + 1) * o * ol];
            T::gemm(o, kr, ol, wt, kr as isize, 1, src, ol as isize, 1, T::zero(), yb, ol as isize, 1);
        }
        return y;
    }
    let mut cols = vec![T::zero(); kr * nb * ol];
    let mut out = vec![T::zero(); o * nb * ol];
    for b0 in (0..n).step_by(nb) {
        let m = nb.min(n - b0);
        let ld = m * ol;
        for j in 0..m {
            let xb = &x[(b0 + j) * c * il..(b0 + j + 1) * c * il];
            if is_pointwise(g) {
                for ch in 0..c {
                    cols[ch * ld + j * ol..ch * ld + (j + 1) * ol].copy_from_slice(&xb[ch * il..(ch + 1) * il]);
                }
            } else {
                im2col(xb, g, &table, &mut cols[j * ol..], ld);
            }
        }
        T::gemm(o, kr, ld, wt, kr as isize, 1, &cols, ld as isize, 1, T::zero(), &mut out, ld as isize, 1);
        for j in 0..m {
            for ch in 0..o {
                let dst = ((b0 + j) * o + ch) * ol;
                y[dst..dst + ol].copy_from_slice(&out[ch * ld + j * ol..ch * ld + (j + 1) * ol]);
            }
        }
    }
    y
}

/// Stride-1 input gradients are a plain convolution of the cotangent with
/// the spatially flipped, channel-transposed kernel.
fn flipped_geometry(g: &ConvGeom) -> Option<ConvGeom> {
    let (kh, kw) = g.kernel;
    if g.stride != (1, 1) || g.padding.0 >= kh || g.padding.1 >= kw {
        return None;
    }
    let fg = ConvGeom::new(
        g.out_ch,
        g.in_ch,
        g.out_hw,
        g.kernel,
        (1, 1),
        (kh - 1 - g.padding.0, kw - 1 - g.padding.1),
    )
    .ok()?;
    (fg.out_hw == g.in_hw).then_some(fg)
}

fn flip_kernel<T: Elem>(wt: &[T], g: &ConvGeom) -> Vec<T> {
    let (kh, kw) = g.kernel;
    let (o, c) = (g.out_ch, g.in_ch);
    let mut f = vec![T::zero(); wt.len()];
    for oc in 0..o {
        for ic in 0..c {
            for ky in 0..kh {
                for kx in 0..kw {
                    f[((ic * o + oc) * kh + ky) * kw + kx] =
                        wt[((oc * c + ic) * kh + (kh - 1 - ky)) * kw + (kw - 1 - kx)];
                }
            }
        }
    }
    f
}

pub(crate) fn conv_input_grad<T: Elem>(gy: &[T], wt: &[T], n: usize, g: &ConvGeom) -> Vec<T> {
    if !is_pointwise(g) {
        if let Some(fg) = flipped_geometry(g) {
            return conv_forward(gy, &flip_kernel(wt, g), n, &fg);
        }
    }
    let (kr, ol, il) = (g.col_rows(), g.out_len(), g.in_len());
    let (o, c) = (g.out_ch, g.in_ch);
    let mut gx = vec![T::zero(); n * c * il];
    let nb = chunk_len(n, ol);
    let table = if is_pointwise(g) { Vec::new() } else { tap_table(g) };
    let mut gys = vec![T::zero(); if nb > 1 { o * nb * ol } else { 0 }];
    let mut cols = vec![T::zero(); kr * nb * ol];
    for b0 in (0..n).step_by(nb) {
        let m = nb.min(n - b0);
        let ld = m * ol;
        let src: &[T] = if nb == 1 {
            &gy[b0 * o * ol..(b0 + 1) * o * ol]
        } else {
            for j in 0..m {
                for ch in 0..o {
                    let s = ((b0 + j) * o + ch) * ol;
                    gys[ch * ld + j * ol..ch * ld + (j + 1) * ol].copy_from_slice(&gy[s..s + ol]);
                }
            }
            &gys
        };
        T::gemm(kr, o, ld, wt, 1, kr as isize, src, ld as isize, 1, T::zero(), &mut cols, ld as isize, 1);
        for j in 0..m {
            let gxb = &mut gx[(b0 + j) * c * il..(b0 + j + 1) * c * il];
            if is_pointwise(g) {
                for ch in 0..c {
                    gxb[ch * il..(ch + 1) * il].copy_from_slice(&cols[ch * ld + j * ol..ch * ld + (j + 1) * ol]);
                }
            } else {
                col2im(&cols[j * ol..], g, &table, gxb, ld);
            }
        }
    }
    gx
}

pub(crate) fn conv_weight_grad<T: Elem>(x: &[T], gy: &[T], n: usize, g: &ConvGeom) -> Vec<T> {
    let (kr, ol, il) = (g.col_rows(), g.out_len(), g.in_len());
    let (o, c) = (g.out_ch, g.in_ch);
    let mut gw = vec![T::zero(); o * kr];
    let nb = chunk_len(n, ol);
    let table = if is_pointwise(g) { Vec::new() } else { tap_table(g) };
    let mut cols = vec![T::zero(); kr * nb * ol];
    let mut gys = vec![T::zero(); if nb > 1 { o * nb * ol } else { 0 }];
    for (step, b0) in (0..n).step_by(nb).enumerate() {
        let m = nb.min(n - b0);
        let ld = m * ol;
        for j in 0..m {
            let xb = &x[(b0 + j) * c * il..(b0 + j + 1) * c * il];
            if is_pointwise(g) {
                for ch in 0..c {
                    cols[ch * ld + j * ol..ch * ld + (j + 1) * ol].copy_from_slice(&xb[ch * il..(ch + 1) * il]);
                }
            } else {
                im2col(xb, g, &table, &mut cols[j * ol..], ld);
            }
        }
        let src: &[T] = if nb == 1 {
            &gy[b0 * o * ol..(b0 + 1) * o * ol]
        } else {
            for j in 0..m {
                for ch in 0..o {
                    let s = ((b0 + j) * o + ch) * ol;
                    gys[ch * ld + j * ol..ch * ld + (j + 1) * ol].copy_from_slice(&gy[s..s + ol]);
                }
            }
            &gys
        };
        let beta = if step == 0 { T::zero() } else { T::one() };
        T::gemm(kr, ld, o, &cols, ld as isize, 1, src, 1, ld as isize, beta, &mut gw, 1, kr as isize);
    }
    gw
}

impl<T: Elem> Tensor<T> {
    fn conv_geom_for(
        &self,
        weight: &Tensor<T>,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<ConvGeom> {
        let (_, c, h, w) = self.dims4()?;
        let (o, wc, kh, kw) = weight.dims4()?;
        if c != wc {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: self.shape().to_vec(),
                rhs: weight.shape().to_vec(),
            });
        }
        ConvGeom::new(c, o, (h, w), (kh, kw), stride, padding)
    }

    /// Cross-correlation of an NCHW input with an OCKhKw weight.
    pub fn conv2d(
        &self,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Tensor<T>> {
        let g = self.conv_geom_for(weight, stride, padding)?;
        let y = self.conv_raw(weight, g)?;
        add_channel_bias(y, bias)
    }

    /// Transposed convolution: the adjoint of `conv2d` with the same weight,
    /// stride and padding. Output size is `(in - 1)·stride − 2·padding + kernel`.
    pub fn conv_transpose2d(
        &self,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Tensor<T>> {
        let (_, c, h, w) = self.dims4()?;
        let (wo, wc, kh, kw) = weight.dims4()?;
        if c != wo {
            return Err(Error::ShapeMismatch {
                op: "conv_transpose2d",
                lhs: self.shape().to_vec(),
                rhs: weight.shape().to_vec(),
            });
        }
        let out_h = ((h - 1) * stride.0 + kh) as isize - 2 * padding.0 as isize;
        let out_w = ((w - 1) * stride.1 + kw) as isize - 2 * padding.1 as isize;
        if out_h < 1 || out_w < 1 || stride.0 == 0 || stride.1 == 0 {
            return invalid("conv_transpose2d", "non-positive output size");
        }
        let g = ConvGeom::new(
            wc,
            wo,
            (out_h as usize, out_w as usize),
            (kh, kw),
            stride,
            padding,
        )?;
        debug_assert_eq!(g.out_hw, (h, w));
        let y = self.conv_input_grad_raw(weight, g)?;
        add_channel_bias(y, bias)
    }

    pub(crate) fn conv_raw(&self, weight: &Tensor<T>, g: ConvGeom) -> Result<Tensor<T>> {
        let n = self.shape()[0];
        let y = conv_forward(self.data(), weight.data(), n, &g);
        Tensor::from_op(
            "conv2d",
            y,
            vec![n, g.out_ch, g.out_hw.0, g.out_hw.1],
            Op::Conv(self.clone(), weight.clone(), g),
        )
    }

    /// `self` is shaped like the conv output; result is shaped like its input.
    pub(crate) fn conv_input_grad_raw(&self, weight: &Tensor<T>, g: ConvGeom) -> Result<Tensor<T>> {
        let n = self.shape()[0];
        let x = conv_input_grad(self.data(), weight.data(), n, &g);
        Tensor::from_op(
            "conv_transpose2d",
            x,
            vec![n, g.in_ch, g.in_hw.0, g.in_hw.1],
            Op::ConvInputGrad(self.clone(), weight.clone(), g),
        )
    }

    /// `self` is the conv input, `gy` the output-shaped cotangent.
    pub(crate) fn conv_weight_grad_raw(&self, gy: &Tensor<T>, g: ConvGeom) -> Result<Tensor<T>> {
        let n = self.shape()[0];
        let w = conv_weight_grad(self.data(), gy.data(), n, &g);
        Tensor::from_op(
            "conv2d_weight_grad",
            w,
            vec![g.out_ch, g.in_ch, g.kernel.0, g.kernel.1],
            Op::ConvWeightGrad(self.clone(), gy.clone(), g),
        )
    }
}

fn add_channel_bias<T: Elem>(y: Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    match bias {
        None => Ok(y),
        Some(b) => {
            let o = y.shape()[1];
            if b.numel() != o {
                return Err(Error::ShapeMismatch {
                    op: "conv2d bias",
                    lhs: y.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            y.add(&b.reshape(&[1, o, 1, 1])?)
        }
    }
}
