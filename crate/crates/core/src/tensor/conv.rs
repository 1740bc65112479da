//! Convolution, transposed convolution and sub-pixel rearrangement.
//!
//! All inputs are single images laid out `C×H×W`. Convolution is
//! cross-correlation (no kernel flip) with zero padding.

use super::graph::Op;
use super::{Graph, Result, Tensor, TensorError, Var};

/// Output rows `oy` for which `oy + tap − pad` lands inside `0..len`.
#[inline]
fn valid_range(tap: usize, pad: usize, len: usize, out_len: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(tap);
    let hi = (len + pad).saturating_sub(tap).min(out_len);
    (lo, hi.max(lo))
}

struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    k: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

fn conv_geom(input: &Tensor, kernel: &Tensor, padding: usize) -> Result<ConvGeom> {
    let (c, h, w) = input.dims3("conv2d")?;
    let (o, kc, k) = match kernel.shape()[..] {
        [o, kc, kh, kw] if kh == kw => (o, kc, kh),
        _ => {
            return Err(TensorError::Config {
                op: "conv2d",
                reason: format!("kernel must be O×C×k×k, got {:?}", kernel.shape()),
            })
        }
    };
    if kc != c {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            lhs: input.shape().to_vec(),
            rhs: kernel.shape().to_vec(),
        });
    }
    if k % 2 == 0 {
        return Err(TensorError::Config {
            op: "conv2d",
            reason: format!("kernel size {k} is not odd"),
        });
    }
    if h + 2 * padding < k || w + 2 * padding < k {
        return Err(TensorError::Config {
            op: "conv2d",
            reason: format!("{h}×{w} input too small for kernel {k} with padding {padding}"),
        });
    }
    Ok(ConvGeom {
        c,
        h,
        w,
        o,
        k,
        pad: padding,
        oh: h + 2 * padding - k + 1,
        ow: w + 2 * padding - k + 1,
    })
}

fn conv_forward(gm: &ConvGeom, input: &[f64], kernel: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let ConvGeom {
        c,
        h,
        w,
        o,
        k,
        pad,
        oh,
        ow,
    } = *gm;
    let mut out = vec![0.0; o * oh * ow];
    for oc in 0..o {
        let plane = &mut out[oc * oh * ow..(oc + 1) * oh * ow];
        if let Some(b) = bias {
            plane.fill(b[oc]);
        }
        for ic in 0..c {
            let src = &input[ic * h * w..(ic + 1) * h * w];
            for ky in 0..k {
                let (y0, y1) = valid_range(ky, pad, h, oh);
                for kx in 0..k {
                    let wv = kernel[((oc * c + ic) * k + ky) * k + kx];
                    let (x0, x1) = valid_range(kx, pad, w, ow);
                    let ix0 = x0 + kx - pad;
                    for oy in y0..y1 {
                        let iy = oy + ky - pad;
                        let dst = &mut plane[oy * ow + x0..oy * ow + x1];
                        let s = &src[iy * w + ix0..iy * w + ix0 + (x1 - x0)];
                        for (d, v) in dst.iter_mut().zip(s) {
                            *d += wv * v;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Plain (non-recorded) convolution; used by oracles and inference helpers.
pub fn conv2d_value(
    input: &Tensor,
    kernel: &Tensor,
    bias: Option<&Tensor>,
    padding: usize,
) -> Result<Tensor> {
    let gm = conv_geom(input, kernel, padding)?;
    if let Some(b) = bias {
        if b.numel() != gm.o {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: vec![gm.o],
                rhs: b.shape().to_vec(),
            });
        }
    }
    let data = conv_forward(&gm, input.data(), kernel.data(), bias.map(|b| b.data()));
    Tensor::new(vec![gm.o, gm.oh, gm.ow], data)
}

pub(super) fn conv2d_backward(
    g: &Graph,
    adj: &mut [Option<Vec<f64>>],
    gout: &[f64],
    input: usize,
    kernel: usize,
    bias: Option<usize>,
    padding: usize,
) {
    let (xi, ki) = (g.val(input), g.val(kernel));
    let gm = conv_geom(xi, ki, padding).expect("validated in forward");
    let ConvGeom {
        c,
        h,
        w,
        o,
        k,
        pad,
        oh,
        ow,
    } = gm;
    let (x, kern) = (xi.data(), ki.data());

    if let Some(b) = bias {
        if let Some(s) = g.slot(adj, b) {
            for oc in 0..o {
                s[oc] += gout[oc * oh * ow..(oc + 1) * oh * ow].iter().sum::<f64>();
            }
        }
    }
    if let Some(s) = g.slot(adj, kernel) {
        for oc in 0..o {
            let gp = &gout[oc * oh * ow..(oc + 1) * oh * ow];
            for ic in 0..c {
                let src = &x[ic * h * w..(ic + 1) * h * w];
                for ky in 0..k {
                    let (y0, y1) = valid_range(ky, pad, h, oh);
                    for kx in 0..k {
                        let (x0, x1) = valid_range(kx, pad, w, ow);
                        let ix0 = x0 + kx - pad;
                        let mut acc = 0.0;
                        for oy in y0..y1 {
                            let iy = oy + ky - pad;
                            let a = &gp[oy * ow + x0..oy * ow + x1];
                            let b = &src[iy * w + ix0..iy * w + ix0 + (x1 - x0)];
                            acc += a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
                        }
                        s[((oc * c + ic) * k + ky) * k + kx] += acc;
                    }
                }
            }
        }
    }
    if let Some(s) = g.slot(adj, input) {
        for oc in 0..o {
            let gp = &gout[oc * oh * ow..(oc + 1) * oh * ow];
            for ic in 0..c {
                let dst = &mut s[ic * h * w..(ic + 1) * h * w];
                for ky in 0..k {
                    let (y0, y1) = valid_range(ky, pad, h, oh);
                    for kx in 0..k {
                        let wv = kern[((oc * c + ic) * k + ky) * k + kx];
                        let (x0, x1) = valid_range(kx, pad, w, ow);
                        let ix0 = x0 + kx - pad;
                        for oy in y0..y1 {
                            let iy = oy + ky - pad;
                            let d = &mut dst[iy * w + ix0..iy * w + ix0 + (x1 - x0)];
                            let a = &gp[oy * ow + x0..oy * ow + x1];
                            for (dv, av) in d.iter_mut().zip(a) {
                                *dv += wv * av;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn transpose_geom(input: &Tensor, kernel: &Tensor, stride: usize) -> Result<(usize, usize, usize, usize, usize, usize, usize)> {
    if stride < 1 {
        return Err(TensorError::Config {
            op: "conv_transpose2d",
            reason: "stride must be ≥ 1".into(),
        });
    }
    let (c, h, w) = input.dims3("conv_transpose2d")?;
    let (kc, o, k) = match kernel.shape()[..] {
        [kc, o, kh, kw] if kh == kw => (kc, o, kh),
        _ => {
            return Err(TensorError::Config {
                op: "conv_transpose2d",
                reason: format!("kernel must be C×O×k×k, got {:?}", kernel.shape()),
            })
        }
    };
    if kc != c {
        return Err(TensorError::ShapeMismatch {
            op: "conv_transpose2d",
            lhs: input.shape().to_vec(),
            rhs: kernel.shape().to_vec(),
        });
    }
    let oh = (h - 1) * stride + k;
    let ow = (w - 1) * stride + k;
    Ok((c, h, w, o, k, oh, ow))
}

pub(super) fn conv_transpose2d_backward(
    g: &Graph,
    adj: &mut [Option<Vec<f64>>],
    gout: &[f64],
    input: usize,
    kernel: usize,
    stride: usize,
) {
    let (xi, ki) = (g.val(input), g.val(kernel));
    let (c, h, w, o, k, oh, ow) = transpose_geom(xi, ki, stride).expect("validated in forward");
    let (x, kern) = (xi.data(), ki.data());
    if let Some(s) = g.slot(adj, kernel) {
        for ic in 0..c {
            for oc in 0..o {
                for ky in 0..k {
                    for kx in 0..k {
                        let mut acc = 0.0;
                        for y in 0..h {
                            for xx in 0..w {
                                acc += x[(ic * h + y) * w + xx]
                                    * gout[(oc * oh + y * stride + ky) * ow + xx * stride + kx];
                            }
                        }
                        s[((ic * o + oc) * k + ky) * k + kx] += acc;
                    }
                }
            }
        }
    }
    if let Some(s) = g.slot(adj, input) {
        for ic in 0..c {
            for oc in 0..o {
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = kern[((ic * o + oc) * k + ky) * k + kx];
                        for y in 0..h {
                            for xx in 0..w {
                                s[(ic * h + y) * w + xx] +=
                                    wv * gout[(oc * oh + y * stride + ky) * ow + xx * stride + kx];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `(C·r²)×H×W → C×(rH)×(rW)`, with output `(c, y·r+i, x·r+j)` taken from
/// input channel `c·r² + i·r + j`.
pub fn pixel_shuffle_value(input: &Tensor, r: usize) -> Result<Tensor> {
    let (cin, h, w) = input.dims3("pixel_shuffle")?;
    if r == 0 || cin % (r * r) != 0 {
        return Err(TensorError::Config {
            op: "pixel_shuffle",
            reason: format!("{cin} channels not divisible by {r}²"),
        });
    }
    let c = cin / (r * r);
    let (oh, ow) = (h * r, w * r);
    let src = input.data();
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for i in 0..r {
            for j in 0..r {
                let plane = &src[((ch * r + i) * r + j) * h * w..][..h * w];
                for y in 0..h {
                    for x in 0..w {
                        out[(ch * oh + y * r + i) * ow + x * r + j] = plane[y * w + x];
                    }
                }
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

/// Inverse of [`pixel_shuffle_value`].
pub fn pixel_unshuffle_value(input: &Tensor, r: usize) -> Result<Tensor> {
    let (c, oh, ow) = input.dims3("pixel_unshuffle")?;
    if r == 0 || oh % r != 0 || ow % r != 0 {
        return Err(TensorError::Config {
            op: "pixel_unshuffle",
            reason: format!("{oh}×{ow} not divisible by {r}"),
        });
    }
    let (h, w) = (oh / r, ow / r);
    let src = input.data();
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for i in 0..r {
            for j in 0..r {
                let plane = &mut out[((ch * r + i) * r + j) * h * w..][..h * w];
                for y in 0..h {
                    for x in 0..w {
                        plane[y * w + x] = src[(ch * oh + y * r + i) * ow + x * r + j];
                    }
                }
            }
        }
    }
    Tensor::new(vec![c * r * r, h, w], out)
}

impl Graph {
    /// Cross-correlation of a `C×H×W` input with an `O×C×k×k` kernel.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>, padding: usize) -> Result<Var> {
        let (ii, ki) = (self.idx(input)?, self.idx(kernel)?);
        let bi = bias.map(|b| self.idx(b)).transpose()?;
        let value = conv2d_value(self.val(ii), self.val(ki), bi.map(|b| self.val(b)), padding)?;
        let rg = self.req(ii) || self.req(ki) || bi.is_some_and(|b| self.req(b));
        Ok(self.push(
            value,
            Op::Conv2d {
                input: ii,
                kernel: ki,
                bias: bi,
                padding,
            },
            rg,
        ))
    }

    /// Transposed convolution (adjoint of a strided convolution) with a
    /// `C×O×k×k` kernel and no padding. With `k = stride` the output is
    /// `O×(stride·H)×(stride·W)`.
    pub fn conv_transpose2d(&mut self, input: Var, kernel: Var, stride: usize) -> Result<Var> {
        let (ii, ki) = (self.idx(input)?, self.idx(kernel)?);
        let (xi, kt) = (self.val(ii), self.val(ki));
        let (c, h, w, o, k, oh, ow) = transpose_geom(xi, kt, stride)?;
        let (x, kern) = (xi.data(), kt.data());
        let mut out = vec![0.0; o * oh * ow];
        for ic in 0..c {
            for oc in 0..o {
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = kern[((ic * o + oc) * k + ky) * k + kx];
                        for y in 0..h {
                            for xx in 0..w {
                                out[(oc * oh + y * stride + ky) * ow + xx * stride + kx] +=
                                    wv * x[(ic * h + y) * w + xx];
                            }
                        }
                    }
                }
            }
        }
        let rg = self.req(ii) || self.req(ki);
        Ok(self.push(
            Tensor::new(vec![o, oh, ow], out)?,
            Op::ConvTranspose2d {
                input: ii,
                kernel: ki,
                stride,
            },
            rg,
        ))
    }

    pub fn pixel_shuffle(&mut self, input: Var, r: usize) -> Result<Var> {
        let ii = self.idx(input)?;
        let value = pixel_shuffle_value(self.val(ii), r)?;
        let rg = self.req(ii);
        Ok(self.push(value, Op::PixelShuffle(ii, r), rg))
    }

    pub fn pixel_unshuffle(&mut self, input: Var, r: usize) -> Result<Var> {
        let ii = self.idx(input)?;
        let value = pixel_unshuffle_value(self.val(ii), r)?;
        let rg = self.req(ii);
        Ok(self.push(value, Op::PixelUnshuffle(ii, r), rg))
    }
}
