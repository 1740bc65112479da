//! Channel-wise neural network primitives on `C×H×W` tensors.

use super::graph::Op;
use super::{Graph, Result, Tensor, TensorError, Var};

pub const LAYER_NORM_EPS: f64 = 1e-6;

impl Graph {
    /// Softmax across channels at every pixel, stabilized by max-subtraction.
    pub fn softmax_channels(&mut self, input: Var) -> Result<Var> {
        let ii = self.idx(input)?;
        let x = self.val(ii);
        let (c, h, w) = x.dims3("softmax_channels")?;
        let hw = h * w;
        let d = x.data();
        let mut out = vec![0.0; c * hw];
        for p in 0..hw {
            let m = (0..c).map(|ch| d[ch * hw + p]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for ch in 0..c {
                let e = (d[ch * hw + p] - m).exp();
                out[ch * hw + p] = e;
                z += e;
            }
            for ch in 0..c {
                out[ch * hw + p] /= z;
            }
        }
        let rg = self.req(ii);
        Ok(self.push(Tensor::new(vec![c, h, w], out)?, Op::SoftmaxChannels(ii), rg))
    }

    /// Normalizes across channels at each pixel, then applies a per-channel
    /// affine map: `gain_c · (x − μ) / sqrt(σ² + 1e-6) + offset_c`.
    pub fn layer_norm(&mut self, input: Var, gain: Var, offset: Var) -> Result<Var> {
        let (ii, gi, oi) = (self.idx(input)?, self.idx(gain)?, self.idx(offset)?);
        let x = self.val(ii);
        let (c, h, w) = x.dims3("layer_norm")?;
        for v in [gi, oi] {
            if self.val(v).numel() != c {
                return Err(TensorError::ShapeMismatch {
                    op: "layer_norm",
                    lhs: x.shape().to_vec(),
                    rhs: self.val(v).shape().to_vec(),
                });
            }
        }
        let hw = h * w;
        let d = x.data();
        let (gn, of) = (self.val(gi).data(), self.val(oi).data());
        let mut xhat = vec![0.0; c * hw];
        let mut inv_std = vec![0.0; hw];
        let mut out = vec![0.0; c * hw];
        for p in 0..hw {
            let mean = (0..c).map(|ch| d[ch * hw + p]).sum::<f64>() / c as f64;
            let var = (0..c).map(|ch| (d[ch * hw + p] - mean).powi(2)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[p] = is;
            for ch in 0..c {
                let xh = (d[ch * hw + p] - mean) * is;
                xhat[ch * hw + p] = xh;
                out[ch * hw + p] = gn[ch] * xh + of[ch];
            }
        }
        let rg = self.req(ii) || self.req(gi) || self.req(oi);
        Ok(self.push(
            Tensor::new(vec![c, h, w], out)?,
            Op::LayerNorm {
                input: ii,
                gain: gi,
                offset: oi,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// `C×H×W → C×1×1` spatial mean.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let ii = self.idx(input)?;
        let x = self.val(ii);
        let (c, h, w) = x.dims3("global_avg_pool")?;
        let hw = h * w;
        let out = (0..c)
            .map(|ch| x.data()[ch * hw..(ch + 1) * hw].iter().sum::<f64>() / hw as f64)
            .collect();
        let rg = self.req(ii);
        Ok(self.push(Tensor::new(vec![c, 1, 1], out)?, Op::GlobalAvgPool(ii), rg))
    }

    /// Multiplies every plane of a `C×H×W` input by the matching entry of a
    /// `C`-element weight tensor.
    pub fn scale_channels(&mut self, input: Var, weights: Var) -> Result<Var> {
        let (ii, wi) = (self.idx(input)?, self.idx(weights)?);
        let x = self.val(ii);
        let (c, h, w) = x.dims3("scale_channels")?;
        let wt = self.val(wi);
        if wt.numel() != c {
            return Err(TensorError::ShapeMismatch {
                op: "scale_channels",
                lhs: x.shape().to_vec(),
                rhs: wt.shape().to_vec(),
            });
        }
        let hw = h * w;
        let mut out = x.data().to_vec();
        for ch in 0..c {
            let s = wt.data()[ch];
            out[ch * hw..(ch + 1) * hw].iter_mut().for_each(|v| *v *= s);
        }
        let rg = self.req(ii) || self.req(wi);
        Ok(self.push(Tensor::new(vec![c, h, w], out)?, Op::ScaleChannels(ii, wi), rg))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let (va, vb) = (self.val(ai), self.val(bi));
        let (ca, ha, wa) = va.dims3("concat_channels")?;
        let (cb, hb, wb) = vb.dims3("concat_channels")?;
        if (ha, wa) != (hb, wb) {
            return Err(TensorError::ShapeMismatch {
                op: "concat_channels",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let mut out = va.data().to_vec();
        out.extend_from_slice(vb.data());
        let rg = self.req(ai) || self.req(bi);
        Ok(self.push(
            Tensor::new(vec![ca + cb, ha, wa], out)?,
            Op::ConcatChannels(ai, bi),
            rg,
        ))
    }

    /// Nearest-neighbour upsampling: each pixel becomes an `r×r` block.
    pub fn replicate(&mut self, input: Var, r: usize) -> Result<Var> {
        let ii = self.idx(input)?;
        let value = replicate_value(self.val(ii), r)?;
        let rg = self.req(ii);
        Ok(self.push(value, Op::Replicate(ii, r), rg))
    }

    /// Mean over pixels of the angle (radians) between the spectra of `a`
    /// and `b`. Pixels where either spectrum has zero norm contribute 0.
    pub fn spectral_angle(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let (va, vb) = (self.val(ai), self.val(bi));
        if va.shape() != vb.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "spectral_angle",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let (c, h, w) = va.dims3("spectral_angle")?;
        let hw = h * w;
        let mut total = 0.0;
        for p in 0..hw {
            total += pixel_angle(va.data(), vb.data(), c, hw, p).0;
        }
        let rg = self.req(ai) || self.req(bi);
        Ok(self.push(
            Tensor::scalar(total / hw as f64),
            Op::SpectralAngle(ai, bi),
            rg,
        ))
    }

    /// Squeeze-and-excitation channel attention: global average pool, 1×1
    /// conv down to `C/r`, ReLU, 1×1 conv back to `C`, sigmoid, and
    /// channel-wise rescaling of the input.
    pub fn channel_attention(
        &mut self,
        input: Var,
        down: (Var, Var),
        up: (Var, Var),
    ) -> Result<Var> {
        let pooled = self.global_avg_pool(input)?;
        let z = self.conv2d(pooled, down.0, Some(down.1), 0)?;
        let z = self.relu(z)?;
        let z = self.conv2d(z, up.0, Some(up.1), 0)?;
        let s = self.sigmoid(z)?;
        self.scale_channels(input, s)
    }
}

/// Nearest-neighbour `r×` upsampling of a `C×H×W` tensor.
pub fn replicate_value(x: &Tensor, r: usize) -> Result<Tensor> {
    let (c, h, w) = x.dims3("replicate")?;
    if r == 0 {
        return Err(TensorError::Config {
            op: "replicate",
            reason: "factor must be ≥ 1".into(),
        });
    }
    let (oh, ow) = (h * r, w * r);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                out[(ch * oh + y) * ow + xx] = x.data()[(ch * h + y / r) * w + xx / r];
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

/// Angle at pixel `p` plus the pieces needed for its gradient:
/// `(θ, ⟨a,b⟩, ‖a‖, ‖b‖, cosine)`. `θ` is 0 for a zero-norm spectrum.
fn pixel_angle(a: &[f64], b: &[f64], c: usize, hw: usize, p: usize) -> (f64, f64, f64, f64, f64) {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for ch in 0..c {
        let (x, y) = (a[ch * hw + p], b[ch * hw + p]);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let (na, nb) = (na.sqrt(), nb.sqrt());
    if na == 0.0 || nb == 0.0 {
        return (0.0, dot, na, nb, 1.0);
    }
    let u = (dot / (na * nb)).clamp(-1.0, 1.0);
    (u.acos(), dot, na, nb, u)
}

pub(super) fn spectral_angle_backward(
    g: &Graph,
    adj: &mut [Option<Vec<f64>>],
    gout: &[f64],
    a: usize,
    b: usize,
) {
    let (va, vb) = (g.val(a), g.val(b));
    let (c, h, w) = va.dims3("spectral_angle").unwrap();
    let hw = h * w;
    let (da, db) = (va.data(), vb.data());
    let scale = gout[0] / hw as f64;
    // dθ/du per pixel, zero where the cosine saturates or a norm vanishes.
    let coef: Vec<(f64, f64, f64, f64)> = (0..hw)
        .map(|p| {
            let (_, _, na, nb, u) = pixel_angle(da, db, c, hw, p);
            if na == 0.0 || nb == 0.0 || u.abs() >= 1.0 {
                (0.0, na, nb, u)
            } else {
                (-scale / (1.0 - u * u).sqrt(), na, nb, u)
            }
        })
        .collect();
    // du/da = b/(‖a‖‖b‖) − u·a/‖a‖²
    if let Some(s) = g.slot(adj, a) {
        for (p, &(k, na, nb, u)) in coef.iter().enumerate() {
            if k == 0.0 {
                continue;
            }
            for ch in 0..c {
                let i = ch * hw + p;
                s[i] += k * (db[i] / (na * nb) - u * da[i] / (na * na));
            }
        }
    }
    if let Some(s) = g.slot(adj, b) {
        for (p, &(k, na, nb, u)) in coef.iter().enumerate() {
            if k == 0.0 {
                continue;
            }
            for ch in 0..c {
                let i = ch * hw + p;
                s[i] += k * (da[i] / (na * nb) - u * db[i] / (nb * nb));
            }
        }
    }
}

pub(super) fn softmax_backward(
    g: &Graph,
    adj: &mut [Option<Vec<f64>>],
    gout: &[f64],
    a: usize,
    out: &Tensor,
) {
    let Some(s) = g.slot(adj, a) else { return };
    let (c, h, w) = out.dims3("softmax_channels").unwrap();
    let hw = h * w;
    let y = out.data();
    for p in 0..hw {
        let dot: f64 = (0..c).map(|ch| y[ch * hw + p] * gout[ch * hw + p]).sum();
        for ch in 0..c {
            let i = ch * hw + p;
            s[i] += y[i] * (gout[i] - dot);
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn layer_norm_backward(
    g: &Graph,
    adj: &mut [Option<Vec<f64>>],
    gout: &[f64],
    input: usize,
    gain: usize,
    offset: usize,
    xhat: &[f64],
    inv_std: &[f64],
) {
    let c = g.val(gain).numel();
    let hw = inv_std.len();
    if let Some(s) = g.slot(adj, offset) {
        for ch in 0..c {
            s[ch] += gout[ch * hw..(ch + 1) * hw].iter().sum::<f64>();
        }
    }
    if let Some(s) = g.slot(adj, gain) {
        for ch in 0..c {
            let r = ch * hw..(ch + 1) * hw;
            s[ch] += gout[r.clone()].iter().zip(&xhat[r]).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    let gn = g.val(gain).data();
    if let Some(s) = g.slot(adj, input) {
        let cf = c as f64;
        for p in 0..hw {
            let mut m1 = 0.0;
            let mut m2 = 0.0;
            for ch in 0..c {
                let dxh = gout[ch * hw + p] * gn[ch];
                m1 += dxh;
                m2 += dxh * xhat[ch * hw + p];
            }
            m1 /= cf;
            m2 /= cf;
            for ch in 0..c {
                let i = ch * hw + p;
                let dxh = gout[i] * gn[ch];
                s[i] += inv_std[p] * (dxh - m1 - xhat[i] * m2);
            }
        }
    }
}

pub(super) fn global_avg_pool_backward(g: &Graph, adj: &mut [Option<Vec<f64>>], gout: &[f64], a: usize) {
    let (c, h, w) = g.val(a).dims3("global_avg_pool").unwrap();
    let hw = h * w;
    if let Some(s) = g.slot(adj, a) {
        for ch in 0..c {
            let v = gout[ch] / hw as f64;
            s[ch * hw..(ch + 1) * hw].iter_mut().for_each(|x| *x += v);
        }
    }
}

pub(super) fn scale_channels_backward(
    g: &Graph,
    adj: &mut [Option<Vec<f64>>],
    gout: &[f64],
    a: usize,
    wts: usize,
) {
    let x = g.val(a);
    let (c, h, w) = x.dims3("scale_channels").unwrap();
    let hw = h * w;
    let wd = g.val(wts).data();
    if let Some(s) = g.slot(adj, wts) {
        for ch in 0..c {
            let r = ch * hw..(ch + 1) * hw;
            s[ch] += gout[r.clone()].iter().zip(&x.data()[r]).map(|(p, q)| p * q).sum::<f64>();
        }
    }
    if let Some(s) = g.slot(adj, a) {
        for ch in 0..c {
            for i in ch * hw..(ch + 1) * hw {
                s[i] += gout[i] * wd[ch];
            }
        }
    }
}

pub(super) fn concat_channels_backward(
    g: &Graph,
    adj: &mut [Option<Vec<f64>>],
    gout: &[f64],
    a: usize,
    b: usize,
) {
    let na = g.val(a).numel();
    if let Some(s) = g.slot(adj, a) {
        s.iter_mut().zip(&gout[..na]).for_each(|(x, y)| *x += y);
    }
    if let Some(s) = g.slot(adj, b) {
        s.iter_mut().zip(&gout[na..]).for_each(|(x, y)| *x += y);
    }
}

pub(super) fn replicate_backward(
    g: &Graph,
    adj: &mut [Option<Vec<f64>>],
    gout: &[f64],
    a: usize,
    r: usize,
) {
    let (c, h, w) = g.val(a).dims3("replicate").unwrap();
    let (oh, ow) = (h * r, w * r);
    if let Some(s) = g.slot(adj, a) {
        for ch in 0..c {
            for y in 0..oh {
                for x in 0..ow {
                    s[(ch * h + y / r) * w + x / r] += gout[(ch * oh + y) * ow + x];
                }
            }
        }
    }
}
