//! Fixed interpolation kernels.

use super::graph::Op;
use super::{Graph, Result, Tensor, TensorError, Var};

/// Mirror an out-of-range index back into `0..n` without repeating the edge
/// sample (`-1 → 1`, `n → n-2`).
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

fn cubic(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

/// Catmull-Rom weights and source indices for each output coordinate along
/// one axis, using pixel-centre alignment.
fn axis_taps(len: usize, scale: usize) -> Vec<[(usize, f64); 4]> {
    (0..len * scale)
        .map(|o| {
            let u = (o as f64 + 0.5) / scale as f64 - 0.5;
            let base = u.floor();
            let frac = u - base;
            let mut taps = [(0usize, 0.0); 4];
            for (k, tap) in taps.iter_mut().enumerate() {
                let off = k as isize - 1;
                *tap = (
                    reflect_index(base as isize + off, len),
                    cubic(frac - off as f64),
                );
            }
            taps
        })
        .collect()
}

/// Bicubic `scale×` upsampling of a `C×H×W` tensor (Catmull-Rom, a = −0.5,
/// reflect padding).
pub fn bicubic_upsample(x: &Tensor, scale: usize) -> Result<Tensor> {
    let (c, h, w) = x.dims3("bicubic_upsample")?;
    if scale == 0 {
        return Err(TensorError::Config {
            op: "bicubic_upsample",
            reason: "scale must be ≥ 1".into(),
        });
    }
    let (oh, ow) = (h * scale, w * scale);
    let (ty, tx) = (axis_taps(h, scale), axis_taps(w, scale));
    let src = x.data();
    let mut out = vec![0.0; c * oh * ow];
    let mut rows = vec![0.0; h * ow];
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for (ox, taps) in tx.iter().enumerate() {
                rows[y * ow + ox] = taps.iter().map(|&(i, wt)| wt * plane[y * w + i]).sum();
            }
        }
        let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for (oy, taps) in ty.iter().enumerate() {
            for ox in 0..ow {
                dst[oy * ow + ox] = taps.iter().map(|&(i, wt)| wt * rows[i * ow + ox]).sum();
            }
        }
    }
    Ok(Tensor::new(vec![c, oh, ow], out).expect("consistent extents"))
}

pub(super) fn bicubic_backward(g: &Graph, adj: &mut [Option<Vec<f64>>], gout: &[f64], a: usize, scale: usize) {
    let (c, h, w) = g.val(a).dims3("bicubic_upsample").unwrap();
    let Some(s) = g.slot(adj, a) else { return };
    let (oh, ow) = (h * scale, w * scale);
    let (ty, tx) = (axis_taps(h, scale), axis_taps(w, scale));
    let mut rows = vec![0.0; h * ow];
    for ch in 0..c {
        let go = &gout[ch * oh * ow..(ch + 1) * oh * ow];
        rows.fill(0.0);
        for (oy, taps) in ty.iter().enumerate() {
            for &(i, wt) in taps {
                for ox in 0..ow {
                    rows[i * ow + ox] += wt * go[oy * ow + ox];
                }
            }
        }
        let dst = &mut s[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for (ox, taps) in tx.iter().enumerate() {
                for &(i, wt) in taps {
                    dst[y * w + i] += wt * rows[y * ow + ox];
                }
            }
        }
    }
}

impl Graph {
    /// Differentiable [`bicubic_upsample`].
    pub fn bicubic_upsample(&mut self, input: Var, scale: usize) -> Result<Var> {
        let ii = self.idx(input)?;
        let value = bicubic_upsample(self.val(ii), scale)?;
        let rg = self.req(ii);
        Ok(self.push(value, Op::Bicubic(ii, scale), rg))
    }
}
