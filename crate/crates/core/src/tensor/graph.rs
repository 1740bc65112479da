use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::{conv, nn, resample, Parameter, Result, Tensor, TensorError};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node of one [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u64,
    index: usize,
}

pub(super) enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    LeakyRelu(usize, f64),
    Sigmoid(usize),
    Abs(usize),
    Sum(usize),
    Mean(usize),
    Reshape(usize),
    Transpose2d(usize),
    RowTv(usize),
    Conv2d {
        input: usize,
        kernel: usize,
        bias: Option<usize>,
        padding: usize,
    },
    ConvTranspose2d {
        input: usize,
        kernel: usize,
        stride: usize,
    },
    PixelShuffle(usize, usize),
    PixelUnshuffle(usize, usize),
    Replicate(usize, usize),
    Bicubic(usize, usize),
    SoftmaxChannels(usize),
    LayerNorm {
        input: usize,
        gain: usize,
        offset: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    GlobalAvgPool(usize),
    ScaleChannels(usize, usize),
    ConcatChannels(usize, usize),
    SpectralAngle(usize, usize),
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    op: Op,
    requires_grad: bool,
}

/// A single forward pass: values of every intermediate plus the tape needed
/// to run reverse-mode accumulation from a scalar root.
///
/// Nodes are appended in evaluation order, so reverse insertion order is a
/// valid (and deterministic) topological order for backward.
pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
    bound: HashMap<String, Var>,
    bound_order: Vec<String>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            bound: HashMap::new(),
            bound_order: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that receives gradients.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    /// Binds a parameter as a leaf. Binding the same name twice in one graph
    /// returns the first node, so shared weights accumulate one gradient.
    pub fn bind(&mut self, param: &Parameter) -> Var {
        if let Some(&v) = self.bound.get(param.name()) {
            return v;
        }
        let v = self.push_leaf(param.value().clone(), param.trainable());
        self.bound.insert(param.name().to_string(), v);
        self.bound_order.push(param.name().to_string());
        v
    }

    /// Parameters bound so far, in binding order.
    pub fn bound_params(&self) -> impl Iterator<Item = (&str, Var)> + '_ {
        self.bound_order
            .iter()
            .map(move |n| (n.as_str(), self.bound[n]))
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub(super) fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let index = self.nodes.len();
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        Var {
            graph: self.id,
            index,
        }
    }

    pub(super) fn idx(&self, v: Var) -> Result<usize> {
        if v.graph != self.id || v.index >= self.nodes.len() {
            return Err(TensorError::ForeignVar);
        }
        Ok(v.index)
    }

    pub(super) fn val(&self, i: usize) -> &Tensor {
        &self.nodes[i].value
    }

    pub(super) fn req(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let i = self.idx(v).expect("variable from another graph");
        &self.nodes[i].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        let i = self.idx(v).expect("variable from another graph");
        self.nodes[i].requires_grad
    }

    /// Accumulated gradient, if backward reached this node.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        let i = self.idx(v).ok()?;
        self.nodes[i].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn same_shape(&self, op: &'static str, a: usize, b: usize) -> Result<()> {
        let (sa, sb) = (self.val(a).shape(), self.val(b).shape());
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        mk: impl FnOnce(usize, usize) -> Op,
    ) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        self.same_shape(op, ia, ib)?;
        let (va, vb) = (self.val(ia), self.val(ib));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.req(ia) || self.req(ib);
        Ok(self.push(value, mk(ia, ib), rg))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, mk: impl FnOnce(usize) -> Op) -> Result<Var> {
        let ia = self.idx(a)?;
        let value = self.val(ia).map(f);
        let rg = self.req(ia);
        Ok(self.push(value, mk(ia), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        self.unary(a, |x| x * factor, |i| Op::Scale(i, factor))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        self.unary(a, |x| if x > 0.0 { x } else { slope * x }, |i| {
            Op::LeakyRelu(i, slope)
        })
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, sigmoid, Op::Sigmoid)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::abs, Op::Abs)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let s = self.val(ia).data().iter().sum();
        let rg = self.req(ia);
        Ok(self.push(Tensor::scalar(s), Op::Sum(ia), rg))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let v = self.val(ia);
        let m = v.data().iter().sum::<f64>() / v.numel() as f64;
        let rg = self.req(ia);
        Ok(self.push(Tensor::scalar(m), Op::Mean(ia), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ia = self.idx(a)?;
        let value = self.val(ia).clone().reshape(shape)?;
        let rg = self.req(ia);
        Ok(self.push(value, Op::Reshape(ia), rg))
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose2d(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let v = self.val(ia);
        let (r, c) = match v.shape()[..] {
            [r, c] => (r, c),
            _ => {
                return Err(TensorError::Config {
                    op: "transpose2d",
                    reason: format!("expected 2-D tensor, got {:?}", v.shape()),
                })
            }
        };
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = v.data()[i * c + j];
            }
        }
        let rg = self.req(ia);
        Ok(self.push(Tensor::new(vec![c, r], out)?, Op::Transpose2d(ia), rg))
    }

    /// Mean absolute first difference along the last axis of a 2-D tensor:
    /// `Σ_i Σ_j |x[i,j+1] − x[i,j]| / (rows·(cols−1))`.
    pub fn row_tv(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let v = self.val(ia);
        let (r, c) = match v.shape()[..] {
            [r, c] if c >= 2 => (r, c),
            _ => {
                return Err(TensorError::Config {
                    op: "row_tv",
                    reason: format!("expected rows×cols with cols ≥ 2, got {:?}", v.shape()),
                })
            }
        };
        let d = v.data();
        let mut s = 0.0;
        for i in 0..r {
            for j in 0..c - 1 {
                s += (d[i * c + j + 1] - d[i * c + j]).abs();
            }
        }
        let rg = self.req(ia);
        Ok(self.push(
            Tensor::scalar(s / (r * (c - 1)) as f64),
            Op::RowTv(ia),
            rg,
        ))
    }

    /// Reverse-mode accumulation from a scalar root into every ancestor that
    /// requires a gradient. Gradients accumulate across calls until
    /// [`Graph::zero_grad`].
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let r = self.idx(root)?;
        if self.nodes[r].value.numel() != 1 {
            return Err(TensorError::NonScalarRoot(
                self.nodes[r].value.shape().to_vec(),
            ));
        }
        let mut adj: Vec<Option<Vec<f64>>> = Vec::new();
        adj.resize_with(r + 1, || None);
        adj[r] = Some(vec![1.0]);
        for i in (0..=r).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut adj);
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    /// Adjoint buffer of node `i`, allocated on first use; `None` when `i`
    /// does not require a gradient.
    pub(super) fn slot<'a>(
        &self,
        adj: &'a mut [Option<Vec<f64>>],
        i: usize,
    ) -> Option<&'a mut Vec<f64>> {
        if !self.nodes[i].requires_grad {
            return None;
        }
        let n = self.nodes[i].value.numel();
        Some(adj[i].get_or_insert_with(|| vec![0.0; n]))
    }

    fn propagate(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let out = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for k in [*a, *b] {
                    if let Some(s) = self.slot(adj, k) {
                        s.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(s) = self.slot(adj, *a) {
                    s.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if let Some(s) = self.slot(adj, *b) {
                    s.iter_mut().zip(g).for_each(|(x, y)| *x -= y);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.val(*a).data(), self.val(*b).data());
                if let Some(s) = self.slot(adj, *a) {
                    for ((x, gy), bv) in s.iter_mut().zip(g).zip(vb) {
                        *x += gy * bv;
                    }
                }
                if let Some(s) = self.slot(adj, *b) {
                    for ((x, gy), av) in s.iter_mut().zip(g).zip(va) {
                        *x += gy * av;
                    }
                }
            }
            Op::Scale(a, f) => {
                if let Some(s) = self.slot(adj, *a) {
                    s.iter_mut().zip(g).for_each(|(x, y)| *x += f * y);
                }
            }
            Op::Relu(a) => {
                let va = self.val(*a).data();
                if let Some(s) = self.slot(adj, *a) {
                    for ((x, gy), v) in s.iter_mut().zip(g).zip(va) {
                        if *v > 0.0 {
                            *x += gy;
                        }
                    }
                }
            }
            Op::LeakyRelu(a, slope) => {
                let va = self.val(*a).data();
                if let Some(s) = self.slot(adj, *a) {
                    for ((x, gy), v) in s.iter_mut().zip(g).zip(va) {
                        if *v > 0.0 {
                            *x += gy;
                        } else if *v < 0.0 {
                            *x += slope * gy;
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(s) = self.slot(adj, *a) {
                    for ((x, gy), y) in s.iter_mut().zip(g).zip(out.data()) {
                        *x += gy * y * (1.0 - y);
                    }
                }
            }
            Op::Abs(a) => {
                let va = self.val(*a).data();
                if let Some(s) = self.slot(adj, *a) {
                    for ((x, gy), v) in s.iter_mut().zip(g).zip(va) {
                        if *v > 0.0 {
                            *x += gy;
                        } else if *v < 0.0 {
                            *x -= gy;
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(s) = self.slot(adj, *a) {
                    s.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::Mean(a) => {
                let n = self.val(*a).numel() as f64;
                if let Some(s) = self.slot(adj, *a) {
                    s.iter_mut().for_each(|x| *x += g[0] / n);
                }
            }
            Op::Reshape(a) => {
                if let Some(s) = self.slot(adj, *a) {
                    s.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
            }
            Op::Transpose2d(a) => {
                let (r, c) = (out.shape()[1], out.shape()[0]);
                if let Some(s) = self.slot(adj, *a) {
                    for i in 0..r {
                        for j in 0..c {
                            s[i * c + j] += g[j * r + i];
                        }
                    }
                }
            }
            Op::RowTv(a) => {
                let v = self.val(*a);
                let (r, c) = (v.shape()[0], v.shape()[1]);
                let d = v.data();
                let w = g[0] / (r * (c - 1)) as f64;
                if let Some(s) = self.slot(adj, *a) {
                    for i in 0..r {
                        for j in 0..c - 1 {
                            let diff = d[i * c + j + 1] - d[i * c + j];
                            let sg = if diff > 0.0 {
                                1.0
                            } else if diff < 0.0 {
                                -1.0
                            } else {
                                0.0
                            };
                            s[i * c + j + 1] += w * sg;
                            s[i * c + j] -= w * sg;
                        }
                    }
                }
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
                padding,
            } => conv::conv2d_backward(self, adj, g, *input, *kernel, *bias, *padding),
            Op::ConvTranspose2d {
                input,
                kernel,
                stride,
            } => conv::conv_transpose2d_backward(self, adj, g, *input, *kernel, *stride),
            Op::PixelShuffle(a, r) => {
                if let Some(s) = self.slot(adj, *a) {
                    let gt = Tensor::new(out.shape().to_vec(), g.to_vec()).unwrap();
                    let back = conv::pixel_unshuffle_value(&gt, *r).unwrap();
                    s.iter_mut().zip(back.data()).for_each(|(x, y)| *x += y);
                }
            }
            Op::PixelUnshuffle(a, r) => {
                if let Some(s) = self.slot(adj, *a) {
                    let gt = Tensor::new(out.shape().to_vec(), g.to_vec()).unwrap();
                    let back = conv::pixel_shuffle_value(&gt, *r).unwrap();
                    s.iter_mut().zip(back.data()).for_each(|(x, y)| *x += y);
                }
            }
            Op::Replicate(a, r) => nn::replicate_backward(self, adj, g, *a, *r),
            Op::Bicubic(a, r) => resample::bicubic_backward(self, adj, g, *a, *r),
            Op::SoftmaxChannels(a) => nn::softmax_backward(self, adj, g, *a, out),
            Op::LayerNorm {
                input,
                gain,
                offset,
                xhat,
                inv_std,
            } => nn::layer_norm_backward(self, adj, g, *input, *gain, *offset, xhat, inv_std),
            Op::GlobalAvgPool(a) => nn::global_avg_pool_backward(self, adj, g, *a),
            Op::ScaleChannels(a, w) => nn::scale_channels_backward(self, adj, g, *a, *w),
            Op::ConcatChannels(a, b) => nn::concat_channels_backward(self, adj, g, *a, *b),
            Op::SpectralAngle(a, b) => nn::spectral_angle_backward(self, adj, g, *a, *b),
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
