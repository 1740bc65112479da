//! General residual attention module: a spectral residual block followed by
//! a spatial residual block.
//!
//! ```text
//! x1 = x  + attn(leaky(conv(norm(x))))
//! y  = x1 + conv(relu(conv(norm(x1))))
//! ```
//!
//! With every conv and attention weight at zero the block is the identity.

use crate::layers::{Conv, Norm};
use crate::tensor::{Graph, ParamSet, Parameter, Result, TensorError, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GramConfig {
    pub channels: usize,
    pub kernel: usize,
    pub reduction: usize,
    pub leaky_slope: f64,
}

impl GramConfig {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            kernel: 3,
            reduction: 4,
            leaky_slope: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(TensorError::Config { op: "gram", reason });
        if self.channels == 0 || self.reduction == 0 || !self.channels.is_multiple_of(self.reduction) {
            return bad(format!(
                "channels {} not divisible by attention reduction {}",
                self.channels, self.reduction
            ));
        }
        if self.kernel.is_multiple_of(2) {
            return bad(format!("kernel size {} is not odd", self.kernel));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Gram {
    cfg: GramConfig,
    spectral_norm: Norm,
    spectral_conv: Conv,
    attn_down: Conv,
    attn_up: Conv,
    spatial_norm: Norm,
    spatial_conv1: Conv,
    spatial_conv2: Conv,
}

impl Gram {
    pub fn new(prefix: &str, cfg: GramConfig) -> Result<Self> {
        cfg.validate()?;
        let k = cfg.kernel;
        Ok(Self {
            cfg,
            spectral_norm: Norm::new(&format!("{prefix}.spectral.norm")),
            spectral_conv: Conv::new(&format!("{prefix}.spectral.conv"), true, k),
            attn_down: Conv::new(&format!("{prefix}.spectral.attn.down"), true, 1),
            attn_up: Conv::new(&format!("{prefix}.spectral.attn.up"), true, 1),
            spatial_norm: Norm::new(&format!("{prefix}.spatial.norm")),
            spatial_conv1: Conv::new(&format!("{prefix}.spatial.conv1"), true, k),
            spatial_conv2: Conv::new(&format!("{prefix}.spatial.conv2"), true, k),
        })
    }

    pub fn config(&self) -> &GramConfig {
        &self.cfg
    }

    pub fn init(&self, ps: &mut ParamSet, seed: u64) -> Result<()> {
        let (c, k) = (self.cfg.channels, self.cfg.kernel);
        let mid = c / self.cfg.reduction;
        self.spectral_norm.init(ps, c)?;
        self.spectral_conv.init(ps, c, c, k, seed)?;
        self.attn_down.init(ps, c, mid, 1, seed)?;
        self.attn_up.init(ps, mid, c, 1, seed)?;
        self.spatial_norm.init(ps, c)?;
        self.spatial_conv1.init(ps, c, c, k, seed)?;
        self.spatial_conv2.init(ps, c, c, k, seed)
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamSet, x: Var) -> Result<Var> {
        let shape = g.shape(x);
        if shape.len() != 3 || shape[0] != self.cfg.channels {
            return Err(TensorError::Config {
                op: "gram",
                reason: format!("expected {} channels, got shape {shape:?}", self.cfg.channels),
            });
        }
        let s = self.spectral_norm.forward(g, ps, x)?;
        let s = self.spectral_conv.forward(g, ps, s)?;
        let s = g.leaky_relu(s, self.cfg.leaky_slope)?;
        let down = bind_pair(g, ps, &self.attn_down)?;
        let up = bind_pair(g, ps, &self.attn_up)?;
        let s = g.channel_attention(s, down, up)?;
        let x1 = g.add(x, s)?;

        let t = self.spatial_norm.forward(g, ps, x1)?;
        let t = self.spatial_conv1.forward(g, ps, t)?;
        let t = g.relu(t)?;
        let t = self.spatial_conv2.forward(g, ps, t)?;
        g.add(x1, t)
    }
}

fn bind_pair(g: &mut Graph, ps: &ParamSet, c: &Conv) -> Result<(Var, Var)> {
    let w = g.bind(ps.get(&c.weight)?);
    let b: &Parameter = ps.get(c.bias.as_deref().expect("attention convs carry a bias"))?;
    Ok((w, g.bind(b)))
}
