//! Unsupervised unmixing autoencoder.
//!
//! The encoder maps a cube to per-pixel abundances through a softmax, so
//! every output pixel lies on the probability simplex. The decoder is a
//! bias-free, nonnegative 1×1 convolution whose `B×p` kernel holds the
//! endmember spectra as columns.

use crate::gram::{Gram, GramConfig};
use crate::hsi::{AbundanceMap, EndmemberMatrix, HsiCube, Raster};
use crate::layers::Conv;
use crate::tensor::{Constraint, Graph, ParamSet, Parameter, Tensor, Var};
use crate::{ModelError, Result};

pub const DEFAULT_ALPHA: f64 = 0.1;
pub const DEFAULT_BETA_TV: f64 = 1e-3;

const DECODER: &str = "unmix.decoder.weight";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnmixingConfig {
    pub bands: usize,
    pub endmembers: usize,
    pub width: usize,
    pub grams: usize,
}

impl UnmixingConfig {
    pub fn new(bands: usize, endmembers: usize) -> Self {
        Self {
            bands,
            endmembers,
            width: 32,
            grams: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bands < 2 {
            return Err(ModelError::Config(format!("need at least 2 bands, got {}", self.bands)));
        }
        if self.endmembers < 2 {
            return Err(ModelError::Config(format!(
                "need at least 2 endmembers, got {}",
                self.endmembers
            )));
        }
        GramConfig::new(self.width).validate()?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct UnmixingNetwork {
    cfg: UnmixingConfig,
    params: ParamSet,
    head: Conv,
    grams: Vec<Gram>,
    out: Conv,
}

impl UnmixingNetwork {
    pub fn new(cfg: UnmixingConfig, seed: u64) -> Result<Self> {
        let mut net = Self::skeleton(cfg)?;
        let (b, p, c) = (cfg.bands, cfg.endmembers, cfg.width);
        let ps = &mut net.params;
        net.head.init(ps, b, c, 3, seed)?;
        for gram in &net.grams {
            gram.init(ps, seed)?;
        }
        net.out.init(ps, c, p, 3, seed)?;
        ps.insert(
            Parameter::uniform(DECODER, &[b, p, 1, 1], seed, 0.0, 1.0).with_constraint(Constraint::NonNegative),
        )?;
        Ok(net)
    }

    /// Rebuilds a network around existing parameters (e.g. from a
    /// checkpoint). Every expected parameter must be present with the right
    /// shape; extra parameters are kept.
    pub fn from_params(cfg: UnmixingConfig, params: ParamSet) -> Result<Self> {
        let reference = Self::new(cfg, 0)?;
        check_params(&reference.params, &params)?;
        let mut net = Self::skeleton(cfg)?;
        net.params = params;
        Ok(net)
    }

    fn skeleton(cfg: UnmixingConfig) -> Result<Self> {
        cfg.validate()?;
        let grams = (0..cfg.grams)
            .map(|i| Gram::new(&format!("unmix.encoder.gram{i}"), GramConfig::new(cfg.width)))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            cfg,
            params: ParamSet::new(),
            head: Conv::new("unmix.encoder.head", true, 3),
            grams,
            out: Conv::new("unmix.encoder.out", true, 3),
        })
    }

    pub fn config(&self) -> &UnmixingConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn into_params(self) -> ParamSet {
        self.params
    }

    fn check_bands(&self, g: &Graph, x: Var) -> Result<()> {
        match g.shape(x) {
            [b, _, _] if *b == self.cfg.bands => Ok(()),
            s => Err(ModelError::Config(format!(
                "unmixing network expects {} bands, got input of shape {s:?}",
                self.cfg.bands
            ))),
        }
    }

    /// `B×H×W` cube to `p×H×W` abundances.
    pub fn encode(&self, g: &mut Graph, x: Var) -> Result<Var> {
        self.check_bands(g, x)?;
        let ps = &self.params;
        let mut h = self.head.forward(g, ps, x)?;
        for gram in &self.grams {
            h = gram.forward(g, ps, h)?;
        }
        let logits = self.out.forward(g, ps, h)?;
        Ok(g.softmax_channels(logits)?)
    }

    /// `p×H×W` abundances to a `B×H×W` reconstruction.
    pub fn decode(&self, g: &mut Graph, a: Var) -> Result<Var> {
        let w = g.bind(self.params.get(DECODER)?);
        Ok(g.conv2d(a, w, None, 0)?)
    }

    /// The decoder kernel as a `p×B` matrix node.
    pub fn endmember_var(&self, g: &mut Graph) -> Result<Var> {
        let w = g.bind(self.params.get(DECODER)?);
        let (b, p) = (self.cfg.bands, self.cfg.endmembers);
        let flat = g.reshape(w, &[b, p])?;
        Ok(g.transpose2d(flat)?)
    }

    /// Abundances and reconstruction.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<(Var, Var)> {
        let a = self.encode(g, x)?;
        let y = self.decode(g, a)?;
        Ok((a, y))
    }

    pub fn unmix(&self, y: &HsiCube) -> Result<(AbundanceMap, HsiCube)> {
        let mut g = Graph::new();
        let x = g.constant(y.to_tensor());
        let (a, yh) = self.forward(&mut g, x)?;
        Ok((
            AbundanceMap::from_tensor(g.value(a))?,
            HsiCube::from_tensor(g.value(yh))?,
        ))
    }

    pub fn extract_endmembers(&self) -> EndmemberMatrix {
        let w = self.params.get(DECODER).expect("decoder parameter").value().data();
        let (b, p) = (self.cfg.bands, self.cfg.endmembers);
        let data = (0..p).flat_map(|i| (0..b).map(move |k| w[k * p + i])).collect();
        EndmemberMatrix::new(p, b, data).expect("decoder shape")
    }
}

pub(crate) fn check_params(reference: &ParamSet, actual: &ParamSet) -> Result<()> {
    for p in reference.iter() {
        let got = actual.get(p.name())?;
        if got.value().shape() != p.value().shape() {
            return Err(ModelError::Config(format!(
                "parameter `{}` has shape {:?}, expected {:?}",
                p.name(),
                got.value().shape(),
                p.value().shape()
            )));
        }
    }
    Ok(())
}

/// Mean absolute difference.
pub fn l1_loss(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    let d = g.abs(d)?;
    Ok(g.mean(d)?)
}

/// Mean per-pixel spectral angle in radians.
pub fn sad_loss(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    Ok(g.spectral_angle(a, b)?)
}

/// Mean absolute first difference along each endmember row.
pub fn tv_loss(g: &mut Graph, m: Var) -> Result<Var> {
    Ok(g.row_tv(m)?)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnLossWeights {
    pub alpha: f64,
    pub beta_tv: f64,
}

impl Default for UnLossWeights {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            beta_tv: DEFAULT_BETA_TV,
        }
    }
}

/// Loss nodes for one objective: the total and its three parts.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub l1: Var,
    pub sad: Var,
    pub aux: Var,
}

impl LossVars {
    pub fn values(&self, g: &Graph) -> LossValues {
        LossValues {
            total: g.value(self.total).item(),
            l1: g.value(self.l1).item(),
            sad: g.value(self.sad).item(),
            aux: g.value(self.aux).item(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossValues {
    pub total: f64,
    pub l1: f64,
    pub sad: f64,
    pub aux: f64,
}

/// `l1 + alpha·sad + weight·aux` as graph nodes.
pub fn weighted_total(g: &mut Graph, l1: Var, sad: Var, aux: Var, alpha: f64, weight: f64) -> Result<LossVars> {
    let s = g.scale(sad, alpha)?;
    let t = g.scale(aux, weight)?;
    let total = g.add(l1, s)?;
    let total = g.add(total, t)?;
    Ok(LossVars { total, l1, sad, aux })
}

/// UnLoss on graph nodes: reconstruction L1, SAD, and endmember TV.
pub fn unloss(g: &mut Graph, y: Var, yhat: Var, m: Var, w: UnLossWeights) -> Result<LossVars> {
    let l1 = l1_loss(g, y, yhat)?;
    let sad = sad_loss(g, y, yhat)?;
    let tv = tv_loss(g, m)?;
    weighted_total(g, l1, sad, tv, w.alpha, w.beta_tv)
}

fn pair(a: &Raster, b: &Raster) -> Result<(Graph, Var, Var)> {
    if !a.same_extent(b) {
        return Err(ModelError::Config(format!(
            "shape mismatch: {}×{}×{} vs {}×{}×{}",
            a.height(),
            a.width(),
            a.channels(),
            b.height(),
            b.width(),
            b.channels()
        )));
    }
    let mut g = Graph::new();
    let va = g.constant(a.to_tensor());
    let vb = g.constant(b.to_tensor());
    Ok((g, va, vb))
}

pub fn unloss_l1(y: &Raster, yhat: &Raster) -> Result<f64> {
    let (mut g, a, b) = pair(y, yhat)?;
    let l = l1_loss(&mut g, a, b)?;
    Ok(g.value(l).item())
}

pub fn unloss_sad(y: &Raster, yhat: &Raster) -> Result<f64> {
    let (mut g, a, b) = pair(y, yhat)?;
    let l = sad_loss(&mut g, a, b)?;
    Ok(g.value(l).item())
}

pub fn unloss_tv(m: &EndmemberMatrix) -> Result<f64> {
    if m.bands() < 2 {
        return Err(ModelError::Config("spectral TV needs at least 2 bands".into()));
    }
    let mut g = Graph::new();
    let v = g.constant(Tensor::new(vec![m.p(), m.bands()], m.data().to_vec())?);
    let l = tv_loss(&mut g, v)?;
    Ok(g.value(l).item())
}

pub fn unloss_total(y: &Raster, yhat: &Raster, m: &EndmemberMatrix, w: UnLossWeights) -> Result<LossValues> {
    let l1 = unloss_l1(y, yhat)?;
    let sad = unloss_sad(y, yhat)?;
    let aux = unloss_tv(m)?;
    Ok(LossValues {
        total: l1 + w.alpha * sad + w.beta_tv * aux,
        l1,
        sad,
        aux,
    })
}
