//! Super-resolution network.
//!
//! ```text
//! f0 = head(y)                       B → C
//! t  = f0 + grams(f0)                trunk residual
//! u  = shuffle(conv(t), n/2)         skipped when n = 2
//! u  = u + mam([u, A↑])              material-aware fusion, optional
//! v  = shuffle(conv(u), 2)
//! y' = tail(v) + bicubic(y, n)       global residual
//! ```
//!
//! `A↑` is the LR abundance map replicated to the grid of `u`.

use crate::gram::{Gram, GramConfig};
use crate::hsi::{AbundanceMap, HsiCube, Raster};
use crate::layers::Conv;
use crate::tensor::{replicate_value, Graph, ParamSet, Parameter, Tensor, Var};
use crate::unmixing::{check_params, l1_loss, sad_loss, weighted_total, LossValues, LossVars, UnmixingNetwork};
use crate::{ModelError, Result};

pub const DEFAULT_BETA_AB: f64 = 0.2;

const DECONV: &str = "sr.deconv.weight";

/// How LR abundances are carried to the HR grid for the abundance loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DeconvMode {
    /// Copy each LR pixel into its `n×n` block.
    #[default]
    Replicate,
    /// Stride-`n` transposed convolution, initialized to replication.
    Learned,
}

impl DeconvMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Replicate => "replicate",
            Self::Learned => "learned",
        }
    }
}

impl std::str::FromStr for DeconvMode {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "replicate" => Ok(Self::Replicate),
            "learned" => Ok(Self::Learned),
            other => Err(ModelError::Config(format!("unknown deconv mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SrConfig {
    pub bands: usize,
    pub endmembers: usize,
    pub scale: usize,
    pub width: usize,
    pub grams: usize,
    pub mam: bool,
    pub deconv: DeconvMode,
}

impl SrConfig {
    pub fn new(bands: usize, endmembers: usize, scale: usize) -> Self {
        Self {
            bands,
            endmembers,
            scale,
            width: 64,
            grams: 9,
            mam: true,
            deconv: DeconvMode::Replicate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bands == 0 || self.endmembers == 0 || self.grams == 0 {
            return Err(ModelError::Config(
                "bands, endmembers and GRAM count must be positive".into(),
            ));
        }
        if self.scale < 2 || !self.scale.is_multiple_of(2) {
            return Err(ModelError::Config(format!(
                "scale must be an even factor ≥ 2, got {}",
                self.scale
            )));
        }
        GramConfig::new(self.width).validate()?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SrNetwork {
    cfg: SrConfig,
    params: ParamSet,
    head: Conv,
    grams: Vec<Gram>,
    up1: Option<Conv>,
    mam: Conv,
    up2: Conv,
    tail: Conv,
}

impl SrNetwork {
    pub fn new(cfg: SrConfig, seed: u64) -> Result<Self> {
        let mut net = Self::skeleton(cfg)?;
        let (b, p, c, n) = (cfg.bands, cfg.endmembers, cfg.width, cfg.scale);
        let ps = &mut net.params;
        net.head.init(ps, b, c, 3, seed)?;
        for gram in &net.grams {
            gram.init(ps, seed)?;
        }
        if let Some(up1) = &net.up1 {
            up1.init(ps, c, c * (n / 2) * (n / 2), 3, seed)?;
        }
        if cfg.mam {
            net.mam.init(ps, c + p, c, 1, seed)?;
        }
        net.up2.init(ps, c, 4 * c, 3, seed)?;
        net.tail.init(ps, c, b, 3, seed)?;
        if cfg.deconv == DeconvMode::Learned {
            ps.insert(Parameter::new(DECONV, replication_kernel(p, n)))?;
        }
        Ok(net)
    }

    pub fn from_params(cfg: SrConfig, params: ParamSet) -> Result<Self> {
        let reference = Self::new(cfg, 0)?;
        check_params(&reference.params, &params)?;
        let mut net = Self::skeleton(cfg)?;
        net.params = params;
        Ok(net)
    }

    fn skeleton(cfg: SrConfig) -> Result<Self> {
        cfg.validate()?;
        let grams = (0..cfg.grams)
            .map(|i| Gram::new(&format!("sr.trunk.gram{i}"), GramConfig::new(cfg.width)))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            cfg,
            params: ParamSet::new(),
            head: Conv::new("sr.head", true, 3),
            grams,
            up1: (cfg.scale > 2).then(|| Conv::new("sr.up1", true, 3)),
            mam: Conv::new("sr.mam", true, 1),
            up2: Conv::new("sr.up2", true, 3),
            tail: Conv::new("sr.tail", true, 3),
        })
    }

    pub fn config(&self) -> &SrConfig {
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

    /// Fuses LR abundances into features on the intermediate grid. With MAM
    /// disabled this returns `features` unchanged.
    pub fn mam_fuse(&self, g: &mut Graph, features: Var, a_lr: Var) -> Result<Var> {
        if !self.cfg.mam {
            return Ok(features);
        }
        let (fs, as_) = (g.shape(features).to_vec(), g.shape(a_lr).to_vec());
        let r = self.cfg.scale / 2;
        if fs.len() != 3 || as_.len() != 3 || as_[0] != self.cfg.endmembers || fs[1] != as_[1] * r || fs[2] != as_[2] * r
        {
            return Err(ModelError::Config(format!(
                "MAM input mismatch: features {fs:?}, abundances {as_:?} at ×{r}"
            )));
        }
        let a = if r == 1 { a_lr } else { g.replicate(a_lr, r)? };
        let cat = g.concat_channels(features, a)?;
        let delta = self.mam.forward(g, &self.params, cat)?;
        Ok(g.add(features, delta)?)
    }

    /// `B×h×w` to `B×nh×nw`. `a_lr` is required when MAM is enabled and
    /// ignored otherwise.
    pub fn forward(&self, g: &mut Graph, y_lr: Var, a_lr: Option<Var>) -> Result<Var> {
        match g.shape(y_lr) {
            [b, _, _] if *b == self.cfg.bands => {}
            s => {
                return Err(ModelError::Config(format!(
                    "SR network expects {} bands, got input of shape {s:?}",
                    self.cfg.bands
                )))
            }
        }
        let ps = &self.params;
        let f0 = self.head.forward(g, ps, y_lr)?;
        let mut t = f0;
        for gram in &self.grams {
            t = gram.forward(g, ps, t)?;
        }
        let mut u = g.add(f0, t)?;
        if let Some(up1) = &self.up1 {
            u = up1.forward(g, ps, u)?;
            u = g.pixel_shuffle(u, self.cfg.scale / 2)?;
        }
        if self.cfg.mam {
            let a = a_lr.ok_or_else(|| ModelError::Config("MAM enabled but no LR abundances given".into()))?;
            u = self.mam_fuse(g, u, a)?;
        }
        let v = self.up2.forward(g, ps, u)?;
        let v = g.pixel_shuffle(v, 2)?;
        let out = self.tail.forward(g, ps, v)?;
        let base = g.bicubic_upsample(y_lr, self.cfg.scale)?;
        Ok(g.add(out, base)?)
    }

    /// LR abundances carried to the HR grid.
    pub fn deconv_abundance(&self, g: &mut Graph, a_lr: Var) -> Result<Var> {
        let n = self.cfg.scale;
        match self.cfg.deconv {
            DeconvMode::Replicate => Ok(g.replicate(a_lr, n)?),
            DeconvMode::Learned => {
                let k = g.bind(self.params.get(DECONV)?);
                Ok(g.conv_transpose2d(a_lr, k, n)?)
            }
        }
    }

    pub fn super_resolve(&self, y_lr: &HsiCube, a_lr: Option<&AbundanceMap>) -> Result<HsiCube> {
        let mut g = Graph::new();
        let y = g.constant(y_lr.to_tensor());
        let a = match (self.cfg.mam, a_lr) {
            (true, Some(a)) => {
                if (a.height(), a.width()) != (y_lr.height(), y_lr.width()) {
                    return Err(ModelError::Config(format!(
                        "abundances are {}×{}, cube is {}×{}",
                        a.height(),
                        a.width(),
                        y_lr.height(),
                        y_lr.width()
                    )));
                }
                Some(g.constant(a.to_tensor()))
            }
            (true, None) => return Err(ModelError::Config("MAM enabled but no LR abundances given".into())),
            (false, _) => None,
        };
        let out = self.forward(&mut g, y, a)?;
        Ok(HsiCube::from_tensor(g.value(out))?)
    }

    /// Full Step-II objective on one LR/HR pair. The unmixing network should
    /// be frozen; its encoder supplies the LR abundances and re-unmixes the
    /// SR output for the abundance loss (skipped when `beta_ab` is zero).
    pub fn objective(
        &self,
        g: &mut Graph,
        unmix: &UnmixingNetwork,
        y_lr: Var,
        y_hr: Var,
        w: SrLossWeights,
    ) -> Result<(Var, LossVars)> {
        let need_abundance = self.cfg.mam || w.beta_ab != 0.0;
        let a_lr = if need_abundance { Some(unmix.encode(g, y_lr)?) } else { None };
        let y_sr = self.forward(g, y_lr, a_lr)?;
        let l1 = l1_loss(g, y_hr, y_sr)?;
        let sad = sad_loss(g, y_hr, y_sr)?;
        let aux = match a_lr {
            Some(a) if w.beta_ab != 0.0 => {
                let a_sr = unmix.encode(g, y_sr)?;
                let target = self.deconv_abundance(g, a)?;
                l1_loss(g, a_sr, target)?
            }
            _ => g.constant(Tensor::scalar(0.0)),
        };
        Ok((y_sr, weighted_total(g, l1, sad, aux, w.alpha, w.beta_ab)?))
    }
}

/// `p×p×n×n` transposed-conv kernel that reproduces block replication.
fn replication_kernel(p: usize, n: usize) -> Tensor {
    let mut k = Tensor::zeros(&[p, p, n, n]);
    for i in 0..p {
        let start = (i * p + i) * n * n;
        k.data_mut()[start..start + n * n].fill(1.0);
    }
    k
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SrLossWeights {
    pub alpha: f64,
    pub beta_ab: f64,
}

impl Default for SrLossWeights {
    fn default() -> Self {
        Self {
            alpha: crate::unmixing::DEFAULT_ALPHA,
            beta_ab: DEFAULT_BETA_AB,
        }
    }
}

/// Block replication of an abundance map; `n = 1` is the identity.
pub fn deconv_abundance(a_lr: &AbundanceMap, n: usize) -> Result<AbundanceMap> {
    if n == 0 {
        return Err(ModelError::Config("scale must be ≥ 1".into()));
    }
    Ok(AbundanceMap::from_tensor(&replicate_value(&a_lr.to_tensor(), n)?)?)
}

fn hr_pair(a_sr: &AbundanceMap, a_lr: &AbundanceMap, n: usize) -> Result<AbundanceMap> {
    let up = deconv_abundance(a_lr, n)?;
    if !a_sr.same_extent(&up) {
        return Err(ModelError::Config(format!(
            "HR abundances are {}×{}×{}, expected {}×{}×{}",
            a_sr.height(),
            a_sr.width(),
            a_sr.channels(),
            up.height(),
            up.width(),
            up.channels()
        )));
    }
    Ok(up)
}

pub fn abun_loss(a_sr: &AbundanceMap, a_lr: &AbundanceMap, n: usize) -> Result<f64> {
    let up = hr_pair(a_sr, a_lr, n)?;
    crate::unmixing::unloss_l1(a_sr, &up)
}

pub fn sr_loss_total(
    y_hr: &Raster,
    y_sr: &Raster,
    a_sr: &AbundanceMap,
    a_lr: &AbundanceMap,
    n: usize,
    w: SrLossWeights,
) -> Result<LossValues> {
    let l1 = crate::unmixing::unloss_l1(y_hr, y_sr)?;
    let sad = crate::unmixing::unloss_sad(y_hr, y_sr)?;
    let aux = abun_loss(a_sr, a_lr, n)?;
    Ok(LossValues {
        total: l1 + w.alpha * sad + w.beta_ab * aux,
        l1,
        sad,
        aux,
    })
}
