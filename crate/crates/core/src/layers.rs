//! Parameter-naming glue between networks and the graph.

use crate::tensor::{Graph, ParamSet, Parameter, Result, Var};

/// A conv layer addressed by parameter name.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: String,
    pub bias: Option<String>,
    pub padding: usize,
}

impl Conv {
    /// `in_ch → out_ch` with a `k×k` kernel, same-size padding.
    pub fn new(prefix: &str, bias: bool, kernel: usize) -> Self {
        Self {
            weight: format!("{prefix}.weight"),
            bias: bias.then(|| format!("{prefix}.bias")),
            padding: kernel / 2,
        }
    }

    /// He-initialized kernel, zero bias.
    pub fn init(&self, ps: &mut ParamSet, in_ch: usize, out_ch: usize, kernel: usize, seed: u64) -> Result<()> {
        ps.insert(Parameter::he(&self.weight, &[out_ch, in_ch, kernel, kernel], seed))?;
        if let Some(b) = &self.bias {
            ps.insert(Parameter::zeros(b, &[out_ch]))?;
        }
        Ok(())
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamSet, x: Var) -> Result<Var> {
        let w = g.bind(ps.get(&self.weight)?);
        let b = match &self.bias {
            Some(name) => Some(g.bind(ps.get(name)?)),
            None => None,
        };
        g.conv2d(x, w, b, self.padding)
    }
}

/// Channel layer norm with learned gain and offset.
#[derive(Clone, Debug)]
pub struct Norm {
    pub gain: String,
    pub offset: String,
}

impl Norm {
    pub fn new(prefix: &str) -> Self {
        Self {
            gain: format!("{prefix}.gain"),
            offset: format!("{prefix}.offset"),
        }
    }

    pub fn init(&self, ps: &mut ParamSet, channels: usize) -> Result<()> {
        ps.insert(Parameter::new(
            &self.gain,
            crate::tensor::Tensor::full(&[channels], 1.0),
        ))?;
        ps.insert(Parameter::zeros(&self.offset, &[channels]))
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamSet, x: Var) -> Result<Var> {
        let gain = g.bind(ps.get(&self.gain)?);
        let off = g.bind(ps.get(&self.offset)?);
        g.layer_norm(x, gain, off)
    }
}

/// Sets every parameter whose name starts with one of `prefixes` to zero.
pub fn zero_params(ps: &mut ParamSet, prefixes: &[&str]) {
    for p in ps.iter_mut() {
        if prefixes.iter().any(|pre| p.name().starts_with(pre)) {
            p.value_mut().data_mut().fill(0.0);
        }
    }
}

