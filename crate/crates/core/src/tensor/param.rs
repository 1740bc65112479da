use std::collections::{BTreeMap, HashMap};

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::{rng, Result, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Constraint {
    None,
    /// Every entry is clamped to ≥ 0 after each optimizer step.
    NonNegative,
}

/// A named tensor owned by a network.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    name: String,
    value: Tensor,
    trainable: bool,
    constraint: Constraint,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        Self {
            name: name.into(),
            value,
            trainable: true,
            constraint: Constraint::None,
        }
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Self::new(name, Tensor::zeros(shape))
    }

    /// He (fan-in) normal initialization for a conv kernel `O×C×k×k`.
    pub fn he(name: impl Into<String>, shape: &[usize], seed: u64) -> Self {
        let name = name.into();
        let fan_in: usize = shape[1..].iter().product();
        let std = (2.0 / fan_in as f64).sqrt();
        let dist = Normal::new(0.0, std).expect("finite std");
        let mut r = rng::stream(seed, &name);
        let numel = shape.iter().product();
        let data = (0..numel).map(|_| dist.sample(&mut r)).collect();
        Self::new(name, Tensor::new(shape.to_vec(), data).expect("shape"))
    }

    /// Uniform `[lo, hi)` initialization.
    pub fn uniform(name: impl Into<String>, shape: &[usize], seed: u64, lo: f64, hi: f64) -> Self {
        let name = name.into();
        let mut r = rng::stream(seed, &name);
        let numel = shape.iter().product();
        let data = (0..numel).map(|_| lo + (hi - lo) * r.random::<f64>()).collect();
        Self::new(name, Tensor::new(shape.to_vec(), data).expect("shape"))
    }

    pub fn with_constraint(mut self, constraint: Constraint) -> Self {
        self.constraint = constraint;
        self.project();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut Tensor {
        &mut self.value
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        self.trainable = trainable;
    }

    pub fn constraint(&self) -> Constraint {
        self.constraint
    }

    /// Enforces the constraint in place.
    pub fn project(&mut self) {
        if self.constraint == Constraint::NonNegative {
            for v in self.value.data_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
    }
}

/// Ordered, name-unique collection of parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Parameter>,
    index: HashMap<String, usize>,
}

/// Gradients keyed by parameter name.
pub type Gradients = BTreeMap<String, Vec<f64>>;

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, p: Parameter) -> Result<()> {
        if self.index.contains_key(p.name()) {
            return Err(TensorError::DuplicateParameter(p.name().to_string()));
        }
        self.index.insert(p.name().to_string(), self.params.len());
        self.params.push(p);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Parameter> {
        self.index
            .get(name)
            .map(|&i| &self.params[i])
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Parameter> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.params[i]),
            None => Err(TensorError::UnknownParameter(name.to_string())),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        self.params.iter_mut().for_each(|p| p.set_trainable(trainable));
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value().numel()).sum()
    }

    /// SHA-256 over names, shapes and value bytes.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.name().as_bytes());
            for d in p.value().shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in p.value().data() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().into()
    }

    /// Euclidean norm of each parameter, for diagnostics.
    pub fn norms(&self) -> Vec<(String, f64)> {
        self.params
            .iter()
            .map(|p| {
                let n = p.value().data().iter().map(|v| v * v).sum::<f64>().sqrt();
                (p.name().to_string(), n)
            })
            .collect()
    }
}

impl super::Graph {
    /// Gradients of every bound trainable parameter reached by backward.
    pub fn param_grads(&self) -> Gradients {
        self.bound_params()
            .filter_map(|(n, v)| self.grad(v).map(|g| (n.to_string(), g.to_vec())))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut ps = ParamSet::new();
        ps.insert(Parameter::zeros("a.w", &[2])).unwrap();
        assert!(matches!(
            ps.insert(Parameter::zeros("a.w", &[3])),
            Err(TensorError::DuplicateParameter(_))
        ));
    }

    #[test]
    fn he_init_is_deterministic_per_name() {
        let a = Parameter::he("x.w", &[4, 3, 3, 3], 1);
        let b = Parameter::he("x.w", &[4, 3, 3, 3], 1);
        let c = Parameter::he("y.w", &[4, 3, 3, 3], 1);
        assert_eq!(a.value(), b.value());
        assert_ne!(a.value(), c.value());
    }

    #[test]
    fn nonnegative_projection_on_construction() {
        let p = Parameter::new("m", Tensor::new(vec![3], vec![-1.0, 0.5, -0.0]).unwrap())
            .with_constraint(Constraint::NonNegative);
        assert!(p.value().data().iter().all(|v| *v >= 0.0));
    }
}
