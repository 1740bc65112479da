use std::collections::BTreeMap;

use super::param::Gradients;
use super::{Constraint, ParamSet, Result, TensorError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// First/second moments per parameter name plus the shared step counter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub moments: BTreeMap<String, Moments>,
}

#[derive(Clone, Debug, Default)]
pub struct Adam {
    pub config: AdamConfig,
    pub state: AdamState,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            state: AdamState::default(),
        }
    }

    /// One bias-corrected Adam update of every trainable parameter that has
    /// a gradient, followed by projection of constrained parameters.
    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients, lr: f64) -> Result<()> {
        let AdamConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        self.state.step += 1;
        let t = self.state.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for p in params.iter_mut() {
            if !p.trainable() {
                continue;
            }
            let Some(g) = grads.get(p.name()) else { continue };
            let n = p.value().numel();
            if g.len() != n {
                return Err(TensorError::ShapeMismatch {
                    op: "adam_step",
                    lhs: p.value().shape().to_vec(),
                    rhs: vec![g.len()],
                });
            }
            let mom = self
                .state
                .moments
                .entry(p.name().to_string())
                .or_insert_with(|| Moments {
                    m: vec![0.0; n],
                    v: vec![0.0; n],
                });
            if mom.m.len() != n {
                return Err(TensorError::ShapeMismatch {
                    op: "adam_step",
                    lhs: p.value().shape().to_vec(),
                    rhs: vec![mom.m.len()],
                });
            }
            let values = p.value_mut().data_mut();
            for i in 0..n {
                let gi = g[i] + weight_decay * values[i];
                mom.m[i] = beta1 * mom.m[i] + (1.0 - beta1) * gi;
                mom.v[i] = beta2 * mom.v[i] + (1.0 - beta2) * gi * gi;
                let mhat = mom.m[i] / bc1;
                let vhat = mom.v[i] / bc2;
                values[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
            if p.constraint() == Constraint::NonNegative {
                p.project();
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Parameter, Tensor};

    fn grads(name: &str, g: Vec<f64>) -> Gradients {
        [(name.to_string(), g)].into_iter().collect()
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut ps = ParamSet::new();
        ps.insert(Parameter::new("w", Tensor::new(vec![3], vec![1.0, 1.0, 1.0]).unwrap()))
            .unwrap();
        let mut adam = Adam::default();
        assert_eq!(adam.state.step, 0);
        adam.step(&mut ps, &grads("w", vec![0.3, -2.0, 1e3]), 1e-2).unwrap();
        assert_eq!(adam.state.step, 1);
        let v = ps.get("w").unwrap().value().data();
        for (x, g) in v.iter().zip([0.3, -2.0, 1e3]) {
            let expect = 1.0 - 1e-2 * g / (f64::abs(g) + 1e-8);
            assert!((x - expect).abs() < 1e-12, "{x} vs {expect}");
        }
    }

    #[test]
    fn nonnegative_stays_nonnegative() {
        let mut ps = ParamSet::new();
        ps.insert(Parameter::zeros("m", &[2]).with_constraint(Constraint::NonNegative))
            .unwrap();
        let mut adam = Adam::default();
        for _ in 0..5 {
            adam.step(&mut ps, &grads("m", vec![1.0, 0.5]), 0.1).unwrap();
            assert!(ps.get("m").unwrap().value().data().iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn frozen_parameters_untouched() {
        let mut ps = ParamSet::new();
        let mut p = Parameter::zeros("f", &[2]);
        p.set_trainable(false);
        ps.insert(p).unwrap();
        let mut adam = Adam::default();
        adam.step(&mut ps, &grads("f", vec![1.0, 1.0]), 0.1).unwrap();
        assert_eq!(ps.get("f").unwrap().value().data(), &[0.0, 0.0]);
    }
}
