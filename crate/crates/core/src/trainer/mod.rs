//! Two-step training.
//!
//! Step I fits the unmixing autoencoder to LR patches. Step II trains the SR
//! network on aligned LR/HR patches with the Step-I weights frozen: they
//! supply LR abundances to the fusion module and re-unmix the SR output for
//! the abundance loss, but are never updated.

mod checkpoint;
mod log;
mod sampler;

pub use checkpoint::{
    sr_config_text, unmixing_config_text, Checkpoint, NetKind, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use log::{to_csv, write_csv, EpochRecord, CSV_HEADER};
pub use sampler::{patch_sampler, PatchPair, PatchSampler};

use thiserror::Error;

use crate::hsi::{AbundanceMap, HsiCube};
use crate::srnet::{SrConfig, SrLossWeights, SrNetwork};
use crate::tensor::{Adam, AdamConfig, Gradients, Graph, ParamSet, Tensor};
use crate::unmixing::{unloss, LossValues, LossVars, UnLossWeights, UnmixingConfig, UnmixingNetwork};
use crate::ModelError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite loss {loss} at epoch {epoch}, step {step}; parameter norms: {norms}")]
    NonFinite {
        epoch: usize,
        step: u64,
        loss: f64,
        norms: String,
    },
    #[error("frozen unmixing weights changed during epoch {0}")]
    FrozenModified(usize),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<crate::tensor::TensorError> for TrainError {
    fn from(e: crate::tensor::TensorError) -> Self {
        Self::Model(e.into())
    }
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub scale: usize,
    pub epochs_step1: usize,
    pub epochs_step2: usize,
    /// Optimizer steps per epoch.
    pub steps_per_epoch: usize,
    /// Patches whose gradients are averaged into one optimizer step.
    pub batch_size: usize,
    /// LR patch side.
    pub patch: usize,
    pub lr0: f64,
    pub lr_halving: usize,
    pub alpha: f64,
    pub beta_tv: f64,
    pub beta_ab: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            scale: 4,
            epochs_step1: 120,
            epochs_step2: 120,
            steps_per_epoch: 32,
            batch_size: 1,
            patch: 16,
            lr0: 5e-4,
            lr_halving: 40,
            alpha: crate::unmixing::DEFAULT_ALPHA,
            beta_tv: crate::unmixing::DEFAULT_BETA_TV,
            beta_ab: crate::srnet::DEFAULT_BETA_AB,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("scale", self.scale),
            ("steps_per_epoch", self.steps_per_epoch),
            ("batch_size", self.batch_size),
            ("patch", self.patch),
            ("lr_halving", self.lr_halving),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(TrainError::Config(format!("`{k}` must be positive")));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(TrainError::Config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        for (k, v) in [("alpha", self.alpha), ("beta_tv", self.beta_tv), ("beta_ab", self.beta_ab)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(TrainError::Config(format!("{k} must be a finite value ≥ 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        lr_schedule(self.lr0, self.lr_halving, epoch)
    }

    pub fn unloss_weights(&self) -> UnLossWeights {
        UnLossWeights {
            alpha: self.alpha,
            beta_tv: self.beta_tv,
        }
    }

    pub fn sr_loss_weights(&self) -> SrLossWeights {
        SrLossWeights {
            alpha: self.alpha,
            beta_ab: self.beta_ab,
        }
    }
}

/// `lr0 · 0.5^⌊epoch / period⌋`.
pub fn lr_schedule(lr0: f64, period: usize, epoch: usize) -> f64 {
    let halvings = (epoch / period.max(1)).min(i32::MAX as usize) as i32;
    lr0 * 0.5f64.powi(halvings)
}

/// Passed to the observer after every optimizer step.
pub struct StepEvent<'a> {
    pub epoch: usize,
    pub step: u64,
    pub loss: LossValues,
    /// Encoder outputs computed during the step (Step I only).
    pub abundances: &'a [Tensor],
    /// Parameters after the update and projection.
    pub params: &'a ParamSet,
}

pub struct UnmixRun {
    pub network: UnmixingNetwork,
    pub adam: Adam,
    pub log: Vec<EpochRecord>,
}

impl UnmixRun {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            kind: NetKind::Unmixing,
            epoch: self.log.len() as u64,
            config: unmixing_config_text(self.network.config()),
            params: self.network.params().clone(),
            adam: self.adam.state.clone(),
        }
    }
}

pub struct SrRun {
    pub network: SrNetwork,
    /// The frozen Step-I network.
    pub unmixing: UnmixingNetwork,
    pub adam: Adam,
    pub log: Vec<EpochRecord>,
    /// MAM disabled and no abundance loss.
    pub baseline: bool,
}

impl SrRun {
    /// SR parameters plus the frozen unmixing parameters.
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut params = self.network.params().clone();
        for p in self.unmixing.params().iter() {
            params.insert(p.clone())?;
        }
        Ok(Checkpoint {
            kind: NetKind::Sr,
            epoch: self.log.len() as u64,
            config: sr_config_text(self.network.config(), self.unmixing.config()),
            params,
            adam: self.adam.state.clone(),
        })
    }
}

struct Accumulator {
    grads: Gradients,
    sums: LossValues,
    count: usize,
}

impl Accumulator {
    fn new() -> Self {
        Self {
            grads: Gradients::new(),
            sums: LossValues::default(),
            count: 0,
        }
    }

    fn add_loss(&mut self, l: LossValues) {
        self.sums.total += l.total;
        self.sums.l1 += l.l1;
        self.sums.sad += l.sad;
        self.sums.aux += l.aux;
        self.count += 1;
    }

    fn add_grads(&mut self, g: Gradients, weight: f64) {
        for (name, v) in g {
            let acc = self.grads.entry(name).or_insert_with(|| vec![0.0; v.len()]);
            acc.iter_mut().zip(&v).for_each(|(a, b)| *a += weight * b);
        }
    }

    fn mean(&self) -> LossValues {
        let n = self.count.max(1) as f64;
        LossValues {
            total: self.sums.total / n,
            l1: self.sums.l1 / n,
            sad: self.sums.sad / n,
            aux: self.sums.aux / n,
        }
    }
}

fn check_finite(l: &LossValues, params: &ParamSet, epoch: usize, step: u64) -> Result<()> {
    if [l.total, l.l1, l.sad, l.aux].iter().all(|v| v.is_finite()) {
        return Ok(());
    }
    let norms = params
        .norms()
        .into_iter()
        .map(|(n, v)| format!("{n}={v:.6e}"))
        .collect::<Vec<_>>()
        .join(", ");
    Err(TrainError::NonFinite {
        epoch,
        step,
        loss: l.total,
        norms,
    })
}

/// Step I on LR cubes.
pub fn train_step_one(
    cubes: &[HsiCube],
    ucfg: UnmixingConfig,
    cfg: &TrainConfig,
    mut observer: impl FnMut(&StepEvent<'_>),
) -> Result<UnmixRun> {
    cfg.validate()?;
    if let Some(c) = cubes.iter().find(|c| c.bands() != ucfg.bands) {
        return Err(TrainError::Config(format!(
            "scene has {} bands, network expects {}",
            c.bands(),
            ucfg.bands
        )));
    }
    let mut net = UnmixingNetwork::new(ucfg, cfg.seed)?;
    let mut sampler = PatchSampler::lr_only(cubes.iter().collect(), cfg.patch, cfg.seed, "trainer.step1")?;
    let mut adam = Adam::new(AdamConfig::default());
    let weights = cfg.unloss_weights();
    let mut log = Vec::with_capacity(cfg.epochs_step1);
    for epoch in 0..cfg.epochs_step1 {
        let lr = cfg.lr(epoch);
        let mut epoch_acc = Accumulator::new();
        for _ in 0..cfg.steps_per_epoch {
            let mut acc = Accumulator::new();
            let mut abundances = Vec::with_capacity(cfg.batch_size);
            for _ in 0..cfg.batch_size {
                let patch = sampler.next_pair();
                let mut g = Graph::new();
                let x = g.constant(patch.lr.to_tensor());
                let (a, yhat) = net.forward(&mut g, x)?;
                let m = net.endmember_var(&mut g)?;
                let loss: LossVars = unloss(&mut g, x, yhat, m, weights)?;
                let values = loss.values(&g);
                check_finite(&values, net.params(), epoch, adam.state.step + 1)?;
                g.backward(loss.total)?;
                acc.add_grads(g.param_grads(), 1.0 / cfg.batch_size as f64);
                acc.add_loss(values);
                epoch_acc.add_loss(values);
                abundances.push(g.value(a).clone());
            }
            adam.step(net.params_mut(), &acc.grads, lr)?;
            observer(&StepEvent {
                epoch,
                step: adam.state.step,
                loss: acc.mean(),
                abundances: &abundances,
                params: net.params(),
            });
        }
        let record = EpochRecord {
            epoch,
            step: adam.state.step,
            loss: epoch_acc.mean(),
            lr,
        };
        ::log::info!(
            "step I epoch {epoch}: loss {:.6e} (l1 {:.6e}, sad {:.6e}, tv {:.6e})",
            record.loss.total,
            record.loss.l1,
            record.loss.sad,
            record.loss.aux
        );
        log.push(record);
    }
    Ok(UnmixRun { network: net, adam, log })
}

/// An LR cube with its HR ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub lr: HsiCube,
    pub hr: HsiCube,
}

/// Step II on aligned LR/HR pairs with `unmix` frozen.
pub fn train_step_two(
    pairs: &[TrainingPair],
    unmix: &UnmixingNetwork,
    scfg: SrConfig,
    cfg: &TrainConfig,
    mut observer: impl FnMut(&StepEvent<'_>),
) -> Result<SrRun> {
    cfg.validate()?;
    let ucfg = unmix.config();
    if scfg.bands != ucfg.bands || scfg.endmembers != ucfg.endmembers {
        return Err(TrainError::Config(format!(
            "unmixing network is B={} p={}, SR network expects B={} p={}",
            ucfg.bands, ucfg.endmembers, scfg.bands, scfg.endmembers
        )));
    }
    if scfg.scale != cfg.scale {
        return Err(TrainError::Config(format!(
            "SR network scale {} differs from training scale {}",
            scfg.scale, cfg.scale
        )));
    }
    let mut frozen = unmix.clone();
    frozen.params_mut().set_trainable(false);
    let fingerprint = frozen.params().fingerprint();
    let mut net = SrNetwork::new(scfg, cfg.seed)?;
    let mut sampler = PatchSampler::paired(
        pairs.iter().map(|p| &p.lr).collect(),
        pairs.iter().map(|p| &p.hr).collect(),
        cfg.patch,
        cfg.scale,
        cfg.seed,
        "trainer.step2",
    )?;
    let mut adam = Adam::new(AdamConfig::default());
    let weights = cfg.sr_loss_weights();
    let baseline = !scfg.mam && cfg.beta_ab == 0.0;
    let mut log = Vec::with_capacity(cfg.epochs_step2);
    for epoch in 0..cfg.epochs_step2 {
        let lr = cfg.lr(epoch);
        let mut epoch_acc = Accumulator::new();
        for _ in 0..cfg.steps_per_epoch {
            let mut acc = Accumulator::new();
            for _ in 0..cfg.batch_size {
                let patch = sampler.next_pair();
                let hr = patch.hr.expect("paired sampler");
                let mut g = Graph::new();
                let x = g.constant(patch.lr.to_tensor());
                let y = g.constant(hr.to_tensor());
                let (_, loss) = net.objective(&mut g, &frozen, x, y, weights)?;
                let values = loss.values(&g);
                check_finite(&values, net.params(), epoch, adam.state.step + 1)?;
                g.backward(loss.total)?;
                acc.add_grads(g.param_grads(), 1.0 / cfg.batch_size as f64);
                acc.add_loss(values);
                epoch_acc.add_loss(values);
            }
            adam.step(net.params_mut(), &acc.grads, lr)?;
            observer(&StepEvent {
                epoch,
                step: adam.state.step,
                loss: acc.mean(),
                abundances: &[],
                params: net.params(),
            });
        }
        if frozen.params().fingerprint() != fingerprint {
            return Err(TrainError::FrozenModified(epoch));
        }
        let record = EpochRecord {
            epoch,
            step: adam.state.step,
            loss: epoch_acc.mean(),
            lr,
        };
        ::log::info!(
            "step II{} epoch {epoch}: loss {:.6e} (l1 {:.6e}, sad {:.6e}, abun {:.6e})",
            if baseline { " baseline" } else { "" },
            record.loss.total,
            record.loss.l1,
            record.loss.sad,
            record.loss.aux
        );
        log.push(record);
    }
    Ok(SrRun {
        network: net,
        unmixing: frozen,
        adam,
        log,
        baseline,
    })
}

/// SR inference with abundances supplied by the unmixing encoder.
pub fn cascade_super_resolve(sr: &SrNetwork, unmix: &UnmixingNetwork, y_lr: &HsiCube) -> Result<HsiCube> {
    let a = if sr.config().mam {
        Some(unmix.unmix(y_lr)?.0)
    } else {
        None
    };
    Ok(sr.super_resolve(y_lr, a.as_ref())?)
}

/// Abundance loss of a trained model on one LR cube: the encoder applied to
/// the SR output against the replicated encoder output on the LR input.
pub fn abundance_consistency(sr: &SrNetwork, unmix: &UnmixingNetwork, y_lr: &HsiCube) -> Result<f64> {
    let y_sr = cascade_super_resolve(sr, unmix, y_lr)?;
    let (a_lr, _): (AbundanceMap, _) = unmix.unmix(y_lr)?;
    let (a_sr, _) = unmix.unmix(&y_sr)?;
    Ok(crate::srnet::abun_loss(&a_sr, &a_lr, sr.config().scale)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hsi::{block_average, synth_scene};

    #[test]
    fn schedule_values() {
        let c = TrainConfig::default();
        assert_eq!(c.lr(0), 5e-4);
        assert_eq!(c.lr(39), 5e-4);
        assert_eq!(c.lr(40), 2.5e-4);
        assert_eq!(c.lr(80), 1.25e-4);
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            scale: 2,
            epochs_step1: 2,
            epochs_step2: 2,
            steps_per_epoch: 2,
            batch_size: 2,
            patch: 6,
            seed: 11,
            ..TrainConfig::default()
        }
    }

    fn ucfg() -> UnmixingConfig {
        UnmixingConfig {
            bands: 5,
            endmembers: 2,
            width: 8,
            grams: 1,
        }
    }

    #[test]
    fn step_one_runs_and_observes() {
        let scene = synth_scene(2, 8, 8, 5, 1, 3).unwrap();
        let mut seen = 0;
        let run = train_step_one(&[scene.cube], ucfg(), &tiny_cfg(), |e| {
            seen += 1;
            assert_eq!(e.abundances.len(), 2);
        })
        .unwrap();
        assert_eq!(seen, 4);
        assert_eq!(run.log.len(), 2);
        assert_eq!(run.log[1].step, 4);
        assert!(run.network.extract_endmembers().data().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn step_two_freezes_unmixing() {
        let scene = synth_scene(2, 12, 12, 5, 1, 3).unwrap();
        let lr = HsiCube::from_raster(block_average(&scene.cube, 2).unwrap());
        let un = train_step_one(std::slice::from_ref(&lr), ucfg(), &tiny_cfg(), |_| {}).unwrap();
        let before = un.network.params().fingerprint();
        let scfg = SrConfig {
            width: 8,
            grams: 1,
            ..SrConfig::new(5, 2, 2)
        };
        let pairs = [TrainingPair { lr, hr: scene.cube }];
        let run = train_step_two(&pairs, &un.network, scfg, &tiny_cfg(), |_| {}).unwrap();
        assert_eq!(run.unmixing.params().fingerprint(), before);
        assert!(!run.baseline);
        let ck = run.checkpoint().unwrap();
        let (sr, unmix) = Checkpoint::from_bytes(&ck.to_bytes()).unwrap().sr_networks().unwrap();
        assert_eq!(sr.params(), run.network.params());
        assert_eq!(unmix.params().fingerprint(), before);

        let wrong = SrConfig {
            width: 8,
            grams: 1,
            ..SrConfig::new(5, 3, 2)
        };
        assert!(matches!(
            train_step_two(&pairs, &un.network, wrong, &tiny_cfg(), |_| {}),
            Err(TrainError::Config(_))
        ));
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = TrainConfig {
            batch_size: 0,
            ..tiny_cfg()
        };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig {
            lr0: f64::NAN,
            ..tiny_cfg()
        };
        assert!(cfg.validate().is_err());
    }
}
