use rand::Rng as _;

use super::{Result, TrainError};
use crate::hsi::HsiCube;
use crate::tensor::rng::{self, Rng};

/// An LR crop and, when HR data is available, the aligned HR crop.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchPair {
    pub scene: usize,
    /// Top-left LR corner `(row, col)`; the HR crop starts at `scale·origin`.
    pub origin: (usize, usize),
    pub lr: HsiCube,
    pub hr: Option<HsiCube>,
}

/// Deterministic stream of random aligned crops over a set of scenes.
pub struct PatchSampler<'a> {
    lr: Vec<&'a HsiCube>,
    hr: Option<Vec<&'a HsiCube>>,
    patch: usize,
    scale: usize,
    rng: Rng,
}

impl<'a> PatchSampler<'a> {
    /// Crops from LR cubes only.
    pub fn lr_only(lr: Vec<&'a HsiCube>, patch: usize, seed: u64, stream: &str) -> Result<Self> {
        Self::build(lr, None, patch, 1, seed, stream)
    }

    /// Aligned LR/HR crops; every HR cube must be exactly `scale×` its LR cube.
    pub fn paired(
        lr: Vec<&'a HsiCube>,
        hr: Vec<&'a HsiCube>,
        patch: usize,
        scale: usize,
        seed: u64,
        stream: &str,
    ) -> Result<Self> {
        if lr.len() != hr.len() {
            return Err(TrainError::Config(format!("{} LR cubes but {} HR cubes", lr.len(), hr.len())));
        }
        for (i, (l, h)) in lr.iter().zip(&hr).enumerate() {
            if (h.height(), h.width()) != (l.height() * scale, l.width() * scale) || h.bands() != l.bands() {
                return Err(TrainError::Config(format!(
                    "scene {i}: HR {}×{}×{} is not ×{scale} of LR {}×{}×{}",
                    h.height(),
                    h.width(),
                    h.bands(),
                    l.height(),
                    l.width(),
                    l.bands()
                )));
            }
        }
        Self::build(lr, Some(hr), patch, scale, seed, stream)
    }

    fn build(
        lr: Vec<&'a HsiCube>,
        hr: Option<Vec<&'a HsiCube>>,
        patch: usize,
        scale: usize,
        seed: u64,
        stream: &str,
    ) -> Result<Self> {
        if lr.is_empty() {
            return Err(TrainError::Config("no training scenes".into()));
        }
        if patch == 0 || scale == 0 {
            return Err(TrainError::Config("patch size and scale must be positive".into()));
        }
        if let Some(c) = lr.iter().find(|c| c.height() < patch || c.width() < patch) {
            return Err(TrainError::Config(format!(
                "patch {patch} exceeds LR scene {}×{}",
                c.height(),
                c.width()
            )));
        }
        Ok(Self {
            lr,
            hr,
            patch,
            scale,
            rng: rng::stream(seed, stream),
        })
    }

    pub fn next_pair(&mut self) -> PatchPair {
        let scene = self.rng.random_range(0..self.lr.len());
        let src = self.lr[scene];
        let p = self.patch;
        let i = self.rng.random_range(0..=src.height() - p);
        let j = self.rng.random_range(0..=src.width() - p);
        let crop = |c: &HsiCube, y, x, s| HsiCube::from_raster(c.crop(y, x, s, s).expect("crop within bounds"));
        let n = self.scale;
        PatchPair {
            scene,
            origin: (i, j),
            lr: crop(src, i, j, p),
            hr: self.hr.as_ref().map(|hr| crop(hr[scene], n * i, n * j, n * p)),
        }
    }
}

impl Iterator for PatchSampler<'_> {
    type Item = PatchPair;

    fn next(&mut self) -> Option<PatchPair> {
        Some(self.next_pair())
    }
}

/// Aligned crops from one LR/HR scene.
pub fn patch_sampler<'a>(
    lr: &'a HsiCube,
    hr: &'a HsiCube,
    patch: usize,
    scale: usize,
    seed: u64,
) -> Result<PatchSampler<'a>> {
    PatchSampler::paired(vec![lr], vec![hr], patch, scale, seed, "trainer.patches")
}
