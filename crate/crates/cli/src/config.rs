//! Flat `key = value` run configuration for `unmixsr train`.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use unmixsr::hsi::default_blur_sigma;
use unmixsr::srnet::{DeconvMode, SrConfig};
use unmixsr::trainer::TrainConfig;
use unmixsr::unmixing::UnmixingConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub unmixing: UnmixingConfig,
    pub sr: SrConfig,
    /// HR training cubes.
    pub hr_paths: Vec<PathBuf>,
    /// Matching LR cubes; degraded from the HR cubes when empty.
    pub lr_paths: Vec<PathBuf>,
    pub blur: Option<f64>,
    pub noise: f64,
    pub out_dir: PathBuf,
}

const KEYS: &[&str] = &[
    "scale",
    "p",
    "bands",
    "gram_count",
    "width",
    "unmix_gram_count",
    "unmix_width",
    "alpha",
    "beta_tv",
    "beta_ab",
    "mam_enabled",
    "deconv_mode",
    "epochs_step1",
    "epochs_step2",
    "steps_per_epoch",
    "batch_size",
    "patch",
    "lr0",
    "lr_halving",
    "seed",
    "blur",
    "noise",
    "hr_paths",
    "lr_paths",
    "out_dir",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow!("`{key}`: cannot parse `{value}`: {e}"))
}

fn path_list(base: &Path, value: &str) -> Vec<PathBuf> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| base.join(s))
        .collect()
}

impl RunConfig {
    /// Relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut train = TrainConfig::default();
        let (mut p, mut bands) = (None, None);
        let (mut width, mut grams) = (64, 9);
        let (mut unmix_width, mut unmix_grams) = (32, 2);
        let mut mam = true;
        let mut deconv = DeconvMode::Replicate;
        let (mut hr_paths, mut lr_paths) = (Vec::new(), Vec::new());
        let mut blur = None;
        let mut noise = 0.0;
        let mut out_dir = base.to_path_buf();
        let mut seen = Vec::new();

        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected `key = value`, got `{line}`", n + 1))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                bail!("line {}: unknown key `{key}`", n + 1);
            }
            if seen.contains(&key) {
                bail!("line {}: duplicate key `{key}`", n + 1);
            }
            seen.push(key);
            match key {
                "scale" => train.scale = parse(key, value)?,
                "p" => p = Some(parse(key, value)?),
                "bands" => bands = Some(parse(key, value)?),
                "gram_count" => grams = parse(key, value)?,
                "width" => width = parse(key, value)?,
                "unmix_gram_count" => unmix_grams = parse(key, value)?,
                "unmix_width" => unmix_width = parse(key, value)?,
                "alpha" => train.alpha = parse(key, value)?,
                "beta_tv" => train.beta_tv = parse(key, value)?,
                "beta_ab" => train.beta_ab = parse(key, value)?,
                "mam_enabled" => mam = parse(key, value)?,
                "deconv_mode" => deconv = parse(key, value)?,
                "epochs_step1" => train.epochs_step1 = parse(key, value)?,
                "epochs_step2" => train.epochs_step2 = parse(key, value)?,
                "steps_per_epoch" => train.steps_per_epoch = parse(key, value)?,
                "batch_size" => train.batch_size = parse(key, value)?,
                "patch" => train.patch = parse(key, value)?,
                "lr0" => train.lr0 = parse(key, value)?,
                "lr_halving" => train.lr_halving = parse(key, value)?,
                "seed" => train.seed = parse(key, value)?,
                "blur" => blur = Some(parse(key, value)?),
                "noise" => noise = parse(key, value)?,
                "hr_paths" => hr_paths = path_list(base, value),
                "lr_paths" => lr_paths = path_list(base, value),
                "out_dir" => out_dir = base.join(value),
                _ => unreachable!("key list and match arms disagree"),
            }
        }

        let p = p.ok_or_else(|| anyhow!("missing key `p`"))?;
        let bands = bands.ok_or_else(|| anyhow!("missing key `bands`"))?;
        let unmixing = UnmixingConfig {
            bands,
            endmembers: p,
            width: unmix_width,
            grams: unmix_grams,
        };
        let sr = SrConfig {
            width,
            grams,
            mam,
            deconv,
            ..SrConfig::new(bands, p, train.scale)
        };
        let cfg = Self {
            train,
            unmixing,
            sr,
            hr_paths,
            lr_paths,
            blur,
            noise,
            out_dir,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| e.context(format!("config {}", path.display())))
    }

    fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.unmixing.validate()?;
        self.sr.validate()?;
        if self.unmixing.bands < self.unmixing.endmembers {
            bail!(
                "bands ({}) must be at least p ({})",
                self.unmixing.bands,
                self.unmixing.endmembers
            );
        }
        if self.hr_paths.is_empty() {
            bail!("`hr_paths` must list at least one HR cube");
        }
        if !self.lr_paths.is_empty() && self.lr_paths.len() != self.hr_paths.len() {
            bail!(
                "`lr_paths` lists {} cubes but `hr_paths` lists {}",
                self.lr_paths.len(),
                self.hr_paths.len()
            );
        }
        if let Some(b) = self.blur {
            if !(b >= 0.0 && b.is_finite()) {
                bail!("`blur` must be ≥ 0, got {b}");
            }
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            bail!("`noise` must be ≥ 0, got {}", self.noise);
        }
        Ok(())
    }

    pub fn blur_sigma(&self) -> f64 {
        self.blur.unwrap_or_else(|| default_blur_sigma(self.train.scale))
    }

    /// Ablation baseline: no abundance fusion and no abundance loss.
    pub fn is_baseline(&self) -> bool {
        !self.sr.mam && self.train.beta_ab == 0.0
    }
}
