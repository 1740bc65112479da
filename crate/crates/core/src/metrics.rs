//! Reconstruction quality metrics.
//!
//! * PSNR: mean over bands of `10·log10(1/MSE_b)` (unit peak).
//! * SSIM: 11×11 Gaussian window (σ = 1.5), `C1 = 0.01²`, `C2 = 0.03²`,
//!   averaged over the valid window positions and then over bands.
//! * SAM: mean per-pixel spectral angle in degrees.
//! * ERGAS: `(100/n)·sqrt(mean_b RMSE_b² / mean(ref_b)²)`.

use std::fmt;
use std::str::FromStr;

use itertools::Itertools;
use thiserror::Error;

use crate::hsi::{spectral_angle, EndmemberMatrix, Raster};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;
const MAX_MATCH_P: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("image {height}×{width} is smaller than the {window}×{window} SSIM window")]
    TooSmall {
        height: usize,
        width: usize,
        window: usize,
    },
    #[error("metric undefined: {0}")]
    Undefined(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("malformed report: {0}")]
    Parse(String),
}

pub type Result<T, E = MetricError> = std::result::Result<T, E>;

fn same(a: &Raster, b: &Raster) -> Result<()> {
    if a.same_extent(b) {
        Ok(())
    } else {
        Err(MetricError::Shape(format!(
            "{}×{}×{} vs {}×{}×{}",
            a.height(),
            a.width(),
            a.channels(),
            b.height(),
            b.width(),
            b.channels()
        )))
    }
}

fn band_mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// PSNR of every band; `inf` where the band matches exactly.
pub fn psnr_per_band(reference: &Raster, estimate: &Raster) -> Result<Vec<f64>> {
    same(reference, estimate)?;
    Ok((0..reference.channels())
        .map(|c| {
            let mse = band_mse(reference.plane(c), estimate.plane(c));
            if mse == 0.0 {
                f64::INFINITY
            } else {
                -10.0 * mse.log10()
            }
        })
        .collect())
}

pub fn psnr(reference: &Raster, estimate: &Raster) -> Result<f64> {
    let bands = psnr_per_band(reference, estimate)?;
    Ok(bands.iter().sum::<f64>() / bands.len() as f64)
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let w: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable weighted sums over every fully contained window.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = k.iter().enumerate().map(|(i, kv)| kv * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k.iter().enumerate().map(|(i, kv)| kv * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

fn ssim_band(a: &[f64], b: &[f64], h: usize, w: usize, k: &[f64]) -> f64 {
    let prod = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| x * y).collect::<Vec<_>>();
    let mu_a = filter_valid(a, h, w, k);
    let mu_b = filter_valid(b, h, w, k);
    let aa = filter_valid(&prod(a, a), h, w, k);
    let bb = filter_valid(&prod(b, b), h, w, k);
    let ab = filter_valid(&prod(a, b), h, w, k);
    let total: f64 = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2))
        })
        .sum();
    total / mu_a.len() as f64
}

pub fn ssim(reference: &Raster, estimate: &Raster) -> Result<f64> {
    same(reference, estimate)?;
    let (h, w) = (reference.height(), reference.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(MetricError::TooSmall {
            height: h,
            width: w,
            window: SSIM_WINDOW,
        });
    }
    let k = gaussian_window();
    let bands = reference.channels();
    let total: f64 = (0..bands)
        .map(|c| ssim_band(reference.plane(c), estimate.plane(c), h, w, &k))
        .sum();
    Ok(total / bands as f64)
}

/// Mean spectral angle in degrees.
pub fn sam(reference: &Raster, estimate: &Raster) -> Result<f64> {
    same(reference, estimate)?;
    let (h, w) = (reference.height(), reference.width());
    let total: f64 = (0..h)
        .cartesian_product(0..w)
        .map(|(y, x)| spectral_angle(&reference.pixel(y, x), &estimate.pixel(y, x)))
        .sum();
    Ok((total / (h * w) as f64).to_degrees())
}

pub fn ergas(reference: &Raster, estimate: &Raster, scale: usize) -> Result<f64> {
    same(reference, estimate)?;
    if scale == 0 {
        return Err(MetricError::Undefined("scale factor must be positive".into()));
    }
    let mut acc = 0.0;
    let mut used = 0usize;
    for c in 0..reference.channels() {
        let r = reference.plane(c);
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        if mean == 0.0 {
            log::warn!("ERGAS: band {c} has zero mean and is excluded");
            continue;
        }
        acc += band_mse(r, estimate.plane(c)) / (mean * mean);
        used += 1;
    }
    if used == 0 {
        return Err(MetricError::Undefined("every reference band has zero mean".into()));
    }
    Ok(100.0 / scale as f64 * (acc / used as f64).sqrt())
}

/// Assignment of estimated to true endmembers minimizing the mean spectral
/// angle. `perm[i]` is the estimated row matched to true row `i`.
pub fn match_endmembers(truth: &EndmemberMatrix, estimate: &EndmemberMatrix) -> Result<(Vec<usize>, f64)> {
    let p = truth.p();
    if p != estimate.p() || truth.bands() != estimate.bands() {
        return Err(MetricError::Shape(format!(
            "{}×{} vs {}×{} endmember matrices",
            p,
            truth.bands(),
            estimate.p(),
            estimate.bands()
        )));
    }
    if p > MAX_MATCH_P {
        return Err(MetricError::Unsupported(format!(
            "exhaustive matching supports p ≤ {MAX_MATCH_P}, got {p}"
        )));
    }
    let angles: Vec<Vec<f64>> = (0..p)
        .map(|i| (0..p).map(|j| spectral_angle(truth.row(i), estimate.row(j))).collect())
        .collect();
    let mut best: Option<(Vec<usize>, f64)> = None;
    for perm in (0..p).permutations(p) {
        let mean = perm.iter().enumerate().map(|(i, &j)| angles[i][j]).sum::<f64>() / p as f64;
        if best.as_ref().is_none_or(|(_, b)| mean < *b) {
            best = Some((perm, mean));
        }
    }
    Ok(best.expect("p ≥ 1"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub psnr: f64,
    pub ssim: f64,
    pub sam: f64,
    pub ergas: f64,
    pub psnr_per_band: Vec<f64>,
    pub scale: usize,
}

impl EvalReport {
    pub fn compute(reference: &Raster, estimate: &Raster, scale: usize) -> Result<Self> {
        let psnr_per_band = psnr_per_band(reference, estimate)?;
        Ok(Self {
            psnr: psnr_per_band.iter().sum::<f64>() / psnr_per_band.len() as f64,
            ssim: ssim(reference, estimate)?,
            sam: sam(reference, estimate)?,
            ergas: ergas(reference, estimate, scale)?,
            psnr_per_band,
            scale,
        })
    }
}

/// `%g`-style rendering with 10 significant digits; `inf` for +∞.
pub fn format_sig(v: f64) -> String {
    const DIGITS: i32 = 10;
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.*e}", (DIGITS - 1) as usize, v);
    let (mant, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    let trim = |s: &str| {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if (-5..DIGITS).contains(&exp) {
        trim(&format!("{:.*}", (DIGITS - 1 - exp) as usize, v))
    } else {
        format!("{}e{}{:02}", trim(mant), if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "psnr={}", format_sig(self.psnr))?;
        writeln!(f, "ssim={}", format_sig(self.ssim))?;
        writeln!(f, "sam={}", format_sig(self.sam))?;
        writeln!(f, "ergas={}", format_sig(self.ergas))?;
        writeln!(f, "scale={}", self.scale)?;
        for (b, v) in self.psnr_per_band.iter().enumerate() {
            writeln!(f, "psnr_band_{b}={}", format_sig(*v))?;
        }
        Ok(())
    }
}

impl FromStr for EvalReport {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self> {
        let mut r = EvalReport {
            psnr: f64::NAN,
            ssim: f64::NAN,
            sam: f64::NAN,
            ergas: f64::NAN,
            psnr_per_band: Vec::new(),
            scale: 0,
        };
        let num = |k: &str, v: &str| v.parse::<f64>().map_err(|_| MetricError::Parse(format!("{k}={v}")));
        for line in s.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| MetricError::Parse(format!("no `=` in `{line}`")))?;
            match k {
                "psnr" => r.psnr = num(k, v)?,
                "ssim" => r.ssim = num(k, v)?,
                "sam" => r.sam = num(k, v)?,
                "ergas" => r.ergas = num(k, v)?,
                "scale" => r.scale = v.parse().map_err(|_| MetricError::Parse(line.into()))?,
                _ => {
                    let idx: usize = k
                        .strip_prefix("psnr_band_")
                        .and_then(|i| i.parse().ok())
                        .ok_or_else(|| MetricError::Parse(format!("unknown key `{k}`")))?;
                    if idx != r.psnr_per_band.len() {
                        return Err(MetricError::Parse(format!("band {idx} out of order")));
                    }
                    r.psnr_per_band.push(num(k, v)?);
                }
            }
        }
        if [r.psnr, r.ssim, r.sam, r.ergas].iter().any(|v| v.is_nan()) {
            return Err(MetricError::Parse("missing metric".into()));
        }
        Ok(r)
    }
}
