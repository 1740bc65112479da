//! Spatial degradation HR → LR: per-band Gaussian blur, `n×n` area
//! decimation, additive Gaussian noise, clipping to `[0, 1]`.

use rand_distr::{Distribution, Normal};

use super::{reflect_index, AbundanceMap, HsiCube, HsiError, Raster, Result};
use crate::tensor::rng;

/// Blur used when none is given: `0.8 · n / 2`.
pub fn default_blur_sigma(scale: usize) -> f64 {
    0.8 * scale as f64 / 2.0
}

fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

/// Separable correlation of one plane with symmetric `taps`, reflect padding.
fn separable(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let r = (taps.len() / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * plane[y * w + reflect_index(x as isize + k as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * tmp[reflect_index(y as isize + k as isize - r, h) * w + x])
                .sum();
        }
    }
    out
}

/// Gaussian blur of one `h×w` plane; kernel radius `⌈3σ⌉`, reflect padding.
/// `σ = 0` returns the plane unchanged.
pub fn gaussian_blur(plane: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return plane.to_vec();
    }
    separable(plane, h, w, &gaussian_taps(sigma))
}

pub(crate) fn box_blur3(plane: &[f64], h: usize, w: usize) -> Vec<f64> {
    separable(plane, h, w, &[1.0 / 3.0; 3])
}

/// Mean over non-overlapping `n×n` blocks of every plane.
pub fn block_average(r: &Raster, n: usize) -> Result<Raster> {
    check_divisible(r, n)?;
    let (h, w) = (r.height() / n, r.width() / n);
    let inv = 1.0 / (n * n) as f64;
    let mut out = vec![0.0; r.channels() * h * w];
    for c in 0..r.channels() {
        let src = r.plane(c);
        let dst = &mut out[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for dy in 0..n {
                    let row = (y * n + dy) * r.width() + x * n;
                    s += src[row..row + n].iter().sum::<f64>();
                }
                dst[y * w + x] = s * inv;
            }
        }
    }
    Raster::new(h, w, r.channels(), out)
}

fn check_divisible(r: &Raster, n: usize) -> Result<()> {
    if n == 0 || !r.height().is_multiple_of(n) || !r.width().is_multiple_of(n) {
        return Err(HsiError::Config(format!(
            "{}×{} is not divisible by scale {n}",
            r.height(),
            r.width()
        )));
    }
    Ok(())
}

fn blur_decimate(r: &Raster, n: usize, sigma: f64) -> Result<Raster> {
    check_divisible(r, n)?;
    let mut blurred = r.clone();
    if sigma > 0.0 {
        for c in 0..r.channels() {
            let b = gaussian_blur(r.plane(c), r.height(), r.width(), sigma);
            blurred.plane_mut(c).copy_from_slice(&b);
        }
    }
    block_average(&blurred, n)
}

/// HR → LR degradation of a cube.
pub fn degrade(hr: &HsiCube, scale: usize, blur_sigma: f64, noise_sigma: f64, seed: u64) -> Result<HsiCube> {
    if !(blur_sigma >= 0.0 && noise_sigma >= 0.0) {
        return Err(HsiError::Config(format!(
            "blur and noise must be ≥ 0, got {blur_sigma} and {noise_sigma}"
        )));
    }
    let mut lr = blur_decimate(hr, scale, blur_sigma)?;
    if noise_sigma > 0.0 {
        let dist = Normal::new(0.0, noise_sigma).expect("finite sigma");
        let mut r = rng::stream(seed, "degrade.noise");
        for v in lr.data_mut() {
            *v += dist.sample(&mut r);
        }
    }
    for v in lr.data_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(HsiCube::from_raster(lr))
}

/// The same blur and decimation applied to abundance planes, without noise
/// or clipping. Both steps are convex combinations, so ASC/ANC survive.
pub fn degrade_abundance(a: &AbundanceMap, scale: usize, blur_sigma: f64) -> Result<AbundanceMap> {
    blur_decimate(a, scale, blur_sigma).map(AbundanceMap::from_raster)
}
