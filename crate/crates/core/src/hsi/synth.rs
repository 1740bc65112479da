//! Synthetic scenes that follow the linear mixing model exactly.

use rand_distr::{Distribution, Exp1};

use super::{degrade::box_blur3, spectral_angle, AbundanceMap, EndmemberMatrix, HsiCube, HsiError, Result};
use crate::tensor::rng;

/// Minimum pairwise angle (radians) between generated endmembers.
pub const MIN_ENDMEMBER_ANGLE: f64 = 0.25;

const MAX_TRIES: usize = 1000;

/// Ground truth plus the cube it composes to.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub abundances: AbundanceMap,
    pub endmembers: EndmemberMatrix,
    pub cube: HsiCube,
}

/// Per-pixel `y = Σ_i a_i · m_i`.
pub fn lmm_compose(abundances: &AbundanceMap, endmembers: &EndmemberMatrix) -> Result<HsiCube> {
    let p = abundances.endmembers();
    if p != endmembers.p() {
        return Err(HsiError::Dimension(format!(
            "abundances have {p} channels, endmember matrix has {} rows",
            endmembers.p()
        )));
    }
    let (h, w, bands) = (abundances.height(), abundances.width(), endmembers.bands());
    let n = h * w;
    let mut out = vec![0.0; bands * n];
    for i in 0..p {
        let a = abundances.plane(i);
        for (b, &m) in endmembers.row(i).iter().enumerate() {
            let dst = &mut out[b * n..(b + 1) * n];
            for (d, &av) in dst.iter_mut().zip(a) {
                *d += av * m;
            }
        }
    }
    HsiCube::new(h, w, bands, out)
}

fn bump_spectrum(r: &mut impl rand::Rng, bands: usize) -> Vec<f64> {
    let count = r.random_range(2..=4);
    let bumps: Vec<(f64, f64, f64)> = (0..count)
        .map(|_| {
            (
                r.random::<f64>(),
                r.random_range(0.05..0.25),
                r.random_range(0.3..1.0),
            )
        })
        .collect();
    let raw: Vec<f64> = (0..bands)
        .map(|b| {
            let t = if bands > 1 { b as f64 / (bands - 1) as f64 } else { 0.0 };
            bumps
                .iter()
                .map(|&(c, wd, amp)| amp * (-(t - c).powi(2) / (2.0 * wd * wd)).exp())
                .sum()
        })
        .collect();
    let peak = raw.iter().copied().fold(0.0, f64::max);
    raw.iter().map(|v| 0.05 + 0.85 * v / peak).collect()
}

/// `p` smooth spectra built from 2–4 Gaussian bumps each, scaled into
/// `[0.05, 0.9]`, with every pair at least [`MIN_ENDMEMBER_ANGLE`] apart.
pub fn synth_endmembers(p: usize, bands: usize, seed: u64) -> Result<EndmemberMatrix> {
    endmembers_with_separation(p, bands, seed, MIN_ENDMEMBER_ANGLE)
}

fn endmembers_with_separation(p: usize, bands: usize, seed: u64, min_angle: f64) -> Result<EndmemberMatrix> {
    if p < 2 {
        return Err(HsiError::Config(format!("need p ≥ 2 endmembers, got {p}")));
    }
    if bands < p {
        return Err(HsiError::Config(format!("need bands ≥ p, got {bands} < {p}")));
    }
    let mut r = rng::stream(seed, "synth.endmembers");
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(p);
    let mut tries = 0;
    while rows.len() < p {
        tries += 1;
        if tries > MAX_TRIES {
            return Err(HsiError::Generation(format!(
                "could not draw {p} spectra {min_angle} rad apart over {bands} bands in {MAX_TRIES} tries"
            )));
        }
        let cand = bump_spectrum(&mut r, bands);
        if rows.iter().all(|e| spectral_angle(e, &cand) >= min_angle) {
            rows.push(cand);
        }
    }
    EndmemberMatrix::from_rows(&rows)
}

/// i.i.d. symmetric Dirichlet(1) fractions per pixel, box-blurred
/// `smoothness` times (3×3, reflect) and renormalized to sum to one.
pub fn synth_abundances(p: usize, height: usize, width: usize, smoothness: usize, seed: u64) -> Result<AbundanceMap> {
    if p < 2 {
        return Err(HsiError::Config(format!("need p ≥ 2 endmembers, got {p}")));
    }
    let mut r = rng::stream(seed, "synth.abundances");
    let n = height * width;
    let mut data = vec![0.0; p * n];
    for i in 0..n {
        let draws: Vec<f64> = (0..p).map(|_| Exp1.sample(&mut r)).collect();
        let s: f64 = draws.iter().sum();
        for (c, d) in draws.into_iter().enumerate() {
            data[c * n + i] = d / s;
        }
    }
    for c in 0..p {
        let plane = &mut data[c * n..(c + 1) * n];
        for _ in 0..smoothness {
            let blurred = box_blur3(plane, height, width);
            plane.copy_from_slice(&blurred);
        }
    }
    for i in 0..n {
        let s: f64 = (0..p).map(|c| data[c * n + i]).sum();
        for c in 0..p {
            data[c * n + i] /= s;
        }
    }
    AbundanceMap::new(height, width, p, data)
}

/// A complete noiseless LMM scene.
pub fn synth_scene(
    p: usize,
    height: usize,
    width: usize,
    bands: usize,
    smoothness: usize,
    seed: u64,
) -> Result<Scene> {
    let endmembers = synth_endmembers(p, bands, seed)?;
    let abundances = synth_abundances(p, height, width, smoothness, seed)?;
    let cube = lmm_compose(&abundances, &endmembers)?;
    Ok(Scene {
        abundances,
        endmembers,
        cube,
    })
}
