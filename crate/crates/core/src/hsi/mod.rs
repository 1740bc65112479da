//! Hyperspectral rasters and the operators that produce training data.
//!
//! All rasters are stored plane-major (band, then row, then column), which is
//! the same layout the tensor engine uses for `C×H×W` images.

mod degrade;
mod io;
mod png;
mod synth;

pub use degrade::{block_average, default_blur_sigma, degrade, degrade_abundance, gaussian_blur};
pub use io::{
    decode_raster, encode_raster, load_abn, load_any, load_hsc, read_endmembers_csv, save_abn,
    save_hsc, write_endmembers_csv, RasterKind, ABN_MAGIC, HSC_MAGIC,
};
pub use png::{export_png, plane_to_gray};
pub use crate::tensor::{bicubic_upsample, reflect_index};
pub use synth::{
    lmm_compose, synth_abundances, synth_endmembers, synth_scene, Scene, MIN_ENDMEMBER_ANGLE,
};

use std::ops::{Deref, DerefMut};

use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum HsiError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("scene generation failed: {0}")]
    Generation(String),
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { found: [u8; 4], expected: String },
    #[error("truncated file: header declares {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("non-finite value at element {0}")]
    NonFinite(usize),
    #[error("index {index} out of range for {count} planes")]
    IndexOutOfRange { index: usize, count: usize },
    #[error("malformed endmember CSV: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = HsiError> = std::result::Result<T, E>;

/// `height×width×channels` values stored channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Raster {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(HsiError::Dimension(format!(
                "extents must be positive, got {height}×{width}×{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(HsiError::Dimension(format!(
                "{} values for {height}×{width}×{channels}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self::new(height, width, channels, vec![value; height * width * channels])
            .expect("positive extents")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.pixels();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// The channel vector at one pixel.
    pub fn pixel(&self, y: usize, x: usize) -> Vec<f64> {
        (0..self.channels).map(|c| self.get(c, y, x)).collect()
    }

    /// Copies the `h×w` window whose top-left corner is `(y, x)`.
    pub fn crop(&self, y: usize, x: usize, h: usize, w: usize) -> Result<Self> {
        if y + h > self.height || x + w > self.width || h == 0 || w == 0 {
            return Err(HsiError::Dimension(format!(
                "crop {h}×{w} at ({y},{x}) exceeds {}×{}",
                self.height, self.width
            )));
        }
        let mut out = Vec::with_capacity(self.channels * h * w);
        for c in 0..self.channels {
            for r in y..y + h {
                let start = (c * self.height + r) * self.width + x;
                out.extend_from_slice(&self.data[start..start + w]);
            }
        }
        Self::new(h, w, self.channels, out)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.channels, self.height, self.width], self.data.clone())
            .expect("consistent extents")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match t.shape()[..] {
            [c, h, w] => Self::new(h, w, c, t.data().to_vec()),
            _ => Err(HsiError::Dimension(format!(
                "expected C×H×W tensor, got {:?}",
                t.shape()
            ))),
        }
    }

    pub fn same_extent(&self, other: &Raster) -> bool {
        (self.height, self.width, self.channels) == (other.height, other.width, other.channels)
    }
}

macro_rules! raster_newtype {
    ($(#[$m:meta])* $name:ident) => {
        $(#[$m])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name(Raster);

        impl $name {
            pub fn from_raster(r: Raster) -> Self {
                Self(r)
            }

            pub fn into_raster(self) -> Raster {
                self.0
            }

            pub fn from_tensor(t: &Tensor) -> Result<Self> {
                Raster::from_tensor(t).map(Self)
            }
        }

        impl Deref for $name {
            type Target = Raster;
            fn deref(&self) -> &Raster {
                &self.0
            }
        }

        impl DerefMut for $name {
            fn deref_mut(&mut self) -> &mut Raster {
                &mut self.0
            }
        }
    };
}

raster_newtype!(
    /// A reflectance cube; `channels()` is the band count.
    HsiCube
);

raster_newtype!(
    /// Per-pixel material fractions; `channels()` is the endmember count.
    AbundanceMap
);

impl HsiCube {
    pub fn new(height: usize, width: usize, bands: usize, data: Vec<f64>) -> Result<Self> {
        Raster::new(height, width, bands, data).map(Self)
    }

    pub fn bands(&self) -> usize {
        self.channels()
    }
}

impl AbundanceMap {
    pub fn new(height: usize, width: usize, p: usize, data: Vec<f64>) -> Result<Self> {
        Raster::new(height, width, p, data).map(Self)
    }

    pub fn endmembers(&self) -> usize {
        self.channels()
    }

    /// Largest deviation of any per-pixel sum from 1.
    pub fn max_sum_error(&self) -> f64 {
        let n = self.pixels();
        (0..n)
            .map(|i| {
                let s: f64 = (0..self.channels()).map(|c| self.data()[c * n + i]).sum();
                (s - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.data().iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// ANC exactly and ASC within `tol`.
    pub fn is_valid(&self, tol: f64) -> bool {
        self.min_value() >= 0.0 && self.max_sum_error() <= tol
    }
}

/// `p×B` endmember spectra, one row per material.
#[derive(Clone, Debug, PartialEq)]
pub struct EndmemberMatrix {
    p: usize,
    bands: usize,
    data: Vec<f64>,
}

impl EndmemberMatrix {
    pub fn new(p: usize, bands: usize, data: Vec<f64>) -> Result<Self> {
        if p == 0 || bands == 0 || data.len() != p * bands {
            return Err(HsiError::Dimension(format!(
                "{} values for a {p}×{bands} endmember matrix",
                data.len()
            )));
        }
        Ok(Self { p, bands, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let bands = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != bands) {
            return Err(HsiError::Dimension("ragged endmember rows".into()));
        }
        Self::new(rows.len(), bands, rows.concat())
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.bands..(i + 1) * self.bands]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.bands)
    }

    /// Entrywise nonnegative with no all-zero row.
    pub fn is_valid(&self) -> bool {
        self.data.iter().all(|v| *v >= 0.0) && self.rows().all(|r| r.iter().any(|v| *v > 0.0))
    }
}

/// Angle in radians between two spectra; 0 when either has zero norm.
pub fn spectral_angle(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    // Half-angle form: exact for identical directions, where acos loses
    // half the significant digits.
    let (mut diff, mut sum) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (u, v) = (x / na, y / nb);
        diff += (u - v) * (u - v);
        sum += (u + v) * (u + v);
    }
    2.0 * diff.sqrt().atan2(sum.sqrt())
}
