use std::path::Path;

use image::GrayImage;

use super::{HsiError, Raster, Result};

/// Min–max normalizes one plane to 8-bit gray; a constant plane maps to 128.
pub fn plane_to_gray(r: &Raster, index: usize) -> Result<GrayImage> {
    if index >= r.channels() {
        return Err(HsiError::IndexOutOfRange {
            index,
            count: r.channels(),
        });
    }
    let plane = r.plane(index);
    let lo = plane.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = plane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pixels: Vec<u8> = plane
        .iter()
        .map(|&v| {
            if hi > lo {
                (255.0 * (v - lo) / (hi - lo)).round() as u8
            } else {
                128
            }
        })
        .collect();
    Ok(GrayImage::from_raw(r.width() as u32, r.height() as u32, pixels).expect("buffer size"))
}

pub fn export_png(r: &Raster, index: usize, path: impl AsRef<Path>) -> Result<()> {
    plane_to_gray(r, index)?.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}
