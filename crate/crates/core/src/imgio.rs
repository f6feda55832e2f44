//! Minimal binary PGM (P5) and PPM (P6) writers for heat maps and slice
//! renders. Both formats are plain headers followed by raw bytes, which
//! keeps outputs viewable anywhere without pulling in an image stack.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

fn write_netpbm(path: &Path, magic: &str, width: usize, height: usize, data: &[u8]) -> Result<()> {
    let mut bytes = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    bytes.extend_from_slice(data);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes an 8-bit grayscale image, one byte per pixel, row-major.
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::ShapeMismatch(format!(
            "{} pixels for a {width}x{height} grayscale image",
            pixels.len()
        )));
    }
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument("image dimensions must be nonzero".into()));
    }
    write_netpbm(path, "P5", width, height, pixels)
}

/// Writes an 8-bit RGB image, three bytes per pixel, row-major.
pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    if rgb.len() != 3 * width * height {
        return Err(Error::ShapeMismatch(format!(
            "{} bytes for a {width}x{height} RGB image",
            rgb.len()
        )));
    }
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument("image dimensions must be nonzero".into()));
    }
    write_netpbm(path, "P6", width, height, rgb)
}

/// Maps a unit-range value through a blue-to-red heat ramp.
pub fn heat_color(v: f64) -> [u8; 3] {
    let v = v.clamp(0.0, 1.0);
    let r = (255.0 * (1.5 * v).min(1.0)) as u8;
    let g = (255.0 * (1.0 - (2.0 * (v - 0.5)).abs()).max(0.0)) as u8;
    let b = (255.0 * (1.5 * (1.0 - v)).min(1.0) * (1.0 - v)) as u8;
    [r, g, b]
}
