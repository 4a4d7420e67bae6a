//! File formats: raw little-endian f32 arrays with JSON sidecars, 8-bit
//! grayscale PNG export, and circular-ROI JSON.
//!
//! An image is stored as `<stem>.img` (row-major f32, little-endian) next to
//! `<stem>.json` holding `{width, height, pixel_size_mm}`. Sinograms use
//! `<stem>.sino` with counts followed by the additive term when present.
//! All writes go through a temp file plus rename so concurrent readers
//! never observe partial output.

use crate::error::{Error, Result};
use crate::grid::{circular_roi, Image, ImageGrid, RoiMask};
use crate::projector::{ProjectionGeometry, Sinogram};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImageSidecar {
    width: usize,
    height: usize,
    pixel_size_mm: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SinogramSidecar {
    n_angles: usize,
    n_bins: usize,
    bin_size_mm: f64,
    has_additive: bool,
}

/// Circular ROI description as serialized to JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoiSpec {
    pub center_mm: [f64; 2],
    pub diameter_mm: f64,
    pub label: String,
}

impl RoiSpec {
    pub fn to_mask(&self, grid: ImageGrid) -> Result<RoiMask> {
        circular_roi(
            grid,
            (self.center_mm[0], self.center_mm[1]),
            self.diameter_mm,
            self.label.clone(),
        )
    }
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Write `bytes` to `path` atomically (temp file in the same directory,
/// then rename).
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = path.to_path_buf();
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    tmp.set_file_name(format!(".{file_name}.tmp"));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn write_f32_le(path: &Path, values: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    atomic_write(path, &bytes)
}

/// Full-precision f64 blob, used for resumable solver state where the f32
/// image format would lose bits.
pub fn save_raw_f64(values: &[f64], path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    atomic_write(path, &bytes)
}

pub fn load_raw_f64(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::LengthMismatch {
            expected: bytes.len() / 8 * 8,
            got: bytes.len(),
            context: format!("{}: byte count not a multiple of 8", path.display()),
        });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn read_f32_le(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::LengthMismatch {
            expected: bytes.len() / 4 * 4,
            got: bytes.len(),
            context: format!("{}: byte count not a multiple of 4", path.display()),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

/// Save an image as raw f32 plus sidecar; `load_image` inverts this
/// bit-exactly for f32-representable values.
pub fn save_image(img: &Image, path: &Path) -> Result<()> {
    let sidecar = ImageSidecar {
        width: img.grid.width,
        height: img.grid.height,
        pixel_size_mm: img.grid.pixel_size,
    };
    write_f32_le(path, &img.values)?;
    let json = serde_json::to_vec_pretty(&sidecar).expect("sidecar serializes");
    atomic_write(&sidecar_path(path), &json)
}

pub fn load_image(path: &Path) -> Result<Image> {
    let sc_path = sidecar_path(path);
    if !sc_path.exists() {
        return Err(Error::MissingInput(format!(
            "sidecar {} for image {}",
            sc_path.display(),
            path.display()
        )));
    }
    let sc_bytes = fs::read(&sc_path).map_err(|e| Error::io(&sc_path, e))?;
    let sidecar: ImageSidecar =
        serde_json::from_slice(&sc_bytes).map_err(|e| Error::json(&sc_path, e))?;
    let grid = ImageGrid::new(sidecar.width, sidecar.height, sidecar.pixel_size_mm)?;
    let values = read_f32_le(path)?;
    if values.len() != grid.n_pixels() {
        return Err(Error::LengthMismatch {
            expected: grid.n_pixels(),
            got: values.len(),
            context: format!("{}", path.display()),
        });
    }
    Image::new(grid, values)
}

/// 8-bit grayscale PNG with the linear window [lo, hi]:
/// byte = round(255 * clamp((v - lo) / (hi - lo), 0, 1)), half rounding up.
pub fn export_png(img: &Image, window: (f64, f64), path: &Path) -> Result<()> {
    let (lo, hi) = window;
    if !(lo < hi) {
        return Err(Error::InvalidArgument(format!(
            "png window must have lo < hi, got ({lo}, {hi})"
        )));
    }
    let bytes: Vec<u8> = img
        .values
        .iter()
        .map(|&v| (255.0 * ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).round() as u8)
        .collect();
    let buf = image::GrayImage::from_raw(img.grid.width as u32, img.grid.height as u32, bytes)
        .expect("buffer length matches dimensions");
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    buf.save(path)
        .map_err(|e| Error::InvalidArgument(format!("png encode {}: {e}", path.display())))?;
    Ok(())
}

pub fn save_sinogram(sino: &Sinogram, path: &Path) -> Result<()> {
    let has_additive = sino.additive.iter().any(|&s| s != 0.0);
    let sidecar = SinogramSidecar {
        n_angles: sino.geometry.n_angles,
        n_bins: sino.geometry.n_bins,
        bin_size_mm: sino.geometry.bin_size,
        has_additive,
    };
    let mut values = sino.counts.clone();
    if has_additive {
        values.extend_from_slice(&sino.additive);
    }
    write_f32_le(path, &values)?;
    let json = serde_json::to_vec_pretty(&sidecar).expect("sidecar serializes");
    atomic_write(&sidecar_path(path), &json)
}

pub fn load_sinogram(path: &Path) -> Result<Sinogram> {
    let sc_path = sidecar_path(path);
    if !sc_path.exists() {
        return Err(Error::MissingInput(format!(
            "sidecar {} for sinogram {}",
            sc_path.display(),
            path.display()
        )));
    }
    let sc_bytes = fs::read(&sc_path).map_err(|e| Error::io(&sc_path, e))?;
    let sidecar: SinogramSidecar =
        serde_json::from_slice(&sc_bytes).map_err(|e| Error::json(&sc_path, e))?;
    let geometry =
        ProjectionGeometry::uniform(sidecar.n_angles, sidecar.n_bins, sidecar.bin_size_mm)?;
    let m = geometry.n_lors();
    let values = read_f32_le(path)?;
    let expected = if sidecar.has_additive { 2 * m } else { m };
    if values.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            got: values.len(),
            context: format!("{}", path.display()),
        });
    }
    let counts = values[..m].to_vec();
    let additive = if sidecar.has_additive {
        values[m..].to_vec()
    } else {
        vec![0.0; m]
    };
    Sinogram::new(geometry, counts, additive)
}

pub fn save_rois(rois: &[RoiSpec], path: &Path) -> Result<()> {
    let json = serde_json::to_vec_pretty(rois).expect("rois serialize");
    atomic_write(path, &json)
}

pub fn load_rois(path: &Path) -> Result<Vec<RoiSpec>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))
}
