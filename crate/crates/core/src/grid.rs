//! Image grid, image, and region-of-interest types shared by every module.
//!
//! The grid is 2D with isotropic square pixels. Pixel (col, row) has its
//! center at physical coordinates
//! `x = (col - width/2 + 0.5) * pixel_size`,
//! `y = (row - height/2 + 0.5) * pixel_size`,
//! so the grid is centered on the origin. Values are stored row-major.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Grid metadata: dimensions in pixels plus the isotropic pixel size in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageGrid {
    pub width: usize,
    pub height: usize,
    pub pixel_size: f64,
}

impl ImageGrid {
    pub fn new(width: usize, height: usize, pixel_size: f64) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "grid dimensions must be >= 1, got {width}x{height}"
            )));
        }
        if !(pixel_size > 0.0) || !pixel_size.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "pixel_size must be positive and finite, got {pixel_size}"
            )));
        }
        Ok(ImageGrid {
            width,
            height,
            pixel_size,
        })
    }

    pub fn n_pixels(&self) -> usize {
        self.width * self.height
    }

    /// Physical x coordinate (mm) of the center of column `col`.
    pub fn x_center(&self, col: usize) -> f64 {
        (col as f64 - self.width as f64 / 2.0 + 0.5) * self.pixel_size
    }

    /// Physical y coordinate (mm) of the center of row `row`.
    pub fn y_center(&self, row: usize) -> f64 {
        (row as f64 - self.height as f64 / 2.0 + 0.5) * self.pixel_size
    }

    /// Row-major flat index of pixel (col, row).
    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.width + col
    }

    /// Half-extent of the grid in x and y (mm).
    pub fn half_extent(&self) -> (f64, f64) {
        (
            self.width as f64 * self.pixel_size / 2.0,
            self.height as f64 * self.pixel_size / 2.0,
        )
    }
}

/// A 2D scalar field on an [`ImageGrid`], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub grid: ImageGrid,
    pub values: Vec<f64>,
}

impl Image {
    pub fn new(grid: ImageGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_pixels() {
            return Err(Error::LengthMismatch {
                expected: grid.n_pixels(),
                got: values.len(),
                context: "image values".into(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                index,
                context: "image values".into(),
            });
        }
        Ok(Image { grid, values })
    }

    pub fn zeros(grid: ImageGrid) -> Self {
        Image {
            grid,
            values: vec![0.0; grid.n_pixels()],
        }
    }

    pub fn constant(grid: ImageGrid, value: f64) -> Self {
        Image {
            grid,
            values: vec![value; grid.n_pixels()],
        }
    }

    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.values[self.grid.index(col, row)]
    }

    pub fn set(&mut self, col: usize, row: usize, value: f64) {
        let i = self.grid.index(col, row);
        self.values[i] = value;
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Elementwise maximum with zero.
    pub fn clamped_nonneg(&self) -> Image {
        Image {
            grid: self.grid,
            values: self.values.iter().map(|v| v.max(0.0)).collect(),
        }
    }

    /// Min-max normalization to [0, 1]. A constant image maps to all zeros.
    pub fn normalized(&self) -> Image {
        let lo = self.min();
        let hi = self.max();
        let range = hi - lo;
        let values = if range > 0.0 {
            self.values.iter().map(|v| (v - lo) / range).collect()
        } else {
            vec![0.0; self.values.len()]
        };
        Image {
            grid: self.grid,
            values,
        }
    }

    pub fn assert_same_grid(&self, other: &Image, context: &str) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch(format!(
                "{context}: {:?} vs {:?}",
                self.grid, other.grid
            )));
        }
        Ok(())
    }
}

/// Boolean pixel membership mask tied to a grid.
#[derive(Debug, Clone)]
pub struct RoiMask {
    pub grid: ImageGrid,
    pub members: Vec<bool>,
    pub label: String,
}

impl RoiMask {
    pub fn new(grid: ImageGrid, members: Vec<bool>, label: impl Into<String>) -> Result<Self> {
        let label = label.into();
        if members.len() != grid.n_pixels() {
            return Err(Error::LengthMismatch {
                expected: grid.n_pixels(),
                got: members.len(),
                context: format!("ROI '{label}' member flags"),
            });
        }
        if !members.iter().any(|&m| m) {
            return Err(Error::EmptyRoi { label });
        }
        Ok(RoiMask {
            grid,
            members,
            label,
        })
    }

    pub fn member_count(&self) -> usize {
        self.members.iter().filter(|&&m| m).count()
    }

    pub fn member_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.members
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
    }

    /// Mean of `img` over the member pixels.
    pub fn mean(&self, img: &Image) -> Result<f64> {
        img.assert_same_grid(
            &Image {
                grid: self.grid,
                values: vec![],
            },
            "roi mean",
        )
        .map_err(|_| Error::GridMismatch(format!("ROI '{}' grid differs from image", self.label)))?;
        let mut sum = 0.0;
        let mut n = 0usize;
        for i in self.member_indices() {
            sum += img.values[i];
            n += 1;
        }
        Ok(sum / n as f64)
    }

    /// Values of `img` at the member pixels, in index order.
    pub fn extract(&self, img: &Image) -> Vec<f64> {
        self.member_indices().map(|i| img.values[i]).collect()
    }
}

/// Circular ROI: a pixel is a member iff its center lies within
/// `diameter / 2` of `center` (mm coordinates).
pub fn circular_roi(
    grid: ImageGrid,
    center: (f64, f64),
    diameter: f64,
    label: impl Into<String>,
) -> Result<RoiMask> {
    if !(diameter > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "ROI diameter must be positive, got {diameter}"
        )));
    }
    let radius = diameter / 2.0;
    let r2 = radius * radius;
    let mut members = vec![false; grid.n_pixels()];
    for row in 0..grid.height {
        let dy = grid.y_center(row) - center.1;
        for col in 0..grid.width {
            let dx = grid.x_center(col) - center.0;
            if dx * dx + dy * dy <= r2 {
                members[grid.index(col, row)] = true;
            }
        }
    }
    RoiMask::new(grid, members, label)
}
