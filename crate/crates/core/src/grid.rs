//! Metric raster geometry shared by BEV images and masks.

use serde::{Deserialize, Serialize};

/// Bird's-eye-view raster layout. Columns span x (lateral), rows span z
/// (longitudinal) with the vehicle at the image center. Row 0 is the far
/// forward edge (+z), column 0 the far left edge (-x).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    /// Metres per pixel.
    pub resolution: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        // 48 x 96 metres at 0.1 m/px.
        GridSpec {
            width: 480,
            height: 960,
            resolution: 0.1,
        }
    }
}

impl GridSpec {
    pub fn new(width: usize, height: usize, resolution: f64) -> GridSpec {
        GridSpec {
            width,
            height,
            resolution,
        }
    }

    pub fn x_span(&self) -> f64 {
        self.width as f64 * self.resolution
    }

    pub fn z_span(&self) -> f64 {
        self.height as f64 * self.resolution
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pixel containing the metric point, or None when outside the raster.
    pub fn pixel_of(&self, x: f64, z: f64) -> Option<(usize, usize)> {
        let col = ((x + self.x_span() / 2.0) / self.resolution).floor();
        let row = ((self.z_span() / 2.0 - z) / self.resolution).floor();
        if col < 0.0 || row < 0.0 {
            return None;
        }
        let (row, col) = (row as usize, col as usize);
        if col >= self.width || row >= self.height {
            return None;
        }
        Some((row, col))
    }

    /// Continuous pixel coordinates (row, col) of a metric point; may lie
    /// outside the raster.
    pub fn pixel_of_unchecked(&self, x: f64, z: f64) -> (f64, f64) {
        let col = (x + self.x_span() / 2.0) / self.resolution;
        let row = (self.z_span() / 2.0 - z) / self.resolution;
        (row, col)
    }

    /// Metric center of a pixel.
    pub fn metre_of(&self, row: usize, col: usize) -> (f64, f64) {
        let x = (col as f64 + 0.5) * self.resolution - self.x_span() / 2.0;
        let z = self.z_span() / 2.0 - (row as f64 + 0.5) * self.resolution;
        (x, z)
    }

    /// Pixel holding the vehicle / sensor origin.
    pub fn center_pixel(&self) -> (usize, usize) {
        (self.height / 2, self.width / 2)
    }
}
