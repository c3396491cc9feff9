use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole intrinsics. Pixel `(u, v)` has its center at `(u + 0.5, v + 0.5)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self::with_hfov(64, 64, 60f64.to_radians())
    }
}

impl CameraIntrinsics {
    /// Square pixels, principal point at the image center.
    pub fn with_hfov(width: usize, height: usize, hfov: f64) -> Self {
        let f = width as f64 / (2.0 * (hfov / 2.0).tan());
        Self {
            width,
            height,
            fx: f,
            fy: f,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 16 || self.height < 16 {
            return Err(Error::InvalidArgument(format!(
                "image must be at least 16x16, got {}x{}",
                self.width, self.height
            )));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidArgument(
                "focal lengths must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    /// Minimum silhouette area for the in-frame test: 25 px at 64x64, scaled with area.
    pub fn min_silhouette_pixels(&self) -> usize {
        ((25.0 * self.pixels() as f64 / 4096.0).round() as usize).max(1)
    }

    /// Camera-frame ray direction through pixel `(u, v)` with unit `z`.
    #[inline]
    pub fn ray_dir(&self, u: usize, v: usize) -> [f64; 3] {
        [
            (u as f64 + 0.5 - self.cx) / self.fx,
            (v as f64 + 0.5 - self.cy) / self.fy,
            1.0,
        ]
    }
}
