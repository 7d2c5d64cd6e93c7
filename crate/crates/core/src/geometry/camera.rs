use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default disparity constant in meter·disparity units.
///
/// With d = C / z, a 20 cm depth error at 3 m is C·0.2/9 ≈ 7 units.
pub const DEFAULT_DISPARITY_CONSTANT: f64 = 315.0;

fn default_disparity_constant() -> f64 {
    DEFAULT_DISPARITY_CONSTANT
}

/// Pinhole intrinsics. Pixel `(u, v)` has its center at integer coordinates,
/// so the principal ray passes through pixel `(cx, cy)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    #[serde(default = "default_disparity_constant")]
    pub disparity_constant: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self { fx, fy, cx, cy, width, height, disparity_constant: DEFAULT_DISPARITY_CONSTANT };
        k.validate()?;
        Ok(k)
    }

    /// A Kinect-like 640x480 sensor.
    pub fn kinect() -> Self {
        Self { fx: 525.0, fy: 525.0, cx: 319.5, cy: 239.5, width: 640, height: 480, disparity_constant: DEFAULT_DISPARITY_CONSTANT }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidIntrinsics(m.to_string()));
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return bad("focal lengths must be positive");
        }
        if self.width == 0 || self.height == 0 {
            return bad("image size must be non-zero");
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return bad("cx outside image");
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return bad("cy outside image");
        }
        if !(self.disparity_constant > 0.0 && self.disparity_constant.is_finite()) {
            return bad("disparity constant must be positive");
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Camera-frame point for pixel `(u, v)` at depth `z`.
    #[inline]
    pub fn backproject_pixel(&self, u: f64, v: f64, z: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) * z / self.fx, (v - self.cy) * z / self.fy, z)
    }

    /// Continuous pixel coordinates of a camera-frame point; `None` behind the camera.
    #[inline]
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    /// Disparity `C / z`; `None` for non-positive or non-finite depth.
    #[inline]
    pub fn disparity(&self, z: f64) -> Option<f64> {
        (z > 0.0 && z.is_finite()).then(|| self.disparity_constant / z)
    }
}
