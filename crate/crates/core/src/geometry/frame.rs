use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gravity-aligned world frame attached to the camera.
///
/// `gravity` is the unit up direction in camera coordinates and
/// `floor_height` is the floor position along it (negative when the floor is
/// below the camera center). World coordinates share the camera origin and
/// use Y up, Z along the horizontal projection of the optical axis, and
/// X = Y × Z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeocentricFrame {
    pub gravity: [f64; 3],
    pub floor_height: f64,
}

impl GeocentricFrame {
    pub fn new(gravity: Vector3<f64>, floor_height: f64) -> Result<Self> {
        let f = Self { gravity: gravity.into(), floor_height };
        f.validate()?;
        Ok(f)
    }

    /// Camera pitched down by `pitch` radians, mounted `height` meters above the floor.
    pub fn pitched(pitch: f64, height: f64) -> Self {
        Self { gravity: [0.0, -pitch.cos(), -pitch.sin()], floor_height: -height }
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.gravity_vec();
        if !g.iter().all(|c| c.is_finite()) || (g.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidFrame("gravity must be a unit vector".into()));
        }
        if !self.floor_height.is_finite() {
            return Err(Error::InvalidFrame("floor height must be finite".into()));
        }
        let fwd = Vector3::z() - g * g.z;
        if fwd.norm() < 1e-6 {
            return Err(Error::InvalidFrame("optical axis parallel to gravity".into()));
        }
        Ok(())
    }

    pub fn gravity_vec(&self) -> Vector3<f64> {
        Vector3::from(self.gravity)
    }

    /// Rows are the world X, Y (up), Z axes expressed in camera coordinates.
    pub fn camera_to_world(&self) -> Matrix3<f64> {
        let y = self.gravity_vec();
        let z = (Vector3::z() - y * y.z).normalize();
        let x = y.cross(&z);
        Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()])
    }

    /// The three geocentric axes in camera coordinates.
    pub fn axes(&self) -> [Vector3<f64>; 3] {
        let m = self.camera_to_world();
        [m.row(0).transpose(), m.row(1).transpose(), m.row(2).transpose()]
    }

    pub fn to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.camera_to_world() * p
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.camera_to_world().transpose() * p
    }
}

/// World up axis.
pub fn world_up() -> Vector3<f64> {
    Vector3::y()
}

/// Rotation by `theta` radians about unit axis `g`.
pub fn rotation_about(theta: f64, g: &Vector3<f64>) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Unit::new_unchecked(*g), theta).into_inner()
}

/// Rotation about the world up axis.
pub fn yaw_rotation(theta: f64) -> Matrix3<f64> {
    let (s, c) = theta.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// Wraps an angle into (−π, π].
pub fn wrap_angle(theta: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut a = theta.rem_euclid(TAU);
    if a > PI {
        a -= TAU;
    }
    a
}
