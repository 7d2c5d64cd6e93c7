use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};

use super::{CameraIntrinsics, DepthImage, GeocentricFrame};

/// Window parameters for plane-fit normal estimation.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NormalParams {
    /// Half side of the square window, in pixels.
    pub window_radius: usize,
    /// Neighbors whose depth differs from the center by more than this
    /// fraction of the center depth are excluded from the fit.
    pub max_relative_jump: f64,
    pub min_neighbors: usize,
}

impl Default for NormalParams {
    fn default() -> Self {
        Self { window_radius: 3, max_relative_jump: 0.05, min_neighbors: 6 }
    }
}

/// Per-pixel unit normals in camera coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap {
    pub width: usize,
    pub height: usize,
    pub normals: Vec<Option<Vector3<f64>>>,
}

impl NormalMap {
    pub fn get(&self, u: usize, v: usize) -> Option<Vector3<f64>> {
        self.normals[v * self.width + u]
    }
}

/// Least-squares plane normals over a square window, oriented toward the camera.
pub fn estimate_normals(depth: &DepthImage, k: &CameraIntrinsics, params: &NormalParams) -> Result<NormalMap> {
    if params.window_radius < 1 {
        return Err(Error::InvalidArgument("window radius must be at least 1".into()));
    }
    depth.check_dims(k.width, k.height)?;
    let (w, h) = (depth.width(), depth.height());
    let r = params.window_radius as i64;

    let normals: Vec<Option<Vector3<f64>>> = (0..w * h)
        .into_par_iter()
        .map(|idx| {
            let zc = depth.at(idx)?;
            let (u, v) = ((idx % w) as i64, (idx / w) as i64);
            let center = k.backproject_pixel(u as f64, v as f64, zc);
            let mut pts: Vec<Vector3<f64>> = Vec::with_capacity(((2 * r + 1) * (2 * r + 1)) as usize);
            for y in (v - r).max(0)..=(v + r).min(h as i64 - 1) {
                for x in (u - r).max(0)..=(u + r).min(w as i64 - 1) {
                    if let Some(z) = depth.get(x as usize, y as usize) {
                        if (z - zc).abs() <= params.max_relative_jump * zc {
                            pts.push(k.backproject_pixel(x as f64, y as f64, z));
                        }
                    }
                }
            }
            if pts.len() < params.min_neighbors.max(3) {
                return None;
            }
            plane_normal(&pts).map(|n| if n.dot(&center) > 0.0 { -n } else { n })
        })
        .collect();

    Ok(NormalMap { width: w, height: h, normals })
}

/// Normal of the total-least-squares plane through `pts`; `None` when the
/// neighborhood has rank < 2.
fn plane_normal(pts: &[Vector3<f64>]) -> Option<Vector3<f64>> {
    let n = pts.len() as f64;
    let mean = pts.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let mut cov = Matrix3::zeros();
    for p in pts {
        let d = p - mean;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (mid, big) = (eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
    if !(big > 0.0) || mid <= 1e-10 * big {
        return None;
    }
    let nrm = eig.eigenvectors.column(order[0]).into_owned();
    let len = nrm.norm();
    (len > 0.0).then(|| nrm / len)
}

/// Byte offset so that 90° lands on 128.
pub const ANGLE_OFFSET: f64 = 38.0;

/// Three-channel image of angles (degrees, shifted by [`ANGLE_OFFSET`])
/// between surface normals and the geocentric axes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormalImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[u8; 3]>,
    pub valid: Vec<bool>,
}

impl NormalImage {
    pub fn invalid(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![[0; 3]; width * height], valid: vec![false; width * height] }
    }

    pub fn constant(width: usize, height: usize, value: [u8; 3]) -> Self {
        Self { width, height, data: vec![value; width * height], valid: vec![true; width * height] }
    }

    pub fn get(&self, u: usize, v: usize) -> Option<[u8; 3]> {
        let i = v * self.width + u;
        self.valid[i].then(|| self.data[i])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Angle in degrees to its stored byte.
pub fn encode_angle(deg: f64) -> u8 {
    (deg + ANGLE_OFFSET).clamp(0.0, 255.0).round() as u8
}

/// Stored byte back to degrees.
pub fn decode_angle(byte: u8) -> f64 {
    byte as f64 - ANGLE_OFFSET
}

/// Encodes camera-frame normals as angles to the geocentric X, up and Z axes.
pub fn encode_normal_image(normals: &NormalMap, frame: &GeocentricFrame) -> Result<NormalImage> {
    frame.validate()?;
    let axes = frame.axes();
    let mut img = NormalImage::invalid(normals.width, normals.height);
    for (i, n) in normals.normals.iter().enumerate() {
        if let Some(n) = n {
            let mut px = [0u8; 3];
            for (c, e) in axes.iter().enumerate() {
                px[c] = encode_angle(n.dot(e).clamp(-1.0, 1.0).acos().to_degrees());
            }
            img.data[i] = px;
            img.valid[i] = true;
        }
    }
    Ok(img)
}
