//! Hypothesis generation over scale, model and coarse pose, and the
//! gravity-constrained render-and-ICP refinement.

mod icp;
mod kdtree;
mod rigid;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::geometry::{backproject, CameraIntrinsics, DepthImage, GeocentricFrame, Mask};
use crate::render::{scale_to_area, ModelLibrary, TriangleMesh};
use crate::synthgen::CategoryStats;

pub use icp::{icp_align, FitCandidate, IcpParams};
pub use kdtree::{KdTree, BRUTE_FORCE_BELOW};
pub use rigid::{constrained_rigid_fit, rigid_objective};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub n_scale: usize,
    pub n_models: usize,
    /// Pose hypotheses taken from the ranked pose bins.
    pub top_k: usize,
    pub icp: IcpParams,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { n_scale: 10, n_models: 5, top_k: 2, icp: IcpParams::default() }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_scale < 1 || self.n_models < 1 || self.top_k < 1 {
            return Err(Error::InvalidArgument("search counts must be at least 1".into()));
        }
        self.icp.validate()
    }
}

/// One (model, scale, initial pose) starting point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub model: String,
    pub scale: f64,
    pub yaw0: f64,
    pub t0: Vector3<f64>,
}

/// Stratified samples of N(μ, σ) at quantiles (i + 0.5)/n.
///
/// Non-positive areas are clamped to 1% of the mean.
pub fn sample_scales(mu_area: f64, sigma_area: f64, n: usize) -> Result<Vec<f64>> {
    if n < 1 || !(sigma_area >= 0.0) || !mu_area.is_finite() {
        return Err(Error::InvalidArgument(format!("sample_scales(μ={mu_area}, σ={sigma_area}, n={n})")));
    }
    if sigma_area == 0.0 {
        return Ok(vec![mu_area; n]);
    }
    let normal = Normal::new(mu_area, sigma_area).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok((0..n)
        .map(|i| {
            let a = normal.inverse_cdf((i as f64 + 0.5) / n as f64);
            if a > 0.0 {
                a
            } else {
                0.01 * mu_area
            }
        })
        .collect())
}

/// Median with the two middle values averaged for even counts.
pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 { values[n / 2] } else { (values[n / 2 - 1] + values[n / 2]) / 2.0 })
}

/// Initial translation: horizontal components are the medians of the
/// masked world points, the vertical one rests the posed model on the floor.
pub fn init_translation(
    mask: &Mask,
    depth: &DepthImage,
    k: &CameraIntrinsics,
    frame: &GeocentricFrame,
    mesh: &TriangleMesh,
    scale: f64,
    yaw0: f64,
) -> Result<Vector3<f64>> {
    let pts = backproject(depth, k, Some(mask), Some(frame))?.points;
    if pts.is_empty() {
        return Err(Error::EmptyMask);
    }
    let mut xs: Vec<f64> = pts.iter().map(|p| p.x).collect();
    let mut zs: Vec<f64> = pts.iter().map(|p| p.z).collect();
    let (x, z) = (median(&mut xs).unwrap(), median(&mut zs).unwrap());
    Ok(Vector3::new(x, resting_height(mesh, scale, yaw0, frame), z))
}

/// Vertical translation putting the lowest posed vertex on the floor.
pub fn resting_height(mesh: &TriangleMesh, scale: f64, yaw: f64, frame: &GeocentricFrame) -> f64 {
    let r = crate::geometry::yaw_rotation(yaw) * scale;
    let lowest = mesh.vertices.iter().map(|v| (r * v).y).fold(f64::INFINITY, f64::min);
    frame.floor_height - lowest
}

/// A segmented object to place.
#[derive(Debug, Clone)]
pub struct Detection {
    pub category: String,
    pub score: f64,
    pub mask: Mask,
}

/// Cross product of pose, scale and model choices, each with its initial
/// translation. `pose_yaws` is ranked best first; the first `top_k` are used.
#[allow(clippy::too_many_arguments)]
pub fn generate_hypotheses(
    detection: &Detection,
    pose_yaws: &[f64],
    depth: &DepthImage,
    k: &CameraIntrinsics,
    frame: &GeocentricFrame,
    stats: &CategoryStats,
    library: &ModelLibrary,
    cfg: &SearchConfig,
) -> Result<Vec<Hypothesis>> {
    cfg.validate()?;
    let models = library.models(&detection.category)?;
    let models = &models[..cfg.n_models.min(models.len())];
    let areas = sample_scales(stats.mu_area, stats.sigma_area, cfg.n_scale)?;
    if pose_yaws.is_empty() {
        return Err(Error::InvalidArgument("no pose hypotheses".into()));
    }
    let mut out = Vec::with_capacity(cfg.top_k * areas.len() * models.len());
    for &yaw0 in pose_yaws.iter().take(cfg.top_k) {
        for &area in &areas {
            for m in models {
                let scale = scale_to_area(&m.mesh, area)?;
                let t0 = init_translation(&detection.mask, depth, k, frame, &m.mesh, scale, yaw0)?;
                out.push(Hypothesis { model: m.name.clone(), scale, yaw0: crate::geometry::wrap_angle(yaw0), t0 });
            }
        }
    }
    Ok(out)
}

/// Runs ICP for every hypothesis in parallel; output order follows input.
pub fn align_hypotheses(
    hypotheses: &[Hypothesis],
    depth: &DepthImage,
    mask: &Mask,
    library: &ModelLibrary,
    frame: &GeocentricFrame,
    k: &CameraIntrinsics,
    params: &IcpParams,
) -> Result<Vec<FitCandidate>> {
    hypotheses
        .par_iter()
        .map(|h| {
            let mesh = &library.find(&h.model)?.mesh;
            icp_align(depth, mask, mesh, h, frame, k, params)
        })
        .collect()
}

#[cfg(test)]
mod tests;
