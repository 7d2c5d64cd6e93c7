use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{backproject, world_up, yaw_rotation, CameraIntrinsics, DepthImage, GeocentricFrame, Mask};
use crate::render::{Placement, Rasterizer, TriangleMesh, NEAR_PLANE};

use super::kdtree::KdTree;
use super::rigid::constrained_rigid_fit;
use super::Hypothesis;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcpParams {
    /// Render iterations; each re-renders the model at the current placement.
    pub n_iter: usize,
    /// Correspond → refit iterations against one rendered point set.
    pub inner_iter: usize,
    /// Fraction of correspondences, by count, dropped as worst matches.
    pub trim_fraction: f64,
    /// Render iterations run after the trimmed ones converge, keeping every
    /// match within `polish_gate` meters instead of a fixed fraction.
    ///
    /// Count-based trimming also drops the silhouette points that are the
    /// only evidence against sliding along surfaces seen head-on; a
    /// distance gate keeps the nearest of them while still ignoring distant
    /// segmentation overshoot. Zero disables the stage.
    pub polish_iter: usize,
    pub polish_gate: f64,
    pub yaw_tolerance: f64,
    pub translation_tolerance: f64,
    /// Use every `stride`-th pixel row and column for both point sets.
    pub stride: usize,
    /// The model is rendered at this many samples per observed pixel along
    /// each axis. Odd factors keep the observed pixel centers on the grid.
    pub model_supersample: usize,
    /// Keep the vertical translation of the initialization, so a model
    /// placed on the floor stays there. Yaw updates never change height.
    pub keep_on_floor: bool,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            n_iter: 50,
            inner_iter: 20,
            trim_fraction: 0.2,
            polish_iter: 10,
            polish_gate: 0.05,
            yaw_tolerance: 1e-4,
            translation_tolerance: 1e-4,
            stride: 1,
            model_supersample: 3,
            keep_on_floor: true,
        }
    }
}

impl IcpParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_iter < 1
            || self.inner_iter < 1
            || !(0.0..1.0).contains(&self.trim_fraction)
            || !(self.polish_gate > 0.0)
            || self.stride < 1
            || self.model_supersample < 1
        {
            return Err(crate::Error::InvalidArgument(format!("invalid ICP parameters {self:?}")));
        }
        Ok(())
    }
}

/// A hypothesis after refinement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitCandidate {
    pub hypothesis: Hypothesis,
    pub placement: Placement,
    /// Trimmed RMS correspondence distance (meters) before each refit.
    pub residual_trace: Vec<f64>,
    /// Trimmed RMS distance at the final placement; infinite when failed.
    pub residual: f64,
    pub iterations: usize,
    pub failed: bool,
}

/// Correspondences of one ICP iteration after trimming.
pub(crate) struct Matches {
    /// (model point, object point)
    pub pairs: Vec<(Vector3<f64>, Vector3<f64>)>,
    pub rms: f64,
}

fn on_grid(idx: usize, width: usize, stride: usize) -> bool {
    stride == 1 || ((idx % width).is_multiple_of(stride) && (idx / width).is_multiple_of(stride))
}

/// Intrinsics sampling each pixel of `k` on an `f`×`f` subgrid whose
/// center sample (for odd `f`) coincides with the original pixel center.
fn supersampled(k: &CameraIntrinsics, f: usize) -> CameraIntrinsics {
    let s = f as f64;
    CameraIntrinsics {
        fx: k.fx * s,
        fy: k.fy * s,
        cx: (k.cx + 0.5) * s - 0.5,
        cy: (k.cy + 0.5) * s - 0.5,
        width: k.width * f,
        height: k.height * f,
        disparity_constant: k.disparity_constant,
    }
}

/// Pixel window `(u0, v0, width, height)` covering the projection of
/// camera-frame vertices; the whole image when a vertex is near or behind
/// the camera, `None` when the projection misses the image.
fn screen_window(cam: &[Vector3<f64>], k: &CameraIntrinsics) -> Option<(usize, usize, usize, usize)> {
    if cam.iter().any(|p| p.z <= NEAR_PLANE) {
        return Some((0, 0, k.width, k.height));
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in cam {
        let (u, v) = k.project(p)?;
        lo = [lo[0].min(u), lo[1].min(v)];
        hi = [hi[0].max(u), hi[1].max(v)];
    }
    let u0 = lo[0].floor().max(0.0);
    let v0 = lo[1].floor().max(0.0);
    let u1 = hi[0].ceil().min(k.width as f64 - 1.0);
    let v1 = hi[1].ceil().min(k.height as f64 - 1.0);
    if u0 > u1 || v0 > v1 {
        return None;
    }
    Some((u0 as usize, v0 as usize, (u1 - u0) as usize + 1, (v1 - v0) as usize + 1))
}

/// World-frame points of the model rendered at `p`.
///
/// Only the window around the model's projection is rasterized; pixel
/// positions are those of the full (supersampled) image.
fn model_points(
    mesh: &TriangleMesh,
    p: &Placement,
    frame: &GeocentricFrame,
    k: &CameraIntrinsics,
    params: &IcpParams,
) -> Result<Vec<Vector3<f64>>> {
    p.validate()?;
    let k = supersampled(k, params.model_supersample);
    let to_world = frame.camera_to_world();
    let to_cam = to_world.transpose();
    let cam: Vec<Vector3<f64>> = p.transform_vertices(mesh).iter().map(|v| to_cam * v).collect();
    let Some((u0, v0, w, h)) = screen_window(&cam, &k) else {
        return Ok(Vec::new());
    };
    let sub = CameraIntrinsics { cx: k.cx - u0 as f64, cy: k.cy - v0 as f64, width: w, height: h, ..k };
    let mut r = Rasterizer::new(&sub, false);
    for t in &mesh.triangles {
        r.draw([cam[t[0]], cam[t[1]], cam[t[2]]], 0);
    }
    let (depth, labels, _) = r.finish();
    let stride = params.stride;
    let mut out = Vec::new();
    for v in 0..h {
        if (v0 + v) % stride != 0 {
            continue;
        }
        for u in 0..w {
            if (u0 + u) % stride != 0 || labels[v * w + u] != 0 {
                continue;
            }
            let z = depth.get(u, v).expect("labelled pixels carry depth");
            out.push(to_world * sub.backproject_pixel(u as f64, v as f64, z));
        }
    }
    Ok(out)
}

/// Pairs each object point with its nearest model point and drops the
/// `trim` fraction with the largest distances (ties by object index).
pub(crate) fn correspond(object: &[Vector3<f64>], model: &[Vector3<f64>], trim: f64) -> Matches {
    correspond_moved(object, model, &KdTree::new(model), 0.0, &Vector3::zeros(), trim, None)
}

/// As [`correspond`], with the model points moved by yaw `theta` about the
/// world up axis followed by translation `t`. The tree indexes the unmoved
/// model points.
///
/// With a `gate`, the returned pairs are instead all matches within that
/// distance (the trimmed ones if fewer than three pass); `rms` is always
/// the trimmed value.
fn correspond_moved(
    object: &[Vector3<f64>],
    model: &[Vector3<f64>],
    tree: &KdTree<'_>,
    theta: f64,
    t: &Vector3<f64>,
    trim: f64,
    gate: Option<f64>,
) -> Matches {
    let r = yaw_rotation(theta);
    let r_inv = r.transpose();
    let mut m: Vec<(f64, usize, usize)> = object
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let (j, d2) = tree.nearest(&(r_inv * (q - t))).expect("model points non-empty");
            (d2, i, j)
        })
        .collect();
    m.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let keep = (m.len() - (trim * m.len() as f64).floor() as usize).max(1);
    let rms = (m[..keep].iter().map(|x| x.0).sum::<f64>() / keep as f64).sqrt();
    let used = match gate {
        Some(g) => m.partition_point(|x| x.0 <= g * g),
        None => keep,
    };
    let used = if used < 3 { keep } else { used };
    let pairs = m[..used].iter().map(|&(_, i, j)| (r * model[j] + t, object[i])).collect();
    Matches { pairs, rms }
}

/// Refines a hypothesis by render-based ICP with yaw-only rotation about gravity.
///
/// Each iteration renders the model at the current placement, then runs a
/// short ICP against that rendered point set: every masked observed point is
/// paired with its closest rendered point, the worst matches are discarded and
/// the gravity-constrained rigid update is solved in world coordinates.
/// A distance-gated polishing stage follows (see [`IcpParams::polish_iter`]).
/// Scale stays fixed.
#[allow(clippy::too_many_arguments)]
pub fn icp_align(
    depth: &DepthImage,
    mask: &Mask,
    mesh: &TriangleMesh,
    hypothesis: &Hypothesis,
    frame: &GeocentricFrame,
    k: &CameraIntrinsics,
    params: &IcpParams,
) -> Result<FitCandidate> {
    params.validate()?;
    let mut grid = mask.clone();
    for i in 0..grid.bits().len() {
        if grid.at(i) && !on_grid(i, k.width, params.stride) {
            grid.set_at(i, false);
        }
    }
    let object = backproject(depth, k, Some(&grid), Some(frame))?.points;
    if object.is_empty() {
        return Err(crate::Error::EmptyMask);
    }
    let g = world_up();
    let mut placement = Placement::new(hypothesis.scale, hypothesis.yaw0, hypothesis.t0);
    let failed = |placement, trace, iterations| FitCandidate {
        hypothesis: hypothesis.clone(),
        placement,
        residual_trace: trace,
        residual: f64::INFINITY,
        iterations,
        failed: true,
    };

    let mut trace = Vec::new();
    let mut iterations = 0;
    for (n_iter, gate) in [(params.n_iter, None), (params.polish_iter, Some(params.polish_gate))] {
        for _ in 0..n_iter {
            let model = model_points(mesh, &placement, frame, k, params)?;
            if model.is_empty() {
                return Ok(failed(placement, trace, iterations));
            }
            let tree = KdTree::new(&model);
            // rigid motion of the rendered points accumulated by the inner loop
            let (mut theta, mut t) = (0.0, Vector3::zeros());
            for inner in 0..params.inner_iter {
                let m = correspond_moved(&object, &model, &tree, theta, &t, params.trim_fraction, gate);
                if inner == 0 {
                    trace.push(m.rms);
                }
                let (dtheta, mut dt) = constrained_rigid_fit(&m.pairs, &g);
                if params.keep_on_floor {
                    dt.y = 0.0;
                }
                theta += dtheta;
                t = yaw_rotation(dtheta) * t + dt;
                if dtheta.abs() < params.yaw_tolerance && dt.norm() < params.translation_tolerance {
                    break;
                }
            }
            placement = Placement::new(placement.scale, placement.yaw + theta, yaw_rotation(theta) * placement.translation + t);
            iterations += 1;
            if theta.abs() < params.yaw_tolerance && t.norm() < params.translation_tolerance {
                break;
            }
        }
    }

    let model = model_points(mesh, &placement, frame, k, params)?;
    if model.is_empty() {
        return Ok(failed(placement, trace, iterations));
    }
    let residual = correspond(&object, &model, params.trim_fraction).rms;
    Ok(FitCandidate { hypothesis: hypothesis.clone(), placement, residual_trace: trace, residual, iterations, failed: false })
}
