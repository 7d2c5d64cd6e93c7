//! Gravity-aligned 3D boxes: fitting to segments and models, and 3D IoU.
//!
//! The top view is the world (x, z) plane. A box with yaw ψ has local
//! horizontal axes `u = (cos ψ, −sin ψ)` and `w = (sin ψ, cos ψ)`, the images
//! of the x and z axes under [`yaw_rotation`].

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{backproject, wrap_angle, CameraIntrinsics, DepthImage, GeocentricFrame, Mask};
use crate::render::{Placement, TriangleMesh};

/// Smallest half-extent a fitted box is given, half of 1 µm.
pub const MIN_HALF_EXTENT: f64 = 5e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox3D {
    pub yaw: f64,
    pub center: Vector3<f64>,
    /// Along local x, up, and local z.
    pub half_extents: Vector3<f64>,
}

/// Top-view local axes `(u, w)` for yaw `psi`.
fn axes(psi: f64) -> (Vector2<f64>, Vector2<f64>) {
    let (s, c) = psi.sin_cos();
    (Vector2::new(c, -s), Vector2::new(s, c))
}

impl OrientedBox3D {
    pub fn validate(&self) -> Result<()> {
        let ok = self.yaw.is_finite()
            && self.center.iter().all(|v| v.is_finite())
            && self.half_extents.iter().all(|&h| h > 0.0 && h.is_finite());
        if !ok {
            return Err(Error::EmptyBox);
        }
        Ok(())
    }

    pub fn volume(&self) -> f64 {
        8.0 * self.half_extents.product()
    }

    pub fn bottom(&self) -> f64 {
        self.center.y - self.half_extents.y
    }

    pub fn top(&self) -> f64 {
        self.center.y + self.half_extents.y
    }

    /// Top-view corners in counter-clockwise order of the (x, z) plane.
    pub fn footprint(&self) -> [Vector2<f64>; 4] {
        let (u, w) = axes(self.yaw);
        let c = Vector2::new(self.center.x, self.center.z);
        let (a, b) = (u * self.half_extents.x, w * self.half_extents.z);
        let mut pts = [c - a - b, c + a - b, c + a + b, c - a + b];
        if signed_area(&pts) < 0.0 {
            pts.reverse();
        }
        pts
    }

    /// Whether `p` lies inside, allowing `tol` meters of slack.
    pub fn contains(&self, p: &Vector3<f64>, tol: f64) -> bool {
        let (u, w) = axes(self.yaw);
        let d = Vector2::new(p.x - self.center.x, p.z - self.center.z);
        d.dot(&u).abs() <= self.half_extents.x + tol
            && d.dot(&w).abs() <= self.half_extents.z + tol
            && (p.y - self.center.y).abs() <= self.half_extents.y + tol
    }
}

/// Minimum-area enclosing rectangle of planar points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect2 {
    /// In [0, π/2).
    pub yaw: f64,
    pub center: Vector2<f64>,
    pub half_extents: Vector2<f64>,
}

impl Rect2 {
    pub fn area(&self) -> f64 {
        4.0 * self.half_extents.x * self.half_extents.y
    }
}

fn cross(o: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Convex hull by the monotone chain, counter-clockwise, collinear points dropped.
pub fn convex_hull(points: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
    let mut p: Vec<Vector2<f64>> = points.to_vec();
    p.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    p.dedup();
    if p.len() < 3 {
        return p;
    }
    let mut hull: Vec<Vector2<f64>> = Vec::with_capacity(2 * p.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Vector2<f64>>> = if pass == 0 { Box::new(p.iter()) } else { Box::new(p.iter().rev()) };
        for q in iter {
            while hull.len() >= start + 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], q) <= 0.0 {
                hull.pop();
            }
            hull.push(*q);
        }
        hull.pop();
    }
    hull
}

/// Bounding rectangle of `points` in the frame of yaw `psi`.
fn rect_at(points: &[Vector2<f64>], psi: f64) -> Rect2 {
    let (u, w) = axes(psi);
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in points {
        let (a, b) = (p.dot(&u), p.dot(&w));
        lo = [lo[0].min(a), lo[1].min(b)];
        hi = [hi[0].max(a), hi[1].max(b)];
    }
    let mid = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
    Rect2 { yaw: psi, center: u * mid[0] + w * mid[1], half_extents: Vector2::new((hi[0] - lo[0]) / 2.0, (hi[1] - lo[1]) / 2.0) }
}

/// Area of the bounding rectangle of `points` at yaw `psi`, by direct projection.
pub fn rect_area_at(points: &[Vector2<f64>], psi: f64) -> f64 {
    rect_at(points, psi).area()
}

/// Smallest-area enclosing rectangle, yaw in [0, π/2).
///
/// An optimal rectangle has a side collinear with a hull edge, so only
/// the hull edge directions are tried. Ties keep the smaller yaw. Degenerate
/// (collinear or single point) input is widened to [`MIN_HALF_EXTENT`].
pub fn min_area_rect(points: &[Vector2<f64>]) -> Result<Rect2> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("no points".into()));
    }
    let hull = convex_hull(points);
    let mut candidates: Vec<f64> = vec![0.0];
    for i in 0..hull.len() {
        let d = hull[(i + 1) % hull.len()] - hull[i];
        if d.norm() > 0.0 {
            // u = (cos ψ, −sin ψ) parallel to d
            candidates.push((-d.y).atan2(d.x).rem_euclid(FRAC_PI_2));
        }
    }
    candidates.iter_mut().for_each(|c| {
        if *c >= FRAC_PI_2 {
            *c = 0.0;
        }
    });
    candidates.sort_by(f64::total_cmp);
    let mut best: Option<Rect2> = None;
    for &psi in &candidates {
        let r = rect_at(&hull, psi);
        if best.is_none_or(|b| r.area() < b.area() * (1.0 - 1e-12)) {
            best = Some(r);
        }
    }
    let mut r = best.expect("at least one candidate");
    r.half_extents = r.half_extents.map(|h| h.max(MIN_HALF_EXTENT));
    Ok(r)
}

/// Percentile `p` ∈ [0, 100] with linear interpolation between order statistics.
pub fn percentile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() || !(0.0..=100.0).contains(&p) {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = p / 100.0 * (v.len() - 1) as f64;
    let (i, f) = (rank.floor() as usize, rank.fract());
    Some(if i + 1 < v.len() { v[i] + f * (v[i + 1] - v[i]) } else { v[i] })
}

/// Gravity-aligned box around world-frame points resting on the floor.
///
/// Points outside the [δ, 100 − δ] percentiles of world x or z are set aside
/// before searching the minimum-area yaw; the box then spans the same
/// percentiles of all points along its own axes. It reaches from the floor
/// to the (100 − δ) height percentile.
pub fn box_from_points(points: &[Vector3<f64>], floor_height: f64, delta: f64) -> Result<OrientedBox3D> {
    if points.is_empty() {
        return Err(Error::EmptyMask);
    }
    if !(0.0..50.0).contains(&delta) {
        return Err(Error::InvalidArgument(format!("percentile δ = {delta} outside [0, 50)")));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.x).collect();
    let zs: Vec<f64> = points.iter().map(|p| p.z).collect();
    let (x0, x1) = (percentile(&xs, delta).unwrap(), percentile(&xs, 100.0 - delta).unwrap());
    let (z0, z1) = (percentile(&zs, delta).unwrap(), percentile(&zs, 100.0 - delta).unwrap());
    let kept: Vec<Vector2<f64>> =
        points.iter().filter(|p| (x0..=x1).contains(&p.x) && (z0..=z1).contains(&p.z)).map(|p| Vector2::new(p.x, p.z)).collect();
    let yaw = if kept.is_empty() { 0.0 } else { min_area_rect(&kept)?.yaw };

    let (u, w) = axes(yaw);
    let a: Vec<f64> = points.iter().map(|p| Vector2::new(p.x, p.z).dot(&u)).collect();
    let b: Vec<f64> = points.iter().map(|p| Vector2::new(p.x, p.z).dot(&w)).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.y).collect();
    let (a0, a1) = (percentile(&a, delta).unwrap(), percentile(&a, 100.0 - delta).unwrap());
    let (b0, b1) = (percentile(&b, delta).unwrap(), percentile(&b, 100.0 - delta).unwrap());
    let top = percentile(&ys, 100.0 - delta).unwrap().max(floor_height + 2.0 * MIN_HALF_EXTENT);
    let c2 = u * (a0 + a1) / 2.0 + w * (b0 + b1) / 2.0;
    Ok(OrientedBox3D {
        yaw,
        center: Vector3::new(c2.x, (floor_height + top) / 2.0, c2.y),
        half_extents: Vector3::new(
            ((a1 - a0) / 2.0).max(MIN_HALF_EXTENT),
            (top - floor_height) / 2.0,
            ((b1 - b0) / 2.0).max(MIN_HALF_EXTENT),
        ),
    })
}

/// Box fitted to the backprojected pixels of a segment.
pub fn box_from_segment(
    mask: &Mask,
    depth: &DepthImage,
    k: &CameraIntrinsics,
    frame: &GeocentricFrame,
    delta: f64,
) -> Result<OrientedBox3D> {
    let cloud = backproject(depth, k, Some(mask), Some(frame))?;
    box_from_points(&cloud.points, frame.floor_height, delta)
}

/// Tight box around the placed mesh, aligned with the placement's yaw.
pub fn box_from_model(mesh: &TriangleMesh, p: &Placement) -> Result<OrientedBox3D> {
    p.validate()?;
    if mesh.is_empty() {
        return Err(Error::InvalidArgument("empty mesh".into()));
    }
    let (lo, hi) = mesh.bounds();
    let mid = (lo + hi) / 2.0;
    let half = (hi - lo) / 2.0 * p.scale;
    Ok(OrientedBox3D { yaw: wrap_angle(p.yaw), center: p.apply(&mid), half_extents: half.map(|h| h.max(MIN_HALF_EXTENT)) })
}

fn signed_area(poly: &[Vector2<f64>]) -> f64 {
    let n = poly.len();
    (0..n).map(|i| poly[i].perp(&poly[(i + 1) % n])).sum::<f64>() / 2.0
}

/// Intersection of a polygon with a convex counter-clockwise polygon.
pub fn clip_polygon(subject: &[Vector2<f64>], clip: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let inside = |p: &Vector2<f64>| cross(&a, &b, p) >= 0.0;
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let (cur, prev) = (input[j], input[(j + input.len() - 1) % input.len()]);
            let hit = || {
                let (dp, dc) = (cross(&a, &b, &prev), cross(&a, &b, &cur));
                prev + (cur - prev) * (dp / (dp - dc))
            };
            match (inside(&prev), inside(&cur)) {
                (true, true) => out.push(cur),
                (true, false) => out.push(hit()),
                (false, true) => {
                    out.push(hit());
                    out.push(cur);
                }
                (false, false) => {}
            }
        }
    }
    out
}

/// Volume IoU of gravity-aligned boxes.
pub fn box_iou3d(a: &OrientedBox3D, b: &OrientedBox3D) -> f64 {
    let dy = a.top().min(b.top()) - a.bottom().max(b.bottom());
    if dy <= 0.0 {
        return 0.0;
    }
    let poly = clip_polygon(&a.footprint(), &b.footprint());
    let area = if poly.len() < 3 { 0.0 } else { signed_area(&poly).abs() };
    let inter = area * dy;
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Yaw difference folded into [0, π].
pub fn yaw_distance(a: f64, b: f64) -> f64 {
    wrap_angle(a - b).abs().min(PI)
}

#[cfg(test)]
mod tests;
