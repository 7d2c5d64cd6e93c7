//! Z-buffer triangle rasterizer over camera-frame triangles.

use nalgebra::Vector3;

use crate::geometry::{CameraIntrinsics, DepthImage, NormalMap};

/// Triangles closer than this are clipped away.
pub const NEAR_PLANE: f64 = 1e-3;

/// Framebuffer owned by a single render call.
pub struct Rasterizer<'a> {
    k: &'a CameraIntrinsics,
    depth: Vec<f64>,
    label: Vec<u32>,
    normal: Option<Vec<Vector3<f64>>>,
}

/// Label of pixels no triangle covered.
pub const NO_LABEL: u32 = u32::MAX;

impl<'a> Rasterizer<'a> {
    pub fn new(k: &'a CameraIntrinsics, with_normals: bool) -> Self {
        let n = k.pixel_count();
        Self { k, depth: vec![f64::INFINITY; n], label: vec![NO_LABEL; n], normal: with_normals.then(|| vec![Vector3::zeros(); n]) }
    }

    /// Draws one camera-frame triangle tagged with `label`.
    pub fn draw(&mut self, tri: [Vector3<f64>; 3], label: u32) {
        let face = (tri[1] - tri[0]).cross(&(tri[2] - tri[0]));
        let len = face.norm();
        if len == 0.0 {
            return;
        }
        let centroid = (tri[0] + tri[1] + tri[2]) / 3.0;
        let face = if face.dot(&centroid) > 0.0 { -face / len } else { face / len };

        let poly = clip_near(&tri);
        if poly.len() < 3 {
            return;
        }
        let screen: Vec<[f64; 3]> =
            poly.iter().map(|p| [self.k.fx * p.x / p.z + self.k.cx, self.k.fy * p.y / p.z + self.k.cy, 1.0 / p.z]).collect();
        for j in 1..screen.len() - 1 {
            self.fill([screen[0], screen[j], screen[j + 1]], label, &face);
        }
    }

    fn fill(&mut self, mut s: [[f64; 3]; 3], label: u32, face: &Vector3<f64>) {
        let edge = |a: &[f64; 3], b: &[f64; 3], px: f64, py: f64| (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0]);
        let mut area = edge(&s[0], &s[1], s[2][0], s[2][1]);
        if area == 0.0 || !area.is_finite() {
            return;
        }
        if area < 0.0 {
            s.swap(1, 2);
            area = -area;
        }
        let (w, h) = (self.k.width as i64, self.k.height as i64);
        let min_x = s.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min).ceil().max(0.0);
        let max_x = s.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max).floor().min((w - 1) as f64);
        let min_y = s.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min).ceil().max(0.0);
        let max_y = s.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max).floor().min((h - 1) as f64);
        if min_x > max_x || min_y > max_y {
            return;
        }
        // An edge owns the pixels lying exactly on it when its direction is
        // "upward" or "rightward"; the neighbor sharing the edge traverses it
        // the other way, so every boundary pixel is drawn exactly once.
        let owns = |a: &[f64; 3], b: &[f64; 3]| {
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            dy < 0.0 || (dy == 0.0 && dx > 0.0)
        };
        let own = [owns(&s[1], &s[2]), owns(&s[2], &s[0]), owns(&s[0], &s[1])];

        for y in min_y as i64..=max_y as i64 {
            let py = y as f64;
            for x in min_x as i64..=max_x as i64 {
                let px = x as f64;
                let e = [edge(&s[1], &s[2], px, py), edge(&s[2], &s[0], px, py), edge(&s[0], &s[1], px, py)];
                if (0..3).any(|i| e[i] < 0.0 || (e[i] == 0.0 && !own[i])) {
                    continue;
                }
                let inv_z = (e[0] * s[0][2] + e[1] * s[1][2] + e[2] * s[2][2]) / area;
                if !(inv_z > 0.0) {
                    continue;
                }
                let z = 1.0 / inv_z;
                let idx = (y * w + x) as usize;
                if z < self.depth[idx] {
                    self.depth[idx] = z;
                    self.label[idx] = label;
                    if let Some(n) = &mut self.normal {
                        n[idx] = *face;
                    }
                }
            }
        }
    }

    /// Depth image, per-pixel labels and (when requested) per-pixel normals.
    pub fn finish(self) -> (DepthImage, Vec<u32>, Option<NormalMap>) {
        let (w, h) = (self.k.width, self.k.height);
        let values = self.depth.iter().map(|&z| if z.is_finite() { z } else { 0.0 }).collect();
        let depth = DepthImage::from_meters(w, h, values).expect("framebuffer matches intrinsics");
        let normals = self.normal.map(|n| NormalMap {
            width: w,
            height: h,
            normals: n.into_iter().zip(&self.label).map(|(v, &l)| (l != NO_LABEL).then_some(v)).collect(),
        });
        (depth, self.label, normals)
    }
}

/// Clips a triangle against `z >= NEAR_PLANE` (Sutherland–Hodgman, one plane).
fn clip_near(tri: &[Vector3<f64>; 3]) -> Vec<Vector3<f64>> {
    let mut out = Vec::with_capacity(4);
    for i in 0..3 {
        let a = tri[i];
        let b = tri[(i + 1) % 3];
        let a_in = a.z >= NEAR_PLANE;
        let b_in = b.z >= NEAR_PLANE;
        if a_in {
            out.push(a);
        }
        if a_in != b_in {
            let t = (NEAR_PLANE - a.z) / (b.z - a.z);
            let mut p = a + (b - a) * t;
            p.z = NEAR_PLANE;
            out.push(p);
        }
    }
    out
}
