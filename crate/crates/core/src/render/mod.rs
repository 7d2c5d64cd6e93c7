//! Depth rendering of posed meshes.

mod library;
mod mesh;
mod raster;
pub mod shapes;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, yaw_rotation, CameraIntrinsics, DepthImage, GeocentricFrame, Mask, NormalMap};

pub use library::{LibraryEntry, LibraryModel, ModelLibrary};
pub use mesh::{cuboid, unit_cube, TriangleMesh};
pub use raster::{Rasterizer, NEAR_PLANE, NO_LABEL};

/// Isotropic scale, yaw about world up and world translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    #[serde(rename = "s")]
    pub scale: f64,
    #[serde(rename = "theta")]
    pub yaw: f64,
    #[serde(rename = "t")]
    pub translation: Vector3<f64>,
}

impl Placement {
    /// Builds a placement with yaw wrapped into (−π, π].
    pub fn new(scale: f64, yaw: f64, translation: Vector3<f64>) -> Self {
        Self { scale, yaw: wrap_angle(yaw), translation }
    }

    pub fn identity() -> Self {
        Self::new(1.0, 0.0, Vector3::zeros())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::InvalidArgument(format!("placement scale {} must be positive", self.scale)));
        }
        if !self.yaw.is_finite() || !self.translation.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidArgument("placement must be finite".into()));
        }
        Ok(())
    }

    /// Model-frame point to world frame.
    #[inline]
    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        yaw_rotation(self.yaw) * (v * self.scale) + self.translation
    }

    pub fn transform_vertices(&self, mesh: &TriangleMesh) -> Vec<Vector3<f64>> {
        let r = yaw_rotation(self.yaw) * self.scale;
        mesh.vertices.iter().map(|v| r * v + self.translation).collect()
    }
}

/// Depth, coverage mask and optional normals of one rendered mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub depth: DepthImage,
    pub mask: Mask,
    pub normals: Option<NormalMap>,
}

/// One mesh instance in a multi-object scene.
#[derive(Debug, Clone, Copy)]
pub struct SceneItem<'a> {
    pub mesh: &'a TriangleMesh,
    pub placement: Placement,
}

/// Rendered scene: depth plus per-pixel item index (`NO_LABEL` for
/// background, `items.len()` for the floor).
#[derive(Debug, Clone, PartialEq)]
pub struct SceneRender {
    pub depth: DepthImage,
    pub labels: Vec<u32>,
    pub normals: Option<NormalMap>,
}

impl SceneRender {
    /// Pixels where item `i` is the visible surface.
    pub fn item_mask(&self, i: usize) -> Mask {
        let bits = self.labels.iter().map(|&l| l == i as u32).collect();
        Mask::from_bits(self.depth.width(), self.depth.height(), bits).expect("labels match image")
    }
}

/// Renders one posed mesh.
pub fn render(
    mesh: &TriangleMesh,
    p: &Placement,
    frame: &GeocentricFrame,
    k: &CameraIntrinsics,
    with_normals: bool,
) -> Result<RenderOutput> {
    let scene = render_scene(&[SceneItem { mesh, placement: *p }], false, frame, k, with_normals)?;
    let mask = scene.item_mask(0);
    Ok(RenderOutput { depth: scene.depth, mask, normals: scene.normals })
}

/// Floor quad half-width and far extent in meters.
const FLOOR_EXTENT: f64 = 40.0;

/// Renders several posed meshes, optionally over a horizontal floor at the
/// frame's floor height.
pub fn render_scene(
    items: &[SceneItem<'_>],
    with_floor: bool,
    frame: &GeocentricFrame,
    k: &CameraIntrinsics,
    with_normals: bool,
) -> Result<SceneRender> {
    k.validate()?;
    frame.validate()?;
    let to_cam = frame.camera_to_world().transpose();
    let mut r = Rasterizer::new(k, with_normals);
    for (label, item) in items.iter().enumerate() {
        item.placement.validate()?;
        let cam: Vec<Vector3<f64>> = item.placement.transform_vertices(item.mesh).iter().map(|v| to_cam * v).collect();
        for t in &item.mesh.triangles {
            r.draw([cam[t[0]], cam[t[1]], cam[t[2]]], label as u32);
        }
    }
    if with_floor {
        let y = frame.floor_height;
        let e = FLOOR_EXTENT;
        let corners =
            [Vector3::new(-e, y, -1.0), Vector3::new(e, y, -1.0), Vector3::new(e, y, e), Vector3::new(-e, y, e)].map(|c| to_cam * c);
        let label = items.len() as u32;
        r.draw([corners[0], corners[1], corners[2]], label);
        r.draw([corners[0], corners[2], corners[3]], label);
    }
    let (depth, labels, normals) = r.finish();
    Ok(SceneRender { depth, labels, normals })
}

/// Area of the top-view axis-aligned bounding rectangle of the scaled mesh
/// in its canonical orientation.
pub fn top_view_area(mesh: &TriangleMesh, s: f64) -> Result<f64> {
    if mesh.is_empty() {
        return Err(Error::InvalidArgument("empty mesh".into()));
    }
    let (lo, hi) = mesh.bounds();
    Ok((hi.x - lo.x) * (hi.z - lo.z) * s * s)
}

/// Isotropic scale giving the mesh the requested top-view area.
pub fn scale_to_area(mesh: &TriangleMesh, target_area: f64) -> Result<f64> {
    if !(target_area > 0.0 && target_area.is_finite()) {
        return Err(Error::InvalidArgument(format!("target area {target_area} must be positive")));
    }
    let base = top_view_area(mesh, 1.0)?;
    if !(base > 0.0) {
        return Err(Error::ZeroFootprint);
    }
    Ok((target_area / base).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::new(200.0, 200.0, 63.5, 47.5, 128, 96).unwrap()
    }

    fn level() -> GeocentricFrame {
        GeocentricFrame::pitched(0.0, 1.0)
    }

    /// Mesh whose world coordinates equal the given camera coordinates under `level()`.
    fn camera_space_triangle(pts: [Vector3<f64>; 3]) -> TriangleMesh {
        let f = level();
        TriangleMesh::new(pts.iter().map(|p| f.to_world(p)).collect(), vec![[0, 1, 2]], Vector3::z()).unwrap()
    }

    #[test]
    fn fronto_parallel_triangle_on_principal_ray() {
        let k = CameraIntrinsics::new(200.0, 200.0, 64.0, 48.0, 128, 96).unwrap();
        let mesh = camera_space_triangle([Vector3::new(-1.0, -1.0, 2.0), Vector3::new(1.0, -1.0, 2.0), Vector3::new(0.0, 1.0, 2.0)]);
        let out = render(&mesh, &Placement::identity(), &level(), &k, false).unwrap();
        assert!((out.depth.get(64, 48).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn z_buffer_keeps_nearest() {
        let k = cam();
        let f = level();
        let near = camera_space_triangle([Vector3::new(-1.0, -1.0, 1.0), Vector3::new(1.0, -1.0, 1.0), Vector3::new(0.0, 1.0, 1.0)]);
        let far = camera_space_triangle([Vector3::new(-3.0, -3.0, 3.0), Vector3::new(3.0, -3.0, 3.0), Vector3::new(0.0, 3.0, 3.0)]);
        for order in [[&near, &far], [&far, &near]] {
            let items: Vec<SceneItem> = order.iter().map(|m| SceneItem { mesh: m, placement: Placement::identity() }).collect();
            let s = render_scene(&items, false, &f, &k, false).unwrap();
            let mut both = 0;
            for i in 0..s.depth.len() {
                if let Some(z) = s.depth.at(i) {
                    // pixels inside the near triangle's footprint
                    if (z - 1.0).abs() < 1e-9 {
                        both += 1;
                    } else {
                        assert!((z - 3.0).abs() < 1e-9);
                    }
                }
            }
            assert!(both > 100);
        }
    }

    #[test]
    fn unit_cube_front_face_depth() {
        let k = cam();
        let cube = unit_cube();
        let p = Placement::new(1.0, 0.0, Vector3::new(0.0, 0.0, 4.0));
        let out = render(&cube, &p, &level(), &k, true).unwrap();
        assert!(out.mask.count() > 0);
        for i in out.mask.indices() {
            assert!((out.depth.at(i).unwrap() - 3.5).abs() < 1e-6);
        }
        let n = out.normals.unwrap();
        let i = out.mask.indices().next().unwrap();
        assert!((n.normals[i].unwrap() - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
    }

    /// Analytic ray–plane intersection depth at each covered pixel.
    #[test]
    fn depth_matches_ray_triangle_intersection() {
        let k = cam();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..30 {
            let pts: [Vector3<f64>; 3] =
                std::array::from_fn(|_| Vector3::new(rng.random_range(-1.5..1.5), rng.random_range(-1.0..1.0), rng.random_range(1.0..5.0)));
            let mesh = camera_space_triangle(pts);
            let out = render(&mesh, &Placement::identity(), &level(), &k, false).unwrap();
            let n = (pts[1] - pts[0]).cross(&(pts[2] - pts[0]));
            for i in out.mask.indices() {
                let ray = k.backproject_pixel((i % k.width) as f64, (i / k.width) as f64, 1.0);
                let t = n.dot(&pts[0]) / n.dot(&ray);
                assert!((out.depth.at(i).unwrap() - t).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn translation_along_axis_shifts_depth() {
        let k = cam();
        let f = level();
        let cube = unit_cube();
        let base = Placement::new(1.0, 0.0, Vector3::new(0.0, 0.0, 4.0));
        let moved = Placement::new(1.0, 0.0, Vector3::new(0.0, 0.0, 4.1));
        let a = render(&cube, &base, &f, &k, false).unwrap();
        let b = render(&cube, &moved, &f, &k, false).unwrap();
        let mut n = 0;
        for i in a.mask.indices().filter(|&i| b.mask.at(i)) {
            assert!((b.depth.at(i).unwrap() - a.depth.at(i).unwrap() - 0.1).abs() < 1e-6);
            n += 1;
        }
        assert!(n > 100);
    }

    #[test]
    fn fully_behind_camera_is_empty() {
        let k = cam();
        let out = render(&unit_cube(), &Placement::new(1.0, 0.0, Vector3::new(0.0, 0.0, -5.0)), &level(), &k, false).unwrap();
        assert!(out.mask.is_empty());
    }

    #[test]
    fn floor_renders_at_floor_height() {
        let k = cam();
        let f = GeocentricFrame::pitched(0.3, 1.2);
        let s = render_scene(&[], true, &f, &k, false).unwrap();
        assert!(s.depth.valid_count() > 0);
        for i in 0..s.depth.len() {
            if let Some(z) = s.depth.at(i) {
                let p = k.backproject_pixel((i % k.width) as f64, (i / k.width) as f64, z);
                assert!((f.to_world(&p).y + 1.2).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn top_view_areas() {
        let cube = unit_cube();
        assert!((top_view_area(&cube, 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((top_view_area(&cube, 2.0).unwrap() - 4.0).abs() < 1e-12);
        let l_shape = TriangleMesh::merged(&[
            cuboid(Vector3::new(0.0, 0.0, 0.0), Vector3::new(2.0, 0.3, 0.5)),
            cuboid(Vector3::new(0.0, 0.0, 0.5), Vector3::new(0.5, 1.0, 1.0)),
        ]);
        assert!((top_view_area(&l_shape, 1.0).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn scale_to_area_inverts_top_view_area() {
        let cube = unit_cube();
        assert!((scale_to_area(&cube, 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((scale_to_area(&cube, 4.0).unwrap() - 2.0).abs() < 1e-12);
        let mesh = shapes::sofa(2.0, 0.9, 0.8, 0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a = rng.random_range(0.05..10.0);
            let s = scale_to_area(&mesh, a).unwrap();
            assert!((top_view_area(&mesh, s).unwrap() - a).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_footprint_rejected() {
        let flat =
            TriangleMesh::new(vec![Vector3::zeros(), Vector3::y(), Vector3::new(0.0, 1.0, 1.0)], vec![[0, 1, 2]], Vector3::z()).unwrap();
        assert!(matches!(scale_to_area(&flat, 1.0), Err(Error::ZeroFootprint)));
    }
}
