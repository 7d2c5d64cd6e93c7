use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::yaw_rotation;

/// Triangle mesh in a Y-up model frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[usize; 3]>,
    /// Canonical front direction in the model frame.
    pub front: Vector3<f64>,
}

impl TriangleMesh {
    /// Validates indices and coordinates and drops zero-area triangles.
    pub fn new(vertices: Vec<Vector3<f64>>, triangles: Vec<[usize; 3]>, front: Vector3<f64>) -> Result<Self> {
        if vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidArgument("mesh has non-finite vertex".into()));
        }
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i >= vertices.len())) {
            return Err(Error::InvalidArgument(format!("triangle {t:?} indexes past {} vertices", vertices.len())));
        }
        let triangles = triangles
            .into_iter()
            .filter(|t| {
                let (a, b, c) = (vertices[t[0]], vertices[t[1]], vertices[t[2]]);
                (b - a).cross(&(c - a)).norm_squared() > 0.0
            })
            .collect();
        Ok(Self { vertices, triangles, front })
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Componentwise min and max over vertices.
    pub fn bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    /// Rotates about Y so `front` points along +Z and centers the top-view
    /// bounding rectangle on the origin.
    pub fn canonicalized(&self) -> Self {
        let f = Vector3::new(self.front.x, 0.0, self.front.z);
        let yaw = if f.norm() > 1e-12 { f.x.atan2(f.z) } else { 0.0 };
        // yaw_rotation(yaw) maps +Z to (sin yaw, 0, cos yaw) = f, so undo it.
        let r = yaw_rotation(-yaw);
        let mut out =
            Self { vertices: self.vertices.iter().map(|v| r * v).collect(), triangles: self.triangles.clone(), front: Vector3::z() };
        let (lo, hi) = out.bounds();
        let shift = Vector3::new((lo.x + hi.x) / 2.0, 0.0, (lo.z + hi.z) / 2.0);
        for v in &mut out.vertices {
            *v -= shift;
        }
        out
    }

    /// Concatenates meshes, keeping the first mesh's front.
    pub fn merged(parts: &[TriangleMesh]) -> Self {
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for p in parts {
            let base = vertices.len();
            vertices.extend_from_slice(&p.vertices);
            triangles.extend(p.triangles.iter().map(|t| [t[0] + base, t[1] + base, t[2] + base]));
        }
        let front = parts.first().map_or(Vector3::z(), |p| p.front);
        Self { vertices, triangles, front }
    }

    /// Parses the `v`/`f` subset of Wavefront OBJ, fan-triangulating polygons.
    pub fn parse_obj(text: &str, front: Vector3<f64>) -> std::result::Result<Self, String> {
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let mut it = line.split_whitespace();
            match it.next() {
                Some("v") => {
                    let c: Vec<f64> = it
                        .take(3)
                        .map(|s| s.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| format!("line {}: {e}", ln + 1))?;
                    if c.len() != 3 {
                        return Err(format!("line {}: vertex needs 3 coordinates", ln + 1));
                    }
                    vertices.push(Vector3::new(c[0], c[1], c[2]));
                }
                Some("f") => {
                    let mut idx = Vec::new();
                    for tok in it {
                        let head = tok.split('/').next().unwrap_or("");
                        let i: i64 = head.parse().map_err(|e| format!("line {}: {e}", ln + 1))?;
                        let resolved = match i {
                            i if i > 0 => i - 1,
                            i if i < 0 => vertices.len() as i64 + i,
                            _ => return Err(format!("line {}: face index 0", ln + 1)),
                        };
                        if resolved < 0 || resolved as usize >= vertices.len() {
                            return Err(format!("line {}: face index {i} out of range", ln + 1));
                        }
                        idx.push(resolved as usize);
                    }
                    if idx.len() < 3 {
                        return Err(format!("line {}: face needs 3 vertices", ln + 1));
                    }
                    for j in 1..idx.len() - 1 {
                        triangles.push([idx[0], idx[j], idx[j + 1]]);
                    }
                }
                _ => {}
            }
        }
        Self::new(vertices, triangles, front).map_err(|e| e.to_string())
    }

    pub fn load_obj(path: &Path, front: Vector3<f64>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_obj(&text, front).map_err(|m| Error::format(path, m))
    }

    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
        s
    }

    pub fn save_obj(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_obj()).map_err(|e| Error::io(path, e))
    }
}

/// Axis-aligned box mesh spanning `lo..hi`.
pub fn cuboid(lo: Vector3<f64>, hi: Vector3<f64>) -> TriangleMesh {
    let v = |x: bool, y: bool, z: bool| Vector3::new(if x { hi.x } else { lo.x }, if y { hi.y } else { lo.y }, if z { hi.z } else { lo.z });
    let vertices = vec![
        v(false, false, false),
        v(true, false, false),
        v(true, true, false),
        v(false, true, false),
        v(false, false, true),
        v(true, false, true),
        v(true, true, true),
        v(false, true, true),
    ];
    let quads = [[0, 3, 2, 1], [4, 5, 6, 7], [0, 1, 5, 4], [3, 7, 6, 2], [0, 4, 7, 3], [1, 2, 6, 5]];
    let triangles = quads.iter().flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]]).collect();
    TriangleMesh { vertices, triangles, front: Vector3::z() }
}

/// Unit cube centered on the origin.
pub fn unit_cube() -> TriangleMesh {
    cuboid(Vector3::repeat(-0.5), Vector3::repeat(0.5))
}
