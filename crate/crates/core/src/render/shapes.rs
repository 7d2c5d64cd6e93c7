//! Procedural furniture meshes assembled from boxes, some of them tilted.
//!
//! Every mesh is canonical: Y up, resting on y = 0, front facing +Z and
//! centered in the top view. `variant` in [0, 1] perturbs proportions so a
//! category can hold several distinct models.

use nalgebra::{Rotation3, Unit, Vector3};

use super::mesh::{cuboid, TriangleMesh};

fn b(x0: f64, y0: f64, z0: f64, x1: f64, y1: f64, z1: f64) -> TriangleMesh {
    cuboid(Vector3::new(x0, y0, z0), Vector3::new(x1, y1, z1))
}

fn assemble(parts: Vec<TriangleMesh>) -> TriangleMesh {
    let mut m = TriangleMesh::merged(&parts).canonicalized();
    let floor = m.bounds().0.y;
    for v in &mut m.vertices {
        v.y -= floor;
    }
    m
}

/// Rotates `m` about the axis `axis` through `pivot` by `angle` radians.
fn tilted(mut m: TriangleMesh, axis: Vector3<f64>, angle: f64, pivot: Vector3<f64>) -> TriangleMesh {
    let r = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle);
    for v in &mut m.vertices {
        *v = pivot + r * (*v - pivot);
    }
    m
}

/// Four legs hanging from `height`; `splay` tilts their feet outward (radians).
fn legs(hw: f64, hd: f64, height: f64, t: f64, splay: f64) -> Vec<TriangleMesh> {
    let mut out = Vec::new();
    for (sx, sz) in [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)] {
        let (x, z) = (sx * (hw - t / 2.0), sz * (hd - t / 2.0));
        let leg = b(x - t / 2.0, 0.0, z - t / 2.0, x + t / 2.0, height, z + t / 2.0);
        let top = Vector3::new(x, height, z);
        let leg = tilted(leg, Vector3::z(), sx * splay, top);
        out.push(tilted(leg, Vector3::x(), -sz * splay, top));
    }
    out
}

/// Chair with a reclined backrest on the −Z side and splayed legs.
pub fn chair(width: f64, depth: f64, height: f64, variant: f64) -> TriangleMesh {
    let (hw, hd) = (width / 2.0, depth / 2.0);
    let seat_h = height * (0.45 + 0.1 * variant);
    let seat_t = 0.05;
    let back_t = 0.05 + 0.04 * variant;
    let recline = (8.0 + 8.0 * variant).to_radians();
    let mut parts = legs(hw, hd, seat_h - seat_t, 0.04, 0.06);
    parts.push(b(-hw, seat_h - seat_t, -hd, hw, seat_h, hd));
    let back = b(-hw, seat_h, -hd, hw, height, -hd + back_t);
    parts.push(tilted(back, Vector3::x(), -recline, Vector3::new(0.0, seat_h, -hd + back_t)));
    if variant > 0.5 {
        // armrests
        let arm_h = seat_h + 0.2;
        parts.push(b(-hw, seat_h, -hd, -hw + 0.05, arm_h, hd * 0.6));
        parts.push(b(hw - 0.05, seat_h, -hd, hw, arm_h, hd * 0.6));
    }
    assemble(parts)
}

/// Table with an apron shelf offset toward −Z.
pub fn table(width: f64, depth: f64, height: f64, variant: f64) -> TriangleMesh {
    let (hw, hd) = (width / 2.0, depth / 2.0);
    let top_t = 0.04 + 0.03 * variant;
    let mut parts = legs(hw, hd, height - top_t, 0.05, 0.0);
    parts.push(b(-hw, height - top_t, -hd, hw, height, hd));
    parts.push(b(-hw + 0.05, 0.15, -hd + 0.05, hw - 0.05, 0.18, -hd * (0.2 * variant)));
    assemble(parts)
}

/// Sofa with a reclined back on −Z and arms on both sides.
pub fn sofa(width: f64, depth: f64, height: f64, variant: f64) -> TriangleMesh {
    let (hw, hd) = (width / 2.0, depth / 2.0);
    let seat_h = height * (0.45 + 0.05 * variant);
    let arm_w = 0.12 + 0.08 * variant;
    let back_d = 0.18 + 0.07 * variant;
    let back = b(-hw, seat_h, -hd, hw, height, -hd + back_d);
    let recline = (10.0 + 6.0 * variant).to_radians();
    let parts = vec![
        b(-hw, 0.0, -hd, hw, seat_h, hd),
        tilted(back, Vector3::x(), -recline, Vector3::new(0.0, seat_h, -hd + back_d)),
        b(-hw, seat_h, -hd + back_d, -hw + arm_w, seat_h + 0.2, hd),
        b(hw - arm_w, seat_h, -hd + back_d, hw, seat_h + 0.2, hd),
    ];
    assemble(parts)
}

/// Bed with a headboard on −Z.
pub fn bed(width: f64, length: f64, height: f64, variant: f64) -> TriangleMesh {
    let (hw, hl) = (width / 2.0, length / 2.0);
    let mattress = height * (0.45 + 0.1 * variant);
    let mut parts = vec![b(-hw, 0.0, -hl, hw, mattress, hl), b(-hw, 0.0, -hl - 0.06, hw, height, -hl)];
    if variant > 0.5 {
        parts.push(b(-hw, 0.0, hl, hw, mattress + 0.15, hl + 0.05));
    }
    assemble(parts)
}

/// Desk with a drawer pedestal on the +X side and a modesty panel on −Z.
pub fn desk(width: f64, depth: f64, height: f64, variant: f64) -> TriangleMesh {
    let (hw, hd) = (width / 2.0, depth / 2.0);
    let top_t = 0.04;
    let ped_w = width * (0.3 + 0.1 * variant);
    let parts = vec![
        b(-hw, height - top_t, -hd, hw, height, hd),
        b(hw - ped_w, 0.0, -hd, hw, height - top_t, hd),
        b(-hw, 0.0, -hd, -hw + 0.04, height - top_t, hd),
        b(-hw + 0.04, 0.3, -hd, hw - ped_w, height - top_t, -hd + 0.03),
    ];
    assemble(parts)
}

/// Closed, smoothly bumpy ellipsoid with semi-axes `radii`, resting on y = 0.
///
/// The radius along each direction is scaled by
/// `1 + Σ a·sin(m·lon + φ)·sin(n·lat + ψ)` over the `(a, m, n, φ, ψ)` terms,
/// so surfaces curve everywhere and no direction slides freely.
pub fn bumpy_ellipsoid(radii: Vector3<f64>, bumps: &[(f64, f64, f64, f64, f64)], rings: usize) -> TriangleMesh {
    let rings = rings.max(3);
    let segs = 2 * rings;
    let radius =
        |lon: f64, lat: f64| 1.0 + bumps.iter().map(|&(a, m, n, phi, psi)| a * (m * lon + phi).sin() * (n * lat + psi).sin()).sum::<f64>();
    let point = |lon: f64, lat: f64| {
        let r = radius(lon, lat);
        Vector3::new(radii.x * r * lat.cos() * lon.cos(), radii.y * r * lat.sin(), radii.z * r * lat.cos() * lon.sin())
    };
    let half_pi = std::f64::consts::FRAC_PI_2;
    let mut vertices = vec![point(0.0, -half_pi)];
    for i in 1..rings {
        let lat = -half_pi + std::f64::consts::PI * i as f64 / rings as f64;
        for j in 0..segs {
            vertices.push(point(std::f64::consts::TAU * j as f64 / segs as f64, lat));
        }
    }
    vertices.push(point(0.0, half_pi));
    let top = vertices.len() - 1;
    let at = |i: usize, j: usize| 1 + (i - 1) * segs + j % segs;
    let mut triangles = Vec::new();
    for j in 0..segs {
        triangles.push([0, at(1, j + 1), at(1, j)]);
        triangles.push([top, at(rings - 1, j), at(rings - 1, j + 1)]);
    }
    for i in 1..rings - 1 {
        for j in 0..segs {
            triangles.push([at(i, j), at(i, j + 1), at(i + 1, j + 1)]);
            triangles.push([at(i, j), at(i + 1, j + 1), at(i + 1, j)]);
        }
    }
    let mesh = TriangleMesh::new(vertices, triangles, Vector3::z()).expect("indices in range");
    assemble(vec![mesh])
}

/// A named procedural model.
pub struct ShapeSpec {
    pub category: &'static str,
    pub name: String,
    pub mesh: TriangleMesh,
}

/// `per_category` distinct models for each demo category.
pub fn demo_library(per_category: usize) -> Vec<ShapeSpec> {
    let mut out = Vec::new();
    for i in 0..per_category {
        let v = if per_category > 1 { i as f64 / (per_category - 1) as f64 } else { 0.0 };
        out.push(ShapeSpec {
            category: "chair",
            name: format!("chair_{i}"),
            mesh: chair(0.45 + 0.1 * v, 0.5 - 0.05 * v, 0.85 + 0.15 * v, v),
        });
        out.push(ShapeSpec { category: "sofa", name: format!("sofa_{i}"), mesh: sofa(1.8 + 0.4 * v, 0.9 - 0.1 * v, 0.8 + 0.1 * v, v) });
        out.push(ShapeSpec { category: "bed", name: format!("bed_{i}"), mesh: bed(1.4 + 0.4 * v, 2.0, 0.9 + 0.3 * v, v) });
        out.push(ShapeSpec { category: "desk", name: format!("desk_{i}"), mesh: desk(1.2 + 0.3 * v, 0.6 + 0.1 * v, 0.75, v) });
        out.push(ShapeSpec {
            category: "table",
            name: format!("table_{i}"),
            mesh: table(1.0 + 0.5 * v, 0.7 + 0.2 * v, 0.72 + 0.05 * v, v),
        });
    }
    out
}
