use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::geometry::yaw_rotation;
use crate::render::{cuboid, render_scene, unit_cube, SceneItem};
use crate::rng::substream;

fn v2(x: f64, z: f64) -> Vector2<f64> {
    Vector2::new(x, z)
}

/// Top-view image of (x, z) under the yaw rotation.
fn rotate2(p: &Vector2<f64>, psi: f64) -> Vector2<f64> {
    let q = yaw_rotation(psi) * Vector3::new(p.x, 0.0, p.y);
    v2(q.x, q.z)
}

/// Bounding-rectangle area after undoing yaw `psi`, computed independently.
fn oracle_area(points: &[Vector2<f64>], psi: f64) -> f64 {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in points {
        let q = rotate2(p, -psi);
        lo = [lo[0].min(q.x), lo[1].min(q.y)];
        hi = [hi[0].max(q.x), hi[1].max(q.y)];
    }
    (hi[0] - lo[0]) * (hi[1] - lo[1])
}

/// Dense 0.01° grid over [0°, 90°), with every near-best grid minimum
/// refined by golden-section search on the brute-force area.
fn grid_oracle(points: &[Vector2<f64>]) -> (f64, f64) {
    let n = 9000;
    let step = FRAC_PI_2 / n as f64;
    let areas: Vec<f64> = (0..n).map(|i| oracle_area(points, i as f64 * step)).collect();
    let grid_min = areas.iter().copied().fold(f64::INFINITY, f64::min);
    let mut best = grid_min;
    for i in 0..n {
        let (l, r) = (areas[(i + n - 1) % n], areas[(i + 1) % n]);
        if areas[i] > grid_min * (1.0 + 1e-3) || areas[i] > l || areas[i] > r {
            continue;
        }
        let (mut a, mut b) = ((i as f64 - 1.0) * step, (i as f64 + 1.0) * step);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let (c, d) = (b - g * (b - a), a + g * (b - a));
            if oracle_area(points, c) < oracle_area(points, d) {
                b = d;
            } else {
                a = c;
            }
        }
        best = best.min(oracle_area(points, (a + b) / 2.0));
    }
    (best, grid_min)
}

#[test]
fn hull_of_square_with_interior() {
    let pts = vec![v2(0.0, 0.0), v2(1.0, 0.0), v2(1.0, 1.0), v2(0.0, 1.0), v2(0.5, 0.5), v2(0.5, 0.0)];
    let h = convex_hull(&pts);
    assert_eq!(h.len(), 4);
    assert!(signed_area(&h) > 0.0);
    assert_relative_eq!(signed_area(&h), 1.0);
}

#[test]
fn axis_aligned_rectangle() {
    let pts = [v2(-1.0, -0.5), v2(1.0, -0.5), v2(1.0, 0.5), v2(-1.0, 0.5)];
    let r = min_area_rect(&pts).unwrap();
    assert_eq!(r.yaw, 0.0);
    assert_relative_eq!(r.half_extents, Vector2::new(1.0, 0.5), epsilon = 1e-12);
    assert_relative_eq!(r.center, Vector2::zeros(), epsilon = 1e-12);
}

#[test]
fn rotated_rectangle_recovers_yaw() {
    let psi = 30f64.to_radians();
    let c = v2(3.0, -2.0);
    let pts: Vec<_> = [v2(-1.0, -0.5), v2(1.0, -0.5), v2(1.0, 0.5), v2(-1.0, 0.5)].iter().map(|p| rotate2(p, psi) + c).collect();
    let r = min_area_rect(&pts).unwrap();
    assert!((r.yaw - psi).abs() < 1e-6, "{}", r.yaw.to_degrees());
    assert_relative_eq!(r.half_extents, Vector2::new(1.0, 0.5), epsilon = 1e-9);
    assert_relative_eq!(r.center, c, epsilon = 1e-9);
}

#[test]
fn square_ties_prefer_smaller_yaw() {
    let psi = 0.3;
    let pts: Vec<_> = [v2(-1.0, -1.0), v2(1.0, -1.0), v2(1.0, 1.0), v2(-1.0, 1.0)].iter().map(|p| rotate2(p, psi)).collect();
    let r = min_area_rect(&pts).unwrap();
    assert!((r.yaw - psi).abs() < 1e-9);
}

#[test]
fn matches_dense_grid_oracle() {
    for seed in 0..100u64 {
        let mut rng = substream(seed, "rect-oracle", &[]);
        let sx = rng.random_range(0.5..3.0);
        let pts: Vec<_> = (0..50).map(|_| v2(rng.random_range(-sx..sx), rng.random_range(-1.0..1.0))).collect();
        let r = min_area_rect(&pts).unwrap();
        let (oracle, grid_min) = grid_oracle(&pts);
        assert!(((r.area() - oracle) / oracle).abs() < 1e-9, "seed {seed}: {} vs {oracle}", r.area());
        assert!(r.area() <= grid_min * (1.0 + 1e-12));
    }
}

#[test]
fn degenerate_inputs_are_widened() {
    let r = min_area_rect(&[v2(1.0, 2.0)]).unwrap();
    assert_eq!(r.half_extents, Vector2::new(MIN_HALF_EXTENT, MIN_HALF_EXTENT));
    let line: Vec<_> = (0..5).map(|i| v2(i as f64, 2.0 * i as f64)).collect();
    let r = min_area_rect(&line).unwrap();
    assert!(r.half_extents.min() == MIN_HALF_EXTENT);
    assert_relative_eq!(r.half_extents.max(), 80f64.sqrt() / 2.0, epsilon = 1e-9);
    assert!(min_area_rect(&[]).is_err());
}

#[test]
fn percentile_interpolates() {
    let v = [4.0, 1.0, 3.0, 2.0];
    assert_eq!(percentile(&v, 0.0), Some(1.0));
    assert_eq!(percentile(&v, 100.0), Some(4.0));
    assert_eq!(percentile(&v, 50.0), Some(2.5));
    assert!((percentile(&v, 10.0).unwrap() - 1.3).abs() < 1e-12);
    assert_eq!(percentile(&[], 50.0), None);
}

/// Points on the five exposed faces of a box resting on the floor.
fn cuboid_surface(b: &OrientedBox3D, n: usize, seed: u64) -> Vec<Vector3<f64>> {
    let mut rng = substream(seed, "cuboid-surface", &[]);
    let h = b.half_extents;
    let r = yaw_rotation(b.yaw);
    (0..n)
        .map(|i| {
            let (s, t) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let local = match i % 5 {
                0 => Vector3::new(h.x * s, h.y, h.z * t),
                1 => Vector3::new(h.x, h.y * s, h.z * t),
                2 => Vector3::new(-h.x, h.y * s, h.z * t),
                3 => Vector3::new(h.x * s, h.y * t, h.z),
                _ => Vector3::new(h.x * s, h.y * t, -h.z),
            };
            r * local + b.center
        })
        .collect()
}

fn resting_box(yaw: f64) -> OrientedBox3D {
    OrientedBox3D { yaw, center: Vector3::new(0.7, -1.2 + 0.4, 2.5), half_extents: Vector3::new(0.6, 0.4, 0.3) }
}

fn assert_box_close(a: &OrientedBox3D, b: &OrientedBox3D, tol: f64) {
    assert!(yaw_distance(a.yaw, b.yaw) < tol || (yaw_distance(a.yaw, b.yaw) - PI).abs() < tol, "yaw {} vs {}", a.yaw, b.yaw);
    assert_relative_eq!(a.center, b.center, epsilon = tol);
    assert_relative_eq!(a.half_extents, b.half_extents, epsilon = tol);
}

#[test]
fn exact_fit_without_trimming() {
    // yaw within [0, π/2) so the fitted local axes coincide with the box's
    let truth = resting_box(0.5);
    let pts = cuboid_surface(&truth, 2000, 1);
    let b = box_from_points(&pts, -1.2, 0.0).unwrap();
    assert_box_close(&b, &truth, 1e-6);
    assert_eq!(b.bottom(), -1.2);
    assert!(pts.iter().all(|p| b.contains(p, 1e-9)));
}

#[test]
fn outliers_are_trimmed() {
    let truth = resting_box(1.1);
    let clean = cuboid_surface(&truth, 3000, 2);
    let clean_box = box_from_points(&clean, -1.2, 0.0).unwrap();
    let mut rng = substream(3, "outliers", &[]);
    let mut noisy = clean.clone();
    for _ in 0..30 {
        let dir = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(0.0..1.0), rng.random_range(-1.0..1.0));
        noisy.push(truth.center + dir * 10.0);
    }
    let b = box_from_points(&noisy, -1.2, 2.0).unwrap();
    assert!((b.volume() / clean_box.volume() - 1.0).abs() < 0.02, "{} vs {}", b.volume(), clean_box.volume());
    assert_eq!(b.bottom(), -1.2);
    // points inside the percentile ranges are inside the box
    let inside = noisy.iter().filter(|p| b.contains(p, 1e-9)).count();
    assert!(inside >= clean.len() * 9 / 10);
}

#[test]
fn segment_box_of_rendered_cuboid() {
    let k = CameraIntrinsics::new(262.5, 262.5, 159.5, 119.5, 320, 240).unwrap();
    let frame = GeocentricFrame::pitched(0.35, 1.4);
    let mesh = cuboid(Vector3::new(-0.5, 0.0, -0.3), Vector3::new(0.5, 0.8, 0.3));
    let p = Placement::new(1.0, 0.4, Vector3::new(0.2, frame.floor_height, 2.8));
    let scene = render_scene(&[SceneItem { mesh: &mesh, placement: p }], true, &frame, &k, false).unwrap();
    let b = box_from_segment(&scene.item_mask(0), &scene.depth, &k, &frame, 0.0).unwrap();
    let truth = box_from_model(&mesh, &p).unwrap();
    assert_eq!(b.bottom(), frame.floor_height);
    assert!(box_iou3d(&b, &truth) > 0.9, "{}", box_iou3d(&b, &truth));
    assert!(matches!(box_from_segment(&Mask::new(320, 240), &scene.depth, &k, &frame, 2.0), Err(Error::EmptyMask)));
}

#[test]
fn model_box_basics() {
    let cube = unit_cube();
    let (lo, hi) = cube.bounds();
    let b = box_from_model(&cube, &Placement::identity()).unwrap();
    assert_relative_eq!(b.half_extents, Vector3::repeat(0.5), epsilon = 1e-12);
    assert_relative_eq!(b.center, (lo + hi) / 2.0, epsilon = 1e-12);
    let b2 = box_from_model(&cube, &Placement::new(2.0, 0.0, Vector3::zeros())).unwrap();
    assert_relative_eq!(b2.half_extents, b.half_extents * 2.0, epsilon = 1e-12);
    let t = Vector3::new(1.0, -2.0, 3.5);
    let b3 = box_from_model(&cube, &Placement::new(1.0, 0.0, t)).unwrap();
    assert_relative_eq!(b3.center, b.center + t, epsilon = 1e-12);
    let b4 = box_from_model(&cube, &Placement::new(1.0, 4.0, t)).unwrap();
    assert_eq!(b4.yaw, wrap_angle(4.0));
    for v in Placement::new(1.0, 4.0, t).transform_vertices(&cube) {
        assert!(b4.contains(&v, 1e-9));
    }
}

#[test]
fn iou_hand_cases() {
    let a = OrientedBox3D { yaw: 0.0, center: Vector3::new(0.0, 0.5, 0.0), half_extents: Vector3::repeat(0.5) };
    assert_relative_eq!(box_iou3d(&a, &a), 1.0, epsilon = 1e-12);
    let far = OrientedBox3D { center: Vector3::new(3.0, 0.5, 0.0), ..a };
    assert_eq!(box_iou3d(&a, &far), 0.0);
    let above = OrientedBox3D { center: Vector3::new(0.0, 2.0, 0.0), ..a };
    assert_eq!(box_iou3d(&a, &above), 0.0);
    let shifted = OrientedBox3D { center: Vector3::new(0.5, 0.5, 0.0), ..a };
    assert_relative_eq!(box_iou3d(&a, &shifted), 1.0 / 3.0, epsilon = 1e-12);
    let shifted_z = OrientedBox3D { center: Vector3::new(0.0, 0.5, 0.5), ..a };
    assert_relative_eq!(box_iou3d(&a, &shifted_z), 1.0 / 3.0, epsilon = 1e-12);
}

#[test]
fn iou_matches_monte_carlo() {
    let a = OrientedBox3D { yaw: 0.3, center: Vector3::new(0.0, 0.4, 0.0), half_extents: Vector3::new(0.8, 0.4, 0.3) };
    let b = OrientedBox3D { yaw: -0.5, center: Vector3::new(0.3, 0.5, 0.1), half_extents: Vector3::new(0.5, 0.5, 0.5) };
    let mut rng = substream(7, "mc", &[]);
    let n = 400_000;
    let (lo, hi) = (Vector3::new(-1.5, -0.5, -1.5), Vector3::new(1.5, 1.5, 1.5));
    let (mut ia, mut ib, mut both) = (0usize, 0usize, 0usize);
    for _ in 0..n {
        let p = Vector3::new(rng.random_range(lo.x..hi.x), rng.random_range(lo.y..hi.y), rng.random_range(lo.z..hi.z));
        let (x, y) = (a.contains(&p, 0.0), b.contains(&p, 0.0));
        ia += x as usize;
        ib += y as usize;
        both += (x && y) as usize;
    }
    let mc = both as f64 / (ia + ib - both) as f64;
    let got = box_iou3d(&a, &b);
    // binomial standard error of the estimate is below 0.002 here
    assert!((got - mc).abs() < 0.01, "{got} vs {mc}");
    let vol = (hi - lo).product();
    assert!((ia as f64 / n as f64 * vol - a.volume()).abs() < 0.02);
}

#[test]
fn json_format() {
    let b = resting_box(0.25);
    let v = serde_json::to_value(b).unwrap();
    assert_eq!(v["yaw"], 0.25);
    assert_eq!(v["center"].as_array().unwrap().len(), 3);
    assert_eq!(v["half_extents"].as_array().unwrap().len(), 3);
    let back: OrientedBox3D = serde_json::from_value(v).unwrap();
    assert_eq!(back, b);
}

fn arb_box() -> impl Strategy<Value = OrientedBox3D> {
    (-3.1f64..3.1, -1.0f64..1.0, 0.0f64..1.0, -1.0f64..1.0, 0.1f64..1.0, 0.1f64..1.0, 0.1f64..1.0)
        .prop_map(|(yaw, x, y, z, hx, hy, hz)| OrientedBox3D { yaw, center: Vector3::new(x, y, z), half_extents: Vector3::new(hx, hy, hz) })
}

proptest! {
    #[test]
    fn iou_symmetric_and_rigid_invariant(a in arb_box(), b in arb_box(), psi in -3.1f64..3.1, t in prop::array::uniform3(-5.0f64..5.0)) {
        let ab = box_iou3d(&a, &b);
        prop_assert!((ab - box_iou3d(&b, &a)).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&ab));
        let t = Vector3::from(t);
        let r = yaw_rotation(psi);
        let mv = |x: &OrientedBox3D| OrientedBox3D { yaw: x.yaw + psi, center: r * x.center + t, ..*x };
        prop_assert!((ab - box_iou3d(&mv(&a), &mv(&b))).abs() < 1e-9);
    }

    #[test]
    fn min_rect_beats_axis_aligned(pts in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..40)) {
        let pts: Vec<_> = pts.into_iter().map(|(x, z)| v2(x, z)).collect();
        let r = min_area_rect(&pts).unwrap();
        prop_assert!(r.area() <= oracle_area(&pts, 0.0).max(4.0 * MIN_HALF_EXTENT * MIN_HALF_EXTENT) * (1.0 + 1e-12) + 1e-12);
        prop_assert!((0.0..FRAC_PI_2).contains(&r.yaw));
        let b = OrientedBox3D { yaw: r.yaw, center: Vector3::new(r.center.x, 0.0, r.center.y), half_extents: Vector3::new(r.half_extents.x, 1.0, r.half_extents.y) };
        for p in &pts {
            prop_assert!(b.contains(&Vector3::new(p.x, 0.0, p.y), 1e-9));
        }
    }
}
