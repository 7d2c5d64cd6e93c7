use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::Rng;

use super::*;
use crate::geometry::{world_up, yaw_rotation, DepthImage};
use crate::render::{render, render_scene, shapes, Placement, SceneItem};
use crate::rng::substream;
use crate::synthgen::bin_center;

fn cam() -> CameraIntrinsics {
    CameraIntrinsics::new(262.5, 262.5, 159.5, 119.5, 320, 240).unwrap()
}

fn frame() -> GeocentricFrame {
    GeocentricFrame::pitched(0.25, 1.3)
}

fn chair() -> TriangleMesh {
    shapes::chair(0.5, 0.5, 0.9, 0.8)
}

fn gt_placement(mesh: &TriangleMesh, yaw: f64, x: f64, z: f64) -> Placement {
    Placement::new(1.0, yaw, Vector3::new(x, resting_height(mesh, 1.0, yaw, &frame()), z))
}

/// Scene depth (object + floor) and the object's visible mask.
fn scene(mesh: &TriangleMesh, p: &Placement) -> (DepthImage, Mask) {
    let s = render_scene(&[SceneItem { mesh, placement: *p }], true, &frame(), &cam(), false).unwrap();
    let m = s.item_mask(0);
    (s.depth, m)
}

fn hyp(p: &Placement) -> Hypothesis {
    Hypothesis { model: "m".into(), scale: p.scale, yaw0: p.yaw, t0: p.translation }
}

fn yaw_err(a: f64, b: f64) -> f64 {
    crate::geometry::wrap_angle(a - b).abs()
}

#[test]
fn stratified_scales() {
    assert_eq!(sample_scales(0.7, 0.2, 1).unwrap(), vec![0.7]);
    let two = sample_scales(1.0, 1.0, 2).unwrap();
    assert!((two[0] - (1.0 - 0.6745)).abs() < 1e-3 && (two[1] - (1.0 + 0.6745)).abs() < 1e-3);
    assert_eq!(sample_scales(0.5, 0.0, 4).unwrap(), vec![0.5; 4]);
    let ten = sample_scales(1.0, 0.3, 10).unwrap();
    assert!(ten.windows(2).all(|w| w[0] < w[1]));
    // symmetric quantiles around the mean
    assert!((ten[0] + ten[9] - 2.0).abs() < 1e-9);
    let clamped = sample_scales(0.1, 1.0, 5).unwrap();
    assert!(clamped.iter().all(|&a| a > 0.0));
    assert!((clamped[0] - 0.001).abs() < 1e-15);
    assert!(sample_scales(1.0, -0.1, 3).is_err());
}

#[test]
fn median_of_singleton_and_even() {
    assert_eq!(median(&mut [3.0]), Some(3.0));
    assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]), Some(2.5));
    assert_eq!(median(&mut []), None);
}

/// Depth image holding the given world points at their projected pixels.
fn depth_with_points(points: &[Vector3<f64>]) -> (DepthImage, Mask) {
    let (k, f) = (cam(), frame());
    let mut d = DepthImage::empty(k.width, k.height);
    let mut m = Mask::new(k.width, k.height);
    for p in points {
        let c = f.to_camera(p);
        let (u, v) = k.project(&c).unwrap();
        let (u, v) = (u.round() as usize, v.round() as usize);
        // store the depth that backprojects exactly through the pixel center
        d.set(u, v, c.z);
        m.set(u, v, true);
    }
    (d, m)
}

#[test]
fn init_translation_singleton_and_resting() {
    let (k, f) = (cam(), frame());
    let (d, m) = depth_with_points(&[Vector3::new(0.3, -0.5, 2.0)]);
    let mesh = chair();
    let world = backproject(&d, &k, Some(&m), Some(&f)).unwrap().points[0];
    let t = init_translation(&m, &d, &k, &f, &mesh, 1.3, 0.4).unwrap();
    assert!((t.x - world.x).abs() < 1e-12 && (t.z - world.z).abs() < 1e-12);
    let p = Placement::new(1.3, 0.4, t);
    let lowest = p.transform_vertices(&mesh).iter().map(|v| v.y).fold(f64::INFINITY, f64::min);
    assert!((lowest - f.floor_height).abs() < 1e-9);
}

#[test]
fn init_translation_ignores_outlier() {
    let (k, f) = (cam(), frame());
    let mut rng = substream(8, "t", &[]);
    let mut pts: Vec<Vector3<f64>> =
        (0..99).map(|_| Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-1.0..0.0), rng.random_range(2.0..2.6))).collect();
    pts.push(Vector3::new(6.0, -0.5, 10.0));
    let (d, m) = depth_with_points(&pts);
    let world = backproject(&d, &k, Some(&m), Some(&f)).unwrap().points;
    // brute-force median: the value with as many samples below as above
    let brute = |vals: Vec<f64>| -> f64 {
        let n = vals.len();
        let mut cands: Vec<f64> = vals
            .iter()
            .copied()
            .filter(|c| {
                let below = vals.iter().filter(|v| *v < c).count();
                let above = vals.iter().filter(|v| *v > c).count();
                below <= n / 2 && above <= n / 2
            })
            .collect();
        cands.sort_by(f64::total_cmp);
        if n % 2 == 1 {
            cands[0]
        } else {
            (cands[0] + cands[cands.len() - 1]) / 2.0
        }
    };
    let t = init_translation(&m, &d, &k, &f, &chair(), 1.0, 0.0).unwrap();
    assert!((t.x - brute(world.iter().map(|p| p.x).collect())).abs() < 1e-12);
    assert!((t.z - brute(world.iter().map(|p| p.z).collect())).abs() < 1e-12);
    assert!(t.x.abs() < 0.3 && t.z < 2.6);
}

#[test]
fn init_translation_empty_mask() {
    let (k, f) = (cam(), frame());
    let d = DepthImage::empty(k.width, k.height);
    let m = Mask::from_pixels(k.width, k.height, [(5, 5)]);
    assert!(matches!(init_translation(&m, &d, &k, &f, &chair(), 1.0, 0.0), Err(Error::EmptyMask)));
}

#[test]
fn perfect_initialization_is_a_fixed_point() {
    let mesh = chair();
    let gt = gt_placement(&mesh, 0.6, 0.2, 2.8);
    let (d, m) = scene(&mesh, &gt);
    let c = icp_align(&d, &m, &mesh, &hyp(&gt), &frame(), &cam(), &IcpParams::default()).unwrap();
    assert!(!c.failed);
    assert!(c.iterations <= 2, "{} iterations", c.iterations);
    assert!(c.residual < 1e-6, "{}", c.residual);
    assert!(yaw_err(c.placement.yaw, gt.yaw) < 1e-6);
}

fn perturbed(gt: &Placement, rng: &mut impl Rng) -> Placement {
    let dyaw = 10f64.to_radians() * if rng.random::<bool>() { 1.0 } else { -1.0 };
    let dir = rng.random_range(0.0..2.0 * PI);
    let dt = Vector3::new(0.05 * dir.cos(), 0.0, 0.05 * dir.sin());
    Placement::new(gt.scale, gt.yaw + dyaw, gt.translation + dt)
}

#[test]
fn recovers_perturbed_pose() {
    let mesh = chair();
    let trials = 20;
    let mut ok = 0;
    for s in 0..trials {
        let mut rng = substream(40, "icp", &[s]);
        let gt = gt_placement(&mesh, rng.random_range(-PI..PI), rng.random_range(-0.4..0.4), rng.random_range(2.2..3.2));
        let (d, m) = scene(&mesh, &gt);
        let init = perturbed(&gt, &mut rng);
        let c = icp_align(&d, &m, &mesh, &hyp(&init), &frame(), &cam(), &IcpParams::default()).unwrap();
        assert!(!c.failed);
        assert!(c.residual_trace.iter().all(|r| r.is_finite() && *r < 0.1));
        if yaw_err(c.placement.yaw, gt.yaw) < 1f64.to_radians() && (c.placement.translation - gt.translation).norm() < 0.01 {
            ok += 1;
        }
    }
    assert!(ok >= 18, "{ok}/{trials}");
}

#[test]
fn count_trimming_leaves_head_on_sliding_offset() {
    // A wide box seen head-on slides freely along its front face; the only
    // evidence against the offset is the silhouette strip, which is smaller
    // than the trimmed fraction and so discarded entirely.
    let mesh = crate::render::cuboid(Vector3::new(-0.6, 0.0, -0.3), Vector3::new(0.6, 0.6, 0.3));
    let gt = gt_placement(&mesh, 0.0, 0.0, 3.0);
    let (d, m) = scene(&mesh, &gt);
    let init = Placement::new(1.0, 0.0, gt.translation + Vector3::new(0.03, 0.0, 0.0));
    let trimmed_only = IcpParams { polish_iter: 0, ..IcpParams::default() };
    let c = icp_align(&d, &m, &mesh, &hyp(&init), &frame(), &cam(), &trimmed_only).unwrap();
    assert!((c.placement.translation - gt.translation).norm() > 0.02);
    assert!(c.residual < 1e-5);
}

#[test]
fn trimming_tolerates_segmentation_overshoot() {
    let mesh = chair();
    let (k, f) = (cam(), frame());
    for s in 0..3 {
        let mut rng = substream(41, "icp", &[s]);
        let gt = gt_placement(&mesh, rng.random_range(-PI..PI), rng.random_range(-0.3..0.3), rng.random_range(2.2..3.0));
        let (d, m) = scene(&mesh, &gt);
        // grow the mask by ~20% with neighboring background pixels
        let ring = m.dilated(3);
        let extra: Vec<usize> = ring.indices().filter(|&i| !m.at(i) && d.at(i).is_some()).collect();
        let mut dirty = m.clone();
        for &i in extra.iter().take(m.count() / 5) {
            dirty.set_at(i, true);
        }
        let init = perturbed(&gt, &mut rng);
        let clean = icp_align(&d, &m, &mesh, &hyp(&init), &f, &k, &IcpParams::default()).unwrap();
        let noisy = icp_align(&d, &dirty, &mesh, &hyp(&init), &f, &k, &IcpParams::default()).unwrap();
        assert!(yaw_err(clean.placement.yaw, noisy.placement.yaw) < 2f64.to_radians());
        assert!((clean.placement.translation - noisy.placement.translation).norm() < 0.02);
    }
}

#[test]
fn refit_never_increases_trimmed_objective() {
    let mesh = chair();
    let (k, f) = (cam(), frame());
    let gt = gt_placement(&mesh, 1.0, 0.0, 2.5);
    let (d, m) = scene(&mesh, &gt);
    let object = backproject(&d, &k, Some(&m), Some(&f)).unwrap().points;
    let mut rng = substream(42, "icp", &[]);
    for _ in 0..5 {
        let p = perturbed(&gt, &mut rng);
        let r = render(&mesh, &p, &f, &k, false).unwrap();
        let model = backproject(&r.depth, &k, Some(&r.mask), Some(&f)).unwrap().points;
        let matches = icp::correspond(&object, &model, 0.2);
        let g = world_up();
        let before = rigid_objective(&matches.pairs, &g, 0.0, &Vector3::zeros());
        let (th, t) = constrained_rigid_fit(&matches.pairs, &g);
        assert!(rigid_objective(&matches.pairs, &g, th, &t) <= before + 1e-12);
        assert!((matches.rms.powi(2) * matches.pairs.len() as f64 - before).abs() < 1e-9 * before.max(1.0));
    }
}

#[test]
fn invisible_model_fails() {
    let mesh = chair();
    let gt = gt_placement(&mesh, 0.0, 0.0, 2.5);
    let (d, m) = scene(&mesh, &gt);
    let behind = Placement::new(1.0, 0.0, Vector3::new(0.0, 0.0, -5.0));
    let c = icp_align(&d, &m, &mesh, &hyp(&behind), &frame(), &cam(), &IcpParams::default()).unwrap();
    assert!(c.failed);
    assert!(c.residual.is_infinite());
}

#[test]
fn icp_is_deterministic() {
    let mesh = chair();
    let gt = gt_placement(&mesh, -2.0, 0.1, 2.7);
    let (d, m) = scene(&mesh, &gt);
    let init = perturbed(&gt, &mut substream(43, "icp", &[]));
    let a = icp_align(&d, &m, &mesh, &hyp(&init), &frame(), &cam(), &IcpParams::default()).unwrap();
    let b = icp_align(&d, &m, &mesh, &hyp(&init), &frame(), &cam(), &IcpParams::default()).unwrap();
    assert_eq!(a, b);
}

fn library(n: usize) -> ModelLibrary {
    let mut lib = ModelLibrary::new();
    for s in shapes::demo_library(n).into_iter().filter(|s| s.category == "chair") {
        lib.insert(s.category, &s.name, &s.mesh);
    }
    lib
}

#[test]
fn hypothesis_counts_and_initialization() {
    let lib = library(5);
    let mesh = &lib.models("chair").unwrap()[0].mesh;
    let gt = gt_placement(mesh, 0.3, 0.0, 2.5);
    let (d, m) = scene(mesh, &gt);
    let det = Detection { category: "chair".into(), score: 1.0, mask: m };
    let stats = CategoryStats { mu_area: 0.25, sigma_area: 0.05, z_range: [2.0, 3.0] };
    let (k, f) = (cam(), frame());
    let yaws = [bin_center(1, 8), bin_center(5, 8), bin_center(0, 8)];

    let all = generate_hypotheses(&det, &yaws, &d, &k, &f, &stats, &lib, &SearchConfig::default()).unwrap();
    assert_eq!(all.len(), 100);
    for h in &all {
        let mesh = &lib.find(&h.model).unwrap().mesh;
        let p = Placement::new(h.scale, h.yaw0, h.t0);
        let lowest = p.transform_vertices(mesh).iter().map(|v| v.y).fold(f64::INFINITY, f64::min);
        assert!((lowest - f.floor_height).abs() < 1e-9);
    }
    assert!(all.iter().all(|h| h.yaw0 == bin_center(1, 8) || h.yaw0 == bin_center(5, 8)));

    let one = SearchConfig { n_scale: 1, n_models: 1, top_k: 1, ..SearchConfig::default() };
    let single = generate_hypotheses(&det, &yaws, &d, &k, &f, &stats, &lib, &one).unwrap();
    assert_eq!(single.len(), 1);
    assert_eq!(single[0].yaw0, bin_center(1, 8));
    let area = crate::render::top_view_area(&lib.find(&single[0].model).unwrap().mesh, single[0].scale).unwrap();
    assert!((area - 0.25).abs() < 1e-9);
}

#[test]
fn empty_detection_mask_errors() {
    let lib = library(1);
    let (k, f) = (cam(), frame());
    let d = DepthImage::empty(k.width, k.height);
    let det = Detection { category: "chair".into(), score: 1.0, mask: Mask::new(k.width, k.height) };
    let stats = CategoryStats { mu_area: 0.25, sigma_area: 0.05, z_range: [2.0, 3.0] };
    let r = generate_hypotheses(&det, &[0.0], &d, &k, &f, &stats, &lib, &SearchConfig::default());
    assert!(matches!(r, Err(Error::EmptyMask)));
    let det = Detection { category: "lamp".into(), ..det };
    assert!(matches!(
        generate_hypotheses(&det, &[0.0], &d, &k, &f, &stats, &lib, &SearchConfig::default()),
        Err(Error::UnknownCategory(_))
    ));
}

#[test]
fn rotation_preserves_gravity() {
    let g = world_up();
    for th in [0.1, -2.5, 3.0] {
        assert!((yaw_rotation(th) * g - g).norm() < 1e-12);
    }
}
