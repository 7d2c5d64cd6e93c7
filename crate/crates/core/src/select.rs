//! Fit-quality features of aligned candidates and the linear selector
//! that picks one model per detection.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::align::FitCandidate;
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, DepthImage, Mask};
use crate::render::RenderOutput;

/// Names of the scored statistics, in vector order (the bias is separate).
pub const FEATURE_NAMES: [&str; 8] = [
    "n_occluded",
    "f_occluded",
    "n_explained_model",
    "f_explained_model",
    "n_explained_seg",
    "f_explained_seg",
    "iou_seg_explained",
    "iou_seg_unoccluded",
];

/// Agreement statistics between a rendered candidate and the observation.
///
/// Only pixels with observed depth take part: model fractions are over
/// rendered pixels with a measurement, segmentation fractions over
/// segmented pixels with a measurement, and both IoUs over measured pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitFeatures {
    pub n_occluded: usize,
    pub f_occluded: f64,
    pub n_explained_model: usize,
    pub f_explained_model: f64,
    pub n_explained_seg: usize,
    pub f_explained_seg: f64,
    pub iou_seg_explained: f64,
    pub iou_seg_unoccluded: f64,
    /// Constant input multiplying the selector bias, normally 1.
    pub bias: f64,
    /// Rendered pixels with observed depth.
    pub model_denominator: usize,
    /// Segmented pixels with observed depth.
    pub seg_denominator: usize,
}

impl FitFeatures {
    /// The eight statistics in [`FEATURE_NAMES`] order.
    pub fn vector(&self) -> [f64; 8] {
        [
            self.n_occluded as f64,
            self.f_occluded,
            self.n_explained_model as f64,
            self.f_explained_model,
            self.n_explained_seg as f64,
            self.f_explained_seg,
            self.iou_seg_explained,
            self.iou_seg_unoccluded,
        ]
    }
}

fn ratio(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

/// Features of one candidate rendering against observed depth and its
/// instance segmentation.
///
/// A rendered pixel is occluded when the observed disparity exceeds the
/// rendered one by more than `t_occ`, and explained when the two differ by
/// at most `t_agree`. Missing observations are neither.
pub fn fit_features(
    render: &RenderOutput,
    observed: &DepthImage,
    seg: &Mask,
    k: &CameraIntrinsics,
    t_occ: f64,
    t_agree: f64,
) -> Result<FitFeatures> {
    let (w, h) = (observed.width(), observed.height());
    render.depth.check_dims(w, h)?;
    if seg.width() != w || seg.height() != h || render.mask.width() != w || render.mask.height() != h {
        return Err(Error::DimensionMismatch(w, h, seg.width(), seg.height()));
    }
    let (mut model_den, mut seg_den) = (0, 0);
    let (mut occluded, mut explained, mut explained_seg) = (0, 0, 0);
    let (mut seg_or_explained, mut unoccluded_and_seg, mut seg_or_unoccluded) = (0, 0, 0);
    for i in 0..w * h {
        let Some(z_obs) = observed.at(i) else { continue };
        let in_seg = seg.at(i);
        seg_den += in_seg as usize;
        let (mut is_expl, mut is_unocc) = (false, false);
        if render.mask.at(i) {
            if let (Some(z_r), Some(d_obs)) = (render.depth.at(i), k.disparity(z_obs)) {
                let d_r = k.disparity(z_r).expect("rendered depth is positive");
                model_den += 1;
                let occ = d_obs - d_r > t_occ;
                occluded += occ as usize;
                is_unocc = !occ;
                is_expl = (d_obs - d_r).abs() <= t_agree;
                explained += is_expl as usize;
            }
        }
        explained_seg += (is_expl && in_seg) as usize;
        seg_or_explained += (is_expl || in_seg) as usize;
        unoccluded_and_seg += (is_unocc && in_seg) as usize;
        seg_or_unoccluded += (is_unocc || in_seg) as usize;
    }
    Ok(FitFeatures {
        n_occluded: occluded,
        f_occluded: ratio(occluded, model_den),
        n_explained_model: explained,
        f_explained_model: ratio(explained, model_den),
        n_explained_seg: explained_seg,
        f_explained_seg: ratio(explained_seg, seg_den),
        iou_seg_explained: ratio(explained_seg, seg_or_explained),
        iou_seg_unoccluded: ratio(unoccluded_and_seg, seg_or_unoccluded),
        bias: 1.0,
        model_denominator: model_den,
        seg_denominator: seg_den,
    })
}

/// Positive training label: the rendered mask overlaps some ground-truth
/// region with IoU above 0.5.
pub fn candidate_label(model_mask: &Mask, gt_regions: &[Mask]) -> bool {
    gt_regions.iter().any(|g| model_mask.iou(g) > 0.5)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorWeights {
    pub feature_names: Vec<String>,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub lambda: f64,
}

impl SelectorWeights {
    pub fn new(weights: [f64; 8], bias: f64, lambda: f64) -> Self {
        Self { feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(), weights: weights.to_vec(), bias, lambda }
    }

    pub fn validate(&self) -> Result<()> {
        let names_ok = self.feature_names.iter().map(String::as_str).eq(FEATURE_NAMES);
        if !names_ok || self.weights.len() != 8 {
            return Err(Error::InvalidArgument(format!("selector expects features {FEATURE_NAMES:?}")));
        }
        if !self.bias.is_finite() || self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidArgument("non-finite selector weights".into()));
        }
        Ok(())
    }

    pub fn score(&self, f: &FitFeatures) -> f64 {
        self.weights.iter().zip(f.vector()).map(|(w, x)| w * x).sum::<f64>() + self.bias * f.bias
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let w: Self = crate::io::read_json(path)?;
        w.validate()?;
        Ok(w)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::io::write_json(path, self)
    }
}

/// Design matrix rows: the eight statistics then the bias input.
fn design(features: &[FitFeatures]) -> Vec<[f64; 9]> {
    features
        .iter()
        .map(|f| {
            let v = f.vector();
            [v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], f.bias]
        })
        .collect()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Mean logistic loss plus `λ/2 ‖θ‖²` over all nine parameters, where
/// θ = (weights, bias) and `y ∈ {0, 1}`.
pub fn selector_objective(features: &[FitFeatures], labels: &[bool], lambda: f64, w: &SelectorWeights) -> (f64, [f64; 9]) {
    let theta: Vec<f64> = w.weights.iter().copied().chain([w.bias]).collect();
    let x = design(features);
    objective(&x, labels, lambda, &DVector::from_vec(theta)).map_or((f64::NAN, [f64::NAN; 9]), |(f, g, _)| {
        let mut out = [0.0; 9];
        out.copy_from_slice(g.as_slice());
        (f, out)
    })
}

fn objective(x: &[[f64; 9]], y: &[bool], lambda: f64, theta: &DVector<f64>) -> Option<(f64, DVector<f64>, DMatrix<f64>)> {
    let n = x.len() as f64;
    let mut f = 0.5 * lambda * theta.norm_squared();
    let mut g = theta * lambda;
    let mut h = DMatrix::identity(9, 9) * lambda;
    for (row, &yi) in x.iter().zip(y) {
        let xi = DVector::from_column_slice(row);
        let z = xi.dot(theta);
        f += if yi { softplus(-z) } else { softplus(z) } / n;
        let p = sigmoid(z);
        g += &xi * ((p - yi as u8 as f64) / n);
        h += (&xi * xi.transpose()) * (p * (1.0 - p) / n);
    }
    f.is_finite().then_some((f, g, h))
}

/// Gradient norm at which training stops.
pub const SELECTOR_GRADIENT_TOL: f64 = 1e-6;

/// L2-regularized logistic regression by damped Newton steps.
///
/// Stops once the objective's gradient norm falls below
/// [`SELECTOR_GRADIENT_TOL`]. The bias is penalized like the weights.
pub fn train_selector(features: &[FitFeatures], labels: &[bool], lambda: f64) -> Result<SelectorWeights> {
    if features.len() != labels.len() || features.is_empty() {
        return Err(Error::InvalidArgument(format!("{} features, {} labels", features.len(), labels.len())));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("regularization {lambda} must be positive")));
    }
    if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        return Err(Error::SingleClass);
    }
    let x = design(features);
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite feature".into()));
    }
    let mut theta = DVector::zeros(9);
    let (mut f, mut g, mut h) = objective(&x, labels, lambda, &theta).expect("finite at zero");
    for _ in 0..500 {
        if g.norm() < SELECTOR_GRADIENT_TOL {
            let w: [f64; 8] = theta.as_slice()[..8].try_into().unwrap();
            return Ok(SelectorWeights::new(w, theta[8], lambda));
        }
        // λI keeps the Hessian positive definite
        let step = h.clone().cholesky().ok_or_else(|| Error::InvalidArgument("singular selector Hessian".into()))?.solve(&(-&g));
        let slope = g.dot(&step);
        let mut a = 1.0;
        loop {
            let cand = &theta + &step * a;
            if let Some((fc, gc, hc)) = objective(&x, labels, lambda, &cand) {
                if fc <= f + 1e-4 * a * slope || a < 1e-12 {
                    theta = cand;
                    (f, g, h) = (fc, gc, hc);
                    break;
                }
            }
            a *= 0.5;
            if a < 1e-16 {
                return Err(Error::InvalidArgument("selector line search failed".into()));
            }
        }
    }
    Err(Error::InvalidArgument(format!("selector training did not reach gradient norm {SELECTOR_GRADIENT_TOL}")))
}

/// Index of the highest-scoring candidate that did not fail. Ties go to the
/// lower residual, then to the earlier candidate.
pub fn select_best(candidates: &[FitCandidate], features: &[FitFeatures], weights: &SelectorWeights) -> Result<usize> {
    if candidates.len() != features.len() {
        return Err(Error::InvalidArgument(format!("{} candidates, {} feature rows", candidates.len(), features.len())));
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, (c, f)) in candidates.iter().zip(features).enumerate() {
        if c.failed {
            continue;
        }
        let s = weights.score(f);
        let better = match best {
            None => true,
            Some((j, sb)) => s > sb || (s == sb && c.residual < candidates[j].residual),
        };
        if better {
            best = Some((i, s));
        }
    }
    best.map(|b| b.0).ok_or(Error::AllCandidatesFailed)
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::align::Hypothesis;
    use crate::geometry::GeocentricFrame;
    use crate::render::{render, render_scene, shapes, Placement, SceneItem};
    use nalgebra::Vector3;
    use proptest::prelude::*;
    use rand::Rng;

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::new(150.0, 150.0, 79.5, 59.5, 160, 120).unwrap()
    }

    fn frame() -> GeocentricFrame {
        GeocentricFrame::pitched(0.25, 1.3)
    }

    fn chair_render(yaw: f64) -> RenderOutput {
        let mesh = shapes::chair(0.5, 0.5, 0.9, 0.3);
        let f = frame();
        render(&mesh, &Placement::new(1.0, yaw, Vector3::new(0.1, f.floor_height, 2.6)), &f, &cam(), false).unwrap()
    }

    #[test]
    fn self_consistent_render() {
        let r = chair_render(0.4);
        let f = fit_features(&r, &r.depth, &r.mask, &cam(), 5.0, 7.0).unwrap();
        assert_eq!(f.f_explained_model, 1.0);
        assert_eq!(f.f_occluded, 0.0);
        assert_eq!(f.iou_seg_explained, 1.0);
        assert_eq!(f.iou_seg_unoccluded, 1.0);
        assert_eq!(f.f_explained_seg, 1.0);
        assert_eq!(f.n_explained_model, r.mask.count());
        assert_eq!(f.model_denominator, r.mask.count());
    }

    #[test]
    fn fully_occluded_render() {
        let r = chair_render(0.4);
        let k = cam();
        let vals = (0..k.pixel_count()).map(|i| r.depth.at(i).map_or(0.0, |z| z - 1.0)).collect();
        let obs = DepthImage::from_meters(k.width, k.height, vals).unwrap();
        let f = fit_features(&r, &obs, &r.mask, &k, 1.0, 1.0).unwrap();
        assert_eq!(f.f_occluded, 1.0);
        assert_eq!(f.f_explained_model, 0.0);
        assert_eq!(f.n_occluded, r.mask.count());
        assert_eq!(f.iou_seg_unoccluded, 0.0);
    }

    #[test]
    fn half_shifted_segmentation() {
        // 20x10 model block in front of a wall; segmentation shifted by half its width
        let k = cam();
        let mut model = Mask::new(k.width, k.height);
        let mut rd = DepthImage::empty(k.width, k.height);
        for v in 40..50 {
            for u in 60..80 {
                model.set(u, v, true);
                rd.set(u, v, 2.0);
            }
        }
        let mut obs = DepthImage::from_meters(k.width, k.height, vec![4.0; k.pixel_count()]).unwrap();
        for i in model.indices() {
            obs.set(i % k.width, i / k.width, 2.0);
        }
        let seg = model.shifted(10, 0);
        let r = RenderOutput { depth: rd, mask: model, normals: None };
        let f = fit_features(&r, &obs, &seg, &k, 5.0, 7.0).unwrap();
        assert!((f.iou_seg_unoccluded - 1.0 / 3.0).abs() < 1e-15);
        assert!((f.iou_seg_explained - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(f.f_explained_seg, 0.5);
    }

    #[test]
    fn empty_model_gives_zero_features() {
        let k = cam();
        let r = RenderOutput { depth: DepthImage::empty(k.width, k.height), mask: Mask::new(k.width, k.height), normals: None };
        let obs = DepthImage::from_meters(k.width, k.height, vec![3.0; k.pixel_count()]).unwrap();
        let seg = Mask::from_pixels(k.width, k.height, [(3, 3)]);
        let f = fit_features(&r, &obs, &seg, &k, 5.0, 7.0).unwrap();
        assert_eq!(f.vector(), [0.0; 8]);
        assert_eq!(f.model_denominator, 0);
        assert_eq!(f.seg_denominator, 1);
    }

    #[test]
    fn dimension_mismatch() {
        let r = chair_render(0.0);
        let obs = DepthImage::empty(10, 10);
        assert!(fit_features(&r, &obs, &Mask::new(10, 10), &cam(), 5.0, 7.0).is_err());
    }

    #[test]
    fn missing_depth_pixels_do_not_change_fractions() {
        // drop observations on a region, then also add model/seg pixels there
        let r = chair_render(0.7);
        let k = cam();
        let mut obs = render_scene(
            &[SceneItem {
                mesh: &shapes::table(1.0, 0.7, 0.7, 0.0),
                placement: Placement::new(1.0, 0.3, Vector3::new(0.5, frame().floor_height, 2.0)),
            }],
            true,
            &frame(),
            &k,
            false,
        )
        .unwrap()
        .depth;
        for i in r.mask.indices() {
            if let Some(z) = r.depth.at(i) {
                if obs.at(i).is_none_or(|o| o > z) {
                    obs.set(i % k.width, i / k.width, z + 0.01);
                }
            }
        }
        let seg = r.mask.dilated(2);
        let base = fit_features(&r, &obs, &seg, &k, 5.0, 7.0).unwrap();

        let mut obs2 = obs.clone();
        let (mut r2, mut seg2) = (r.clone(), seg.clone());
        for v in 0..10 {
            for u in 0..k.width {
                let i = v * k.width + u;
                obs2.clear(i);
                if u % 2 == 0 {
                    r2.mask.set(u, v, true);
                    r2.depth.set(u, v, 1.5);
                    seg2.set(u, v, true);
                }
            }
        }
        // the chair does not reach the top rows, so `base` is unaffected by the clearing
        assert!((0..10 * k.width).all(|i| !r.mask.at(i) && !seg.at(i)));
        let f2 = fit_features(&r2, &obs2, &seg2, &k, 5.0, 7.0).unwrap();
        assert_eq!(base.vector(), f2.vector());
    }

    #[test]
    fn ground_truth_dominates_wrong_yaw() {
        let k = cam();
        let f = frame();
        let mut wins = 0;
        for seed in 0..20u64 {
            let mut rng = crate::rng::substream(seed, "select-dominance", &[]);
            let v = rng.random_range(0.0..1.0);
            let mesh = shapes::chair(0.45 + 0.1 * v, 0.5, 0.9, v);
            let yaw = rng.random_range(-3.1..3.1);
            let t = Vector3::new(rng.random_range(-0.3..0.3), f.floor_height, rng.random_range(2.2..3.2));
            let gt = Placement::new(1.0, yaw, t);
            let scene = render_scene(&[SceneItem { mesh: &mesh, placement: gt }], true, &f, &k, false).unwrap();
            let seg = scene.item_mask(0);
            let good = render(&mesh, &gt, &f, &k, false).unwrap();
            let bad = render(&mesh, &Placement::new(1.0, yaw + 30f64.to_radians(), t), &f, &k, false).unwrap();
            let fg = fit_features(&good, &scene.depth, &seg, &k, 5.0, 7.0).unwrap();
            let fb = fit_features(&bad, &scene.depth, &seg, &k, 5.0, 7.0).unwrap();
            if fg.iou_seg_explained >= fb.iou_seg_explained && fg.iou_seg_unoccluded >= fb.iou_seg_unoccluded {
                wins += 1;
            }
        }
        assert!(wins >= 18, "{wins}/20");
    }

    fn feats(vals: [f64; 8]) -> FitFeatures {
        FitFeatures {
            n_occluded: vals[0] as usize,
            f_occluded: vals[1],
            n_explained_model: vals[2] as usize,
            f_explained_model: vals[3],
            n_explained_seg: vals[4] as usize,
            f_explained_seg: vals[5],
            iou_seg_explained: vals[6],
            iou_seg_unoccluded: vals[7],
            bias: 1.0,
            model_denominator: 0,
            seg_denominator: 0,
        }
    }

    fn toy_set(seed: u64, n: usize) -> (Vec<FitFeatures>, Vec<bool>) {
        let mut rng = crate::rng::substream(seed, "toy", &[]);
        let mut fs = Vec::new();
        let mut ls = Vec::new();
        for i in 0..n {
            let pos = i % 2 == 0;
            let iou: f64 = if pos { rng.random_range(0.55..1.0) } else { rng.random_range(0.0..0.45) };
            let mut v = [0.0; 8];
            v[0] = rng.random_range(0..200) as f64;
            v[1] = rng.random_range(0.0..1.0);
            v[2] = rng.random_range(0..500) as f64;
            v[3] = rng.random_range(0.0..1.0);
            v[7] = iou;
            v[6] = iou * rng.random_range(0.8..1.0);
            fs.push(feats(v));
            ls.push(pos);
        }
        (fs, ls)
    }

    #[test]
    fn separable_toy_fit() {
        let (fs, ls) = toy_set(1, 40);
        let w = train_selector(&fs, &ls, 1e-3).unwrap();
        let acc = fs.iter().zip(&ls).filter(|(f, &l)| (w.score(f) > 0.0) == l).count();
        assert_eq!(acc, 40);
        let (_, g) = selector_objective(&fs, &ls, 1e-3, &w);
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm < 1e-6, "{norm}");
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let (fs, ls) = toy_set(2, 16);
        let w = SelectorWeights::new([1e-3, 0.2, -1e-3, 0.5, 0.0, -0.3, 0.7, 1.1], -0.4, 0.01);
        let (_, g) = selector_objective(&fs, &ls, 0.01, &w);
        for j in 0..9 {
            let eps = 1e-6;
            let (mut wp, mut wm) = (w.clone(), w.clone());
            if j < 8 {
                wp.weights[j] += eps;
                wm.weights[j] -= eps;
            } else {
                wp.bias += eps;
                wm.bias -= eps;
            }
            let n = (selector_objective(&fs, &ls, 0.01, &wp).0 - selector_objective(&fs, &ls, 0.01, &wm).0) / (2.0 * eps);
            assert!((g[j] - n).abs() < 1e-6 * (1.0 + n.abs()), "{j}: {} vs {n}", g[j]);
        }
    }

    #[test]
    fn heavy_regularization_shrinks_to_zero() {
        let (fs, ls) = toy_set(3, 30);
        let w = train_selector(&fs, &ls, 1e6).unwrap();
        assert!(w.weights.iter().chain([&w.bias]).all(|v| v.abs() < 1e-3), "{w:?}");
    }

    #[test]
    fn single_class_rejected() {
        let (fs, _) = toy_set(4, 6);
        assert!(matches!(train_selector(&fs, &[true; 6], 1e-3), Err(Error::SingleClass)));
    }

    #[test]
    fn training_is_deterministic() {
        let (fs, ls) = toy_set(5, 30);
        assert_eq!(train_selector(&fs, &ls, 1e-3).unwrap(), train_selector(&fs, &ls, 1e-3).unwrap());
    }

    #[test]
    fn weights_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sel.json");
        let w = SelectorWeights::new([0.1, -2.0, 3e-3, 0.5, 0.25, 1.0 / 3.0, 0.7, 1.1], -0.4, 1e-3);
        w.save(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        for key in ["feature_names", "weights", "bias", "lambda"] {
            assert!(text.contains(key));
        }
        assert_eq!(SelectorWeights::load(&p).unwrap(), w);
    }

    fn candidate(residual: f64, failed: bool) -> FitCandidate {
        FitCandidate {
            hypothesis: Hypothesis { model: "m".into(), scale: 1.0, yaw0: 0.0, t0: Vector3::zeros() },
            placement: Placement::identity(),
            residual_trace: vec![],
            residual,
            iterations: 0,
            failed,
        }
    }

    fn f_expl(v: f64) -> FitFeatures {
        let mut a = [0.0; 8];
        a[3] = v;
        feats(a)
    }

    #[test]
    fn select_single_and_failed() {
        let w = SelectorWeights::new([0.0; 8], 0.0, 1e-3);
        assert_eq!(select_best(&[candidate(0.1, false)], &[f_expl(0.0)], &w).unwrap(), 0);
        assert!(matches!(select_best(&[candidate(0.1, true)], &[f_expl(0.0)], &w), Err(Error::AllCandidatesFailed)));
        let cs = [candidate(0.1, true), candidate(0.3, false)];
        assert_eq!(select_best(&cs, &[f_expl(1.0), f_expl(0.0)], &w).unwrap(), 1);
    }

    #[test]
    fn select_by_single_feature_and_ties() {
        let mut a = [0.0; 8];
        a[3] = 1.0;
        let w = SelectorWeights::new(a, 0.0, 1e-3);
        let cs: Vec<_> = [0.3, 0.2, 0.1, 0.2].iter().map(|&r| candidate(r, false)).collect();
        let fs = [f_expl(0.2), f_expl(0.9), f_expl(0.5), f_expl(0.9)];
        assert_eq!(select_best(&cs, &fs, &w).unwrap(), 1);
        // equal scores: lower residual wins, then list order
        let fs = [f_expl(0.5); 4];
        assert_eq!(select_best(&cs, &fs, &w).unwrap(), 2);
        let cs: Vec<_> = [0.3, 0.3].iter().map(|&r| candidate(r, false)).collect();
        assert_eq!(select_best(&cs, &fs[..2], &w).unwrap(), 0);
    }

    proptest! {
        #[test]
        fn bias_shift_keeps_argmax(vals in prop::collection::vec(0.0f64..1.0, 2..8), c in -50.0f64..50.0, b in -3.0f64..3.0) {
            let w = SelectorWeights::new([0.0, -1.0, 0.0, 2.0, 0.0, 0.5, 1.0, 1.0], b, 1e-3);
            let cs: Vec<_> = vals.iter().map(|_| candidate(0.1, false)).collect();
            let fs: Vec<_> = vals.iter().map(|&v| f_expl(v)).collect();
            let shifted: Vec<_> = fs.iter().map(|f| FitFeatures { bias: f.bias + c, ..*f }).collect();
            prop_assert_eq!(select_best(&cs, &fs, &w).unwrap(), select_best(&cs, &shifted, &w).unwrap());
        }

        #[test]
        fn fractions_in_unit_interval(shift in -20i64..20, dz in -0.5f64..0.5) {
            let r = chair_render(0.2);
            let k = cam();
            let vals = (0..k.pixel_count()).map(|i| r.depth.at(i).map_or(3.5, |z| z + dz)).collect();
            let obs = DepthImage::from_meters(k.width, k.height, vals).unwrap();
            let f = fit_features(&r, &obs, &r.mask.shifted(shift, 0), &k, 5.0, 7.0).unwrap();
            for v in [f.f_occluded, f.f_explained_model, f.f_explained_seg, f.iou_seg_explained, f.iou_seg_unoccluded] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert_eq!(f.f_occluded, ratio(f.n_occluded, f.model_denominator));
            prop_assert_eq!(f.f_explained_seg, ratio(f.n_explained_seg, f.seg_denominator));
        }
    }
}
