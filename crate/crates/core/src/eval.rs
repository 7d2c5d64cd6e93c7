//! Detection metrics: render-based model overlap and modelAP, 3D box AP,
//! and pose accuracy curves.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::boxes3d::{box_iou3d, OrientedBox3D};
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, CameraIntrinsics, DepthImage, GeocentricFrame, Mask};
use crate::render::{render, ModelLibrary, Placement, RenderOutput};
use crate::synthgen::bin_center;

/// Thresholds of the overlap computations; disparity thresholds are in
/// disparity units. Infinite thresholds serialize as `null`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub t_iou: f64,
    #[serde(serialize_with = "ser_threshold", deserialize_with = "de_threshold")]
    pub t_agree: f64,
    #[serde(serialize_with = "ser_threshold", deserialize_with = "de_threshold")]
    pub t_occlusion: f64,
    /// Box overlap for 3D detection AP.
    pub t_iou_3d: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { t_iou: 0.5, t_agree: 7.0, t_occlusion: 5.0, t_iou_3d: 0.25 }
    }
}

fn ser_threshold<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_none()
    } else {
        s.serialize_some(v)
    }
}

fn de_threshold<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |t: f64| t > 0.0 && t <= 1.0;
        if !in_unit(self.t_iou) || !in_unit(self.t_iou_3d) || !(self.t_agree >= 0.0) || !(self.t_occlusion >= 0.0) {
            return Err(Error::InvalidArgument(format!("invalid evaluation thresholds {self:?}")));
        }
        Ok(())
    }
}

/// One annotated object.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthInstance {
    pub image_id: String,
    pub category: String,
    pub mask: Mask,
    pub box3d: Option<OrientedBox3D>,
    /// Difficult instances are neither required nor penalized.
    pub difficult: bool,
}

/// Observed depth of an evaluation image and its camera.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub depth: DepthImage,
    pub k: CameraIntrinsics,
    pub frame: GeocentricFrame,
}

/// A placed-model prediction, one JSONL row of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPrediction {
    pub image_id: String,
    pub category: String,
    pub score: f64,
    pub model: String,
    pub placement: Placement,
}

/// A 3D box prediction, one JSONL row of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxPrediction {
    pub image_id: String,
    pub category: String,
    pub score: f64,
    pub box3d: OrientedBox3D,
}

/// Overlap of a rendered prediction with a ground-truth mask.
///
/// Rendered pixels where the observation lies more than `t_occlusion`
/// disparity units in front are occluded; the rest form `P_visible`. The
/// intersection counts pixels of `P_visible ∩ G` whose observed and rendered
/// disparities agree within `t_agree`, over `|G ∪ P_visible|`. Pixels without
/// observed depth are left out of both counts.
pub fn overlap_from_render(pred: &RenderOutput, gt: &Mask, observed: &DepthImage, k: &CameraIntrinsics, cfg: &EvalConfig) -> Result<f64> {
    let (w, h) = (observed.width(), observed.height());
    pred.depth.check_dims(w, h)?;
    if gt.width() != w || gt.height() != h || pred.mask.width() != w || pred.mask.height() != h {
        return Err(Error::DimensionMismatch(w, h, gt.width(), gt.height()));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for i in 0..w * h {
        let Some(d_obs) = observed.at(i).and_then(|z| k.disparity(z)) else { continue };
        let mut visible = false;
        let mut agrees = false;
        if pred.mask.at(i) {
            if let Some(d_r) = pred.depth.at(i).and_then(|z| k.disparity(z)) {
                visible = d_obs - d_r <= cfg.t_occlusion;
                agrees = (d_obs - d_r).abs() <= cfg.t_agree;
            }
        }
        let in_gt = gt.at(i);
        union += (visible || in_gt) as usize;
        inter += (visible && in_gt && agrees) as usize;
    }
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

/// Renders the prediction and computes [`overlap_from_render`].
pub fn model_overlap(
    mesh: &crate::render::TriangleMesh,
    placement: &Placement,
    gt: &Mask,
    obs: &Observation,
    cfg: &EvalConfig,
) -> Result<f64> {
    let r = render(mesh, placement, &obs.frame, &obs.k, false)?;
    overlap_from_render(&r, gt, &obs.depth, &obs.k, cfg)
}

/// A scored detection with its overlaps against ground-truth indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDetection {
    pub score: f64,
    /// `(ground-truth index, overlap)` for every candidate match.
    pub overlaps: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PRCurve {
    /// `(recall, precision)` after each counted detection, in score order.
    pub points: Vec<(f64, f64)>,
    pub ap: f64,
}

/// Average precision under greedy score-ordered matching.
///
/// Each detection, in descending score order (input order among equal
/// scores), takes the unmatched ground truth with the highest overlap of at
/// least `t_iou` (lower index on ties). Detections taking a difficult ground
/// truth are skipped. AP is the area under the precision envelope, where the
/// precision at a recall level is the best precision at any higher recall.
pub fn average_precision(dets: &[ScoredDetection], difficult: &[bool], t_iou: f64) -> Result<PRCurve> {
    let n_pos = difficult.iter().filter(|&&d| !d).count();
    if n_pos == 0 {
        return Err(Error::NoGroundTruth);
    }
    if dets.iter().any(|d| !d.score.is_finite()) {
        return Err(Error::InvalidArgument("non-finite detection score".into()));
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    let mut taken = vec![false; difficult.len()];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut points = Vec::with_capacity(dets.len());
    let mut hits = Vec::with_capacity(dets.len());
    for &i in &order {
        let mut best: Option<(usize, f64)> = None;
        for &(g, o) in &dets[i].overlaps {
            if g >= difficult.len() {
                return Err(Error::InvalidArgument(format!("ground-truth index {g} out of range")));
            }
            if taken[g] || o < t_iou {
                continue;
            }
            if best.is_none_or(|(bg, bo)| o > bo || (o == bo && g < bg)) {
                best = Some((g, o));
            }
        }
        match best {
            Some((g, _)) if difficult[g] => {
                taken[g] = true;
                continue;
            }
            Some((g, _)) => {
                taken[g] = true;
                tp += 1;
                hits.push(true);
            }
            None => {
                fp += 1;
                hits.push(false);
            }
        }
        points.push((tp as f64 / n_pos as f64, tp as f64 / (tp + fp) as f64));
    }
    let mut envelope: Vec<f64> = points.iter().map(|p| p.1).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    // recall grows by exactly 1/n_pos at each true positive
    let sum: f64 = envelope.iter().zip(&hits).filter(|(_, &h)| h).map(|(e, _)| e).sum();
    Ok(PRCurve { points, ap: sum / n_pos as f64 })
}

/// Matches predictions to ground truth of the same image and category.
fn detections_for<P: Sync>(
    preds: &[P],
    gts: &[GroundTruthInstance],
    key: impl Fn(&P) -> (&str, &str, f64) + Sync,
    overlap: impl Fn(&P, &GroundTruthInstance) -> Result<f64> + Sync,
) -> Result<Vec<ScoredDetection>> {
    preds
        .par_iter()
        .map(|p| {
            let (image, cat, score) = key(p);
            let overlaps = gts
                .iter()
                .enumerate()
                .filter(|(_, g)| g.image_id == image && g.category == cat)
                .map(|(gi, g)| overlap(p, g).map(|o| (gi, o)))
                .collect::<Result<_>>()?;
            Ok(ScoredDetection { score, overlaps })
        })
        .collect()
}

/// modelAP: average precision with [`model_overlap`] as the overlap, all
/// categories pooled.
pub fn model_ap(
    preds: &[ModelPrediction],
    gts: &[GroundTruthInstance],
    observations: &BTreeMap<String, Observation>,
    library: &ModelLibrary,
    cfg: &EvalConfig,
) -> Result<PRCurve> {
    cfg.validate()?;
    let dets = detections_for(
        preds,
        gts,
        |p| (&p.image_id, &p.category, p.score),
        |p, g| {
            let obs = observations
                .get(&p.image_id)
                .ok_or_else(|| Error::InvalidArgument(format!("no observation for image `{}`", p.image_id)))?;
            let mesh = &library.find(&p.model)?.mesh;
            model_overlap(mesh, &p.placement, &g.mask, obs, cfg)
        },
    )?;
    let difficult: Vec<bool> = gts.iter().map(|g| g.difficult).collect();
    average_precision(&dets, &difficult, cfg.t_iou)
}

/// Per-category modelAP and their mean over categories with ground truth.
pub fn model_ap_by_category(
    preds: &[ModelPrediction],
    gts: &[GroundTruthInstance],
    observations: &BTreeMap<String, Observation>,
    library: &ModelLibrary,
    cfg: &EvalConfig,
) -> Result<(BTreeMap<String, PRCurve>, f64)> {
    let cats: std::collections::BTreeSet<&str> = gts.iter().filter(|g| !g.difficult).map(|g| g.category.as_str()).collect();
    let mut out = BTreeMap::new();
    for c in cats {
        let p: Vec<_> = preds.iter().filter(|p| p.category == c).cloned().collect();
        let g: Vec<_> = gts.iter().filter(|g| g.category == c).cloned().collect();
        out.insert(c.to_string(), model_ap(&p, &g, observations, library, cfg)?);
    }
    if out.is_empty() {
        return Err(Error::NoGroundTruth);
    }
    let mean = out.values().map(|c| c.ap).sum::<f64>() / out.len() as f64;
    Ok((out, mean))
}

/// 3D detection AP with box IoU as the overlap.
pub fn detection_ap_3d(preds: &[BoxPrediction], gts: &[GroundTruthInstance], t_iou: f64) -> Result<PRCurve> {
    if let Some(g) = gts.iter().find(|g| g.box3d.is_none()) {
        return Err(Error::InvalidArgument(format!("ground truth in `{}` has no 3D box", g.image_id)));
    }
    let dets =
        detections_for(preds, gts, |p| (&p.image_id, &p.category, p.score), |p, g| Ok(box_iou3d(&p.box3d, g.box3d.as_ref().unwrap())))?;
    let difficult: Vec<bool> = gts.iter().map(|g| g.difficult).collect();
    average_precision(&dets, &difficult, t_iou)
}

/// Top-view angle between two yaws, in [0, π].
pub fn angular_error(a: f64, b: f64) -> f64 {
    wrap_angle(a - b).abs()
}

/// Fraction of instances whose best top-`k` bin center lies within each
/// `δθ` (degrees) of the ground-truth yaw.
pub fn pose_accuracy_curve(
    ranked_bins: &[Vec<usize>],
    gt_yaws: &[f64],
    n_posebin: usize,
    k: usize,
    deltas_deg: &[f64],
) -> Result<Vec<f64>> {
    if k < 1 || ranked_bins.len() != gt_yaws.len() || n_posebin < 1 {
        return Err(Error::InvalidArgument(format!("k = {k}, {} predictions for {} instances", ranked_bins.len(), gt_yaws.len())));
    }
    if gt_yaws.is_empty() {
        return Ok(vec![0.0; deltas_deg.len()]);
    }
    let errs: Vec<f64> = ranked_bins
        .iter()
        .zip(gt_yaws)
        .map(|(bins, &gt)| bins.iter().take(k).map(|&b| angular_error(bin_center(b, n_posebin), gt)).fold(f64::INFINITY, f64::min))
        .collect();
    Ok(deltas_deg.iter().map(|d| errs.iter().filter(|&&e| e <= d.to_radians()).count() as f64 / errs.len() as f64).collect())
}

/// δθ grid 0°, 1°, …, 45°.
pub fn default_delta_grid() -> Vec<f64> {
    (0..=45).map(f64::from).collect()
}

/// CSV with a `recall,precision` header.
pub fn write_pr_csv(curve: &PRCurve, path: &Path) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(f, "recall,precision").map_err(io)?;
    for (r, p) in &curve.points {
        writeln!(f, "{r},{p}").map_err(io)?;
    }
    f.flush().map_err(io)
}
