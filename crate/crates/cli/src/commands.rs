//! One function per subcommand. Each checks its inputs before writing anything.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use scene_align::align::{align_hypotheses, generate_hypotheses, Detection};
use scene_align::boxes3d::box_from_model;
use scene_align::eval::{
    default_delta_grid, detection_ap_3d, model_ap, model_ap_by_category, pose_accuracy_curve, write_pr_csv, BoxPrediction, EvalConfig,
    ModelPrediction,
};
use scene_align::geometry::{
    crop_and_warp, encode_normal_image, estimate_normals, CameraIntrinsics, DepthImage, GeocentricFrame, Mask, NormalImage, Resample,
};
use scene_align::io::{self, CameraDoc};
use scene_align::posenet::{
    encode_input, load_weights, predict_pose, save_weights, train, train_from, write_training_log, NetworkSpec, PoseNet, TrainExample,
};
use scene_align::render::{render, render_scene, ModelLibrary, Placement, SceneItem};
use scene_align::select::{candidate_label, fit_features, select_best, train_selector, FitFeatures, SelectorWeights, FEATURE_NAMES};
use scene_align::synthgen::{load_dataset, load_stats, make_dataset, save_dataset, StatsFile, INDEX_FILE};
use scene_align::Error;

use crate::config::{existing, require, PipelineConfig};
use crate::error::{CliError, CliResult};
use crate::scenes::{generate_scenes, DetectionRecord, SceneSet, DETECTIONS_FILE};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const POSE_CURVE_FILE: &str = "pose_accuracy.csv";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const BOXES_FILE: &str = "boxes.jsonl";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.jsonl";
pub const MODELAP_FILE: &str = "modelap.json";
pub const DET3D_FILE: &str = "det3d.json";

fn load_library(cfg: &PipelineConfig) -> CliResult<ModelLibrary> {
    Ok(ModelLibrary::load(require(&cfg.paths.library, "library")?)?)
}

fn load_stats_file(cfg: &PipelineConfig) -> CliResult<StatsFile> {
    Ok(load_stats(require(&cfg.paths.stats, "stats")?)?)
}

fn load_camera(cfg: &PipelineConfig) -> CliResult<(CameraIntrinsics, GeocentricFrame)> {
    Ok(CameraDoc::load(require(&cfg.paths.camera, "camera")?)?)
}

/// The configured network, or the standard one over the library's categories.
pub fn network_spec(cfg: &PipelineConfig) -> CliResult<NetworkSpec> {
    if let Some(spec) = &cfg.network {
        return Ok(spec.clone());
    }
    let lib = load_library(cfg)?;
    let cats = lib.categories().map(str::to_string).collect();
    Ok(NetworkSpec::standard(cfg.dataset.n_posebin, cats, cfg.dataset.crop_size))
}

fn load_net(cfg: &PipelineConfig) -> CliResult<PoseNet> {
    let spec = network_spec(cfg)?;
    let path = cfg.weights_path();
    existing(&path, "pose network weights")?;
    Ok(PoseNet::new(spec, load_weights(&path)?)?)
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Core(Error::io(dir, e)))
}

fn create_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub config: scene_align::synthgen::DatasetConfig,
    pub examples: usize,
    pub foreground: usize,
    pub background: usize,
    pub categories: Vec<String>,
    pub index: PathBuf,
}

/// Renders the pose-labeled crop dataset into the dataset directory.
pub fn cmd_synth(cfg: &PipelineConfig) -> CliResult<DatasetManifest> {
    let lib = load_library(cfg)?;
    let stats = load_stats_file(cfg)?;
    let (k, frame) = load_camera(cfg)?;
    for c in lib.categories() {
        if !stats.contains_key(c) {
            return Err(CliError::Config(format!("stats file has no entry for category `{c}`")));
        }
    }
    let examples = make_dataset(&lib, &stats, &frame, &k, &cfg.dataset, cfg.seed)?;
    let dir = cfg.dataset_dir();
    save_dataset(&examples, &dir)?;
    let foreground = examples.iter().filter(|e| e.label < cfg.dataset.n_posebin).count();
    let manifest = DatasetManifest {
        seed: cfg.seed,
        config: cfg.dataset,
        examples: examples.len(),
        foreground,
        background: examples.len() - foreground,
        categories: lib.categories().map(str::to_string).collect(),
        index: PathBuf::from(INDEX_FILE),
    };
    io::write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Renders the evaluation scenes into `dir` (default: the configured scenes directory).
pub fn cmd_synth_scenes(cfg: &PipelineConfig, dir: Option<&Path>, stream: &str) -> CliResult<PathBuf> {
    let lib = load_library(cfg)?;
    let stats = load_stats_file(cfg)?;
    let (k, frame) = load_camera(cfg)?;
    let dir = dir.map_or_else(|| cfg.scenes_dir(), Path::to_path_buf);
    generate_scenes(&lib, &stats, &k, &frame, &cfg.scenes, cfg.seed, stream, &dir)?;
    Ok(dir)
}

/// Trains the pose network on the dataset directory and writes the weights
/// and a per-epoch CSV log. With `paths.init_weights` training resumes from
/// those weights.
pub fn cmd_train_pose(cfg: &PipelineConfig) -> CliResult<PathBuf> {
    let spec = network_spec(cfg)?;
    spec.validate()?;
    let dir = cfg.dataset_dir();
    existing(&dir.join(INDEX_FILE), "dataset index")?;
    let init = match &cfg.paths.init_weights {
        Some(p) => Some(load_weights(existing(p, "initial weights")?)?),
        None => None,
    };
    let data: Vec<TrainExample> = load_dataset(&dir)?
        .into_iter()
        .map(|(img, row)| {
            if img.width != spec.input_side || img.height != spec.input_side {
                return Err(CliError::Config(format!(
                    "dataset crops are {}x{}, the network takes {}",
                    img.width, img.height, spec.input_side
                )));
            }
            Ok(TrainExample { input: encode_input(&img), category: spec.category_id(&row.category)?, label: row.label })
        })
        .collect::<CliResult<_>>()?;
    let out = match init {
        Some(w) => train_from(&spec, w, &data, &cfg.train)?,
        None => train(&spec, &data, &cfg.train)?,
    };
    let path = cfg.weights_path();
    create_parent(&path)?;
    create_dir(&cfg.paths.output_dir)?;
    save_weights(&out.weights, &path)?;
    write_training_log(&out.log, &cfg.paths.output_dir.join(TRAIN_LOG_FILE))?;
    Ok(path)
}

/// Pose accuracy on held-out crops: top-1 and top-2 accuracy over the δθ grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseReport {
    pub deltas_deg: Vec<f64>,
    pub top1: Vec<f64>,
    pub top2: Vec<f64>,
    pub instances: usize,
}

/// Ranked bins for each labeled crop, then the accuracy curves.
fn pose_report(net: &PoseNet, crops: &[(NormalImage, String, f64)]) -> CliResult<PoseReport> {
    let n = net.spec.n_posebin;
    let ranked: Vec<Vec<usize>> = crops
        .par_iter()
        .map(|(img, cat, _)| Ok(predict_pose(net, img, cat, n)?.iter().map(|s| s.bin).collect()))
        .collect::<CliResult<_>>()?;
    let yaws: Vec<f64> = crops.iter().map(|c| c.2).collect();
    let deltas = default_delta_grid();
    let top1 = pose_accuracy_curve(&ranked, &yaws, n, 1, &deltas)?;
    let top2 = pose_accuracy_curve(&ranked, &yaws, n, 2.min(n), &deltas)?;
    Ok(PoseReport { deltas_deg: deltas, top1, top2, instances: crops.len() })
}

fn normal_image(depth: &DepthImage, k: &CameraIntrinsics, frame: &GeocentricFrame, cfg: &PipelineConfig) -> CliResult<NormalImage> {
    Ok(encode_normal_image(&estimate_normals(depth, k, &cfg.dataset.normals)?, frame)?)
}

fn detection_crop(img: &NormalImage, mask: &Mask, side: usize) -> CliResult<NormalImage> {
    let bbox = mask.bounding_box().ok_or(Error::EmptyMask)?;
    Ok(crop_and_warp(img, &bbox, side, Resample::Bilinear)?)
}

/// Evaluates the pose network on the foreground crops of a dataset
/// directory, or on the ground-truth boxes of a scene directory.
pub fn cmd_eval_pose(cfg: &PipelineConfig, dataset: Option<&Path>, scenes: Option<&Path>) -> CliResult<PoseReport> {
    let net = load_net(cfg)?;
    let side = net.spec.input_side;
    let crops: Vec<(NormalImage, String, f64)> = if let Some(dir) = scenes {
        let set = SceneSet::load(existing(dir, "scene directory")?)?;
        let mut out = Vec::new();
        for r in &set.records {
            let img = normal_image(&set.depth(r)?, &set.k, &set.frame, cfg)?;
            for o in r.objects.iter().filter(|o| !o.difficult) {
                out.push((detection_crop(&img, &set.mask(o)?, side)?, o.category.clone(), o.placement.yaw));
            }
        }
        out
    } else {
        let dir = dataset.map_or_else(|| cfg.dataset_dir(), Path::to_path_buf);
        existing(&dir.join(INDEX_FILE), "dataset index")?;
        load_dataset(&dir)?
            .into_iter()
            .filter(|(_, row)| row.label < net.spec.n_posebin)
            .map(|(img, row)| (img, row.category, row.theta_gt))
            .collect()
    };
    let report = pose_report(&net, &crops)?;
    let dir = &cfg.paths.output_dir;
    create_dir(dir)?;
    let path = dir.join(POSE_CURVE_FILE);
    let mut text = String::from("delta_deg,top1,top2\n");
    for ((d, a), b) in report.deltas_deg.iter().zip(&report.top1).zip(&report.top2) {
        text.push_str(&format!("{d},{a},{b}\n"));
    }
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}

/// One refined candidate of a detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateDiag {
    pub model: String,
    pub scale: f64,
    pub yaw0: f64,
    pub placement: Placement,
    pub residual: f64,
    pub iterations: usize,
    pub failed: bool,
    pub features: Option<FitFeatures>,
    pub selector_score: Option<f64>,
    /// Whether the rendered model matches a ground-truth region; known only
    /// when ground truth was supplied.
    pub label: Option<bool>,
}

/// Per-detection record of the model search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionDiag {
    pub image_id: String,
    pub detection: usize,
    pub category: String,
    pub pose_yaws: Vec<f64>,
    pub n_candidates: usize,
    pub selected: Option<usize>,
    pub candidates: Vec<CandidateDiag>,
}

/// Everything the search needs besides the image.
pub struct FitContext<'a> {
    pub cfg: &'a PipelineConfig,
    pub library: &'a ModelLibrary,
    pub stats: &'a StatsFile,
    pub net: Option<&'a PoseNet>,
    pub selector: &'a SelectorWeights,
}

/// Output of fitting one image.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitOutput {
    pub predictions: Vec<ModelPrediction>,
    pub boxes: Vec<BoxPrediction>,
    pub diagnostics: Vec<DetectionDiag>,
}

impl FitOutput {
    fn extend(&mut self, o: FitOutput) {
        self.predictions.extend(o.predictions);
        self.boxes.extend(o.boxes);
        self.diagnostics.extend(o.diagnostics);
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        create_dir(dir)?;
        io::write_jsonl(&dir.join(PREDICTIONS_FILE), &self.predictions)?;
        io::write_jsonl(&dir.join(BOXES_FILE), &self.boxes)?;
        io::write_jsonl(&dir.join(DIAGNOSTICS_FILE), &self.diagnostics)?;
        Ok(())
    }
}

/// Selector used before one has been trained: the IoU between the
/// segmentation and the explained model pixels.
pub fn untrained_selector() -> SelectorWeights {
    let mut w = [0.0; 8];
    let i = FEATURE_NAMES.iter().position(|n| *n == "iou_seg_explained").expect("feature exists");
    w[i] = 1.0;
    SelectorWeights::new(w, 0.0, 0.0)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Searches models, scales and poses for every detection of one image and
/// keeps the selector's best candidate.
///
/// A prediction's score is the detection score times the selector
/// probability. Detections whose candidates all fail produce no prediction.
/// `gt_masks` (per category) label the candidates for selector training.
pub fn fit_image(
    ctx: &FitContext,
    image_id: &str,
    depth: &DepthImage,
    k: &CameraIntrinsics,
    frame: &GeocentricFrame,
    detections: &[(Detection, Option<Vec<f64>>)],
    gt_masks: Option<&BTreeMap<String, Vec<Mask>>>,
) -> CliResult<FitOutput> {
    let cfg = ctx.cfg;
    let mut normals = None;
    let mut out = FitOutput::default();
    for (di, (det, hint)) in detections.iter().enumerate() {
        let stats = ctx.stats.get(&det.category).ok_or_else(|| Error::UnknownCategory(det.category.clone()))?;
        let pose_yaws = match hint {
            Some(y) => y.clone(),
            None => {
                let net = ctx.net.ok_or_else(|| CliError::Config("detections without pose_yaws need pose network weights".into()))?;
                if normals.is_none() {
                    normals = Some(normal_image(depth, k, frame, cfg)?);
                }
                let crop = detection_crop(normals.as_ref().unwrap(), &det.mask, net.spec.input_side)?;
                predict_pose(net, &crop, &det.category, cfg.search.top_k)?.iter().map(|s| s.yaw).collect()
            }
        };
        let hyps = generate_hypotheses(det, &pose_yaws, depth, k, frame, stats, ctx.library, &cfg.search)?;
        let cands = align_hypotheses(&hyps, depth, &det.mask, ctx.library, frame, k, &cfg.search.icp)?;
        let no_gt = Vec::new();
        let gt = gt_masks.map(|m| m.get(&det.category).unwrap_or(&no_gt));
        let scored: Vec<(Option<FitFeatures>, Option<bool>)> = cands
            .par_iter()
            .map(|c| {
                if c.failed {
                    return Ok((None, None));
                }
                let r = render(&ctx.library.find(&c.hypothesis.model)?.mesh, &c.placement, frame, k, false)?;
                let f = fit_features(&r, depth, &det.mask, k, cfg.eval.t_occlusion, cfg.eval.t_agree)?;
                Ok((Some(f), gt.map(|g| candidate_label(&r.mask, g))))
            })
            .collect::<CliResult<_>>()?;
        let features: Vec<FitFeatures> = scored.iter().map(|(f, _)| f.unwrap_or_else(empty_features)).collect();
        let selected = match select_best(&cands, &features, ctx.selector) {
            Ok(i) => Some(i),
            Err(Error::AllCandidatesFailed) => None,
            Err(e) => return Err(e.into()),
        };
        if let Some(i) = selected {
            let c = &cands[i];
            let score = det.score * sigmoid(ctx.selector.score(&features[i]));
            let mesh = &ctx.library.find(&c.hypothesis.model)?.mesh;
            out.predictions.push(ModelPrediction {
                image_id: image_id.to_string(),
                category: det.category.clone(),
                score,
                model: c.hypothesis.model.clone(),
                placement: c.placement,
            });
            out.boxes.push(BoxPrediction {
                image_id: image_id.to_string(),
                category: det.category.clone(),
                score,
                box3d: box_from_model(mesh, &c.placement)?,
            });
        }
        out.diagnostics.push(DetectionDiag {
            image_id: image_id.to_string(),
            detection: di,
            category: det.category.clone(),
            pose_yaws,
            n_candidates: cands.len(),
            selected,
            candidates: cands
                .iter()
                .zip(&scored)
                .map(|(c, (f, label))| CandidateDiag {
                    model: c.hypothesis.model.clone(),
                    scale: c.hypothesis.scale,
                    yaw0: c.hypothesis.yaw0,
                    placement: c.placement,
                    residual: c.residual,
                    iterations: c.iterations,
                    failed: c.failed,
                    features: *f,
                    selector_score: f.as_ref().map(|f| ctx.selector.score(f)),
                    label: *label,
                })
                .collect(),
        });
    }
    Ok(out)
}

fn empty_features() -> FitFeatures {
    FitFeatures {
        n_occluded: 0,
        f_occluded: 0.0,
        n_explained_model: 0,
        f_explained_model: 0.0,
        n_explained_seg: 0,
        f_explained_seg: 0.0,
        iou_seg_explained: 0.0,
        iou_seg_unoccluded: 0.0,
        bias: 1.0,
        model_denominator: 0,
        seg_denominator: 0,
    }
}

/// Loads the selector if one exists at the configured location. An explicitly
/// configured but missing file is an error; otherwise the untrained selector is used.
fn load_selector(cfg: &PipelineConfig) -> CliResult<SelectorWeights> {
    let path = cfg.selector_path();
    if path.exists() {
        Ok(SelectorWeights::load(&path)?)
    } else if cfg.paths.selector.is_some() {
        Err(CliError::MissingInput { what: "selector".into(), path })
    } else {
        Ok(untrained_selector())
    }
}

fn read_detections(path: &Path) -> CliResult<Vec<DetectionRecord>> {
    let rows: Vec<DetectionRecord> = io::read_jsonl(existing(path, "detections file")?)?;
    for r in &rows {
        if !(r.score.is_finite()) {
            return Err(CliError::Core(Error::format(path, format!("non-finite score in `{}`", r.image_id))));
        }
    }
    Ok(rows)
}

fn to_detection(base: &Path, r: &DetectionRecord, k: &CameraIntrinsics) -> CliResult<(Detection, Option<Vec<f64>>)> {
    let mask = io::load_mask_png(&base.join(&r.mask))?;
    if mask.width() != k.width || mask.height() != k.height {
        return Err(Error::DimensionMismatch(k.width, k.height, mask.width(), mask.height()).into());
    }
    Ok((Detection { category: r.category.clone(), score: r.score, mask }, r.pose_yaws.clone()))
}

struct FitInputs {
    library: ModelLibrary,
    stats: StatsFile,
    net: Option<PoseNet>,
    selector: SelectorWeights,
}

fn fit_inputs(cfg: &PipelineConfig, rows: &[DetectionRecord]) -> CliResult<FitInputs> {
    let library = load_library(cfg)?;
    let stats = load_stats_file(cfg)?;
    let net = if rows.iter().any(|r| r.pose_yaws.is_none()) { Some(load_net(cfg)?) } else { None };
    for r in rows {
        library.models(&r.category)?;
        if !stats.contains_key(&r.category) {
            return Err(CliError::Config(format!("stats file has no entry for category `{}`", r.category)));
        }
    }
    Ok(FitInputs { library, stats, net, selector: load_selector(cfg)? })
}

/// Fits one image: `detections` is a JSONL file of [`DetectionRecord`]s
/// whose `image_id` matches (all rows when `image_id` is `None`).
pub fn cmd_fit(
    cfg: &PipelineConfig,
    detections: &Path,
    depth: &Path,
    camera: Option<&Path>,
    image_id: Option<&str>,
    out_dir: &Path,
) -> CliResult<FitOutput> {
    let mut rows = read_detections(detections)?;
    if let Some(id) = image_id {
        rows.retain(|r| r.image_id == id);
    }
    let (k, frame) = match camera {
        Some(p) => CameraDoc::load(existing(p, "camera file")?)?,
        None => load_camera(cfg)?,
    };
    let depth_img = io::load_depth_png(existing(depth, "depth image")?)?;
    depth_img.check_dims(k.width, k.height)?;
    let inputs = fit_inputs(cfg, &rows)?;
    let base = detections.parent().unwrap_or(Path::new(""));
    let dets = rows.iter().map(|r| to_detection(base, r, &k)).collect::<CliResult<Vec<_>>>()?;
    let ctx = FitContext { cfg, library: &inputs.library, stats: &inputs.stats, net: inputs.net.as_ref(), selector: &inputs.selector };
    let id = image_id.map(str::to_string).or_else(|| rows.first().map(|r| r.image_id.clone())).unwrap_or_default();
    let out = fit_image(&ctx, &id, &depth_img, &k, &frame, &dets, None)?;
    out.write(out_dir)?;
    Ok(out)
}

/// Fits every image of a scene directory using its detections file
/// (default: the oracle detections written with the scenes). Candidates are
/// labeled against the scenes' ground truth.
pub fn cmd_fit_scenes(cfg: &PipelineConfig, scenes: &Path, detections: Option<&Path>, out_dir: &Path) -> CliResult<FitOutput> {
    fit_scenes_with(cfg, scenes, detections, out_dir, None)
}

fn fit_scenes_with(
    cfg: &PipelineConfig,
    scenes: &Path,
    detections: Option<&Path>,
    out_dir: &Path,
    selector: Option<SelectorWeights>,
) -> CliResult<FitOutput> {
    let set = SceneSet::load(existing(scenes, "scene directory")?)?;
    let det_path = detections.map_or_else(|| scenes.join(DETECTIONS_FILE), Path::to_path_buf);
    let rows = read_detections(&det_path)?;
    let known: BTreeSet<&str> = set.records.iter().map(|r| r.image_id.as_str()).collect();
    if let Some(r) = rows.iter().find(|r| !known.contains(r.image_id.as_str())) {
        return Err(CliError::Config(format!("detection for unknown image `{}`", r.image_id)));
    }
    let mut inputs = fit_inputs(cfg, &rows)?;
    if let Some(s) = selector {
        inputs.selector = s;
    }
    let ctx = FitContext { cfg, library: &inputs.library, stats: &inputs.stats, net: inputs.net.as_ref(), selector: &inputs.selector };
    let base = det_path.parent().unwrap_or(Path::new(""));
    let mut out = FitOutput::default();
    for r in &set.records {
        let dets =
            rows.iter().filter(|d| d.image_id == r.image_id).map(|d| to_detection(base, d, &set.k)).collect::<CliResult<Vec<_>>>()?;
        let mut gt: BTreeMap<String, Vec<Mask>> = BTreeMap::new();
        for o in &r.objects {
            gt.entry(o.category.clone()).or_default().push(set.mask(o)?);
        }
        let depth = set.depth(r)?;
        out.extend(fit_image(&ctx, &r.image_id, &depth, &set.k, &set.frame, &dets, Some(&gt))?);
    }
    out.write(out_dir)?;
    Ok(out)
}

/// Trains the candidate selector on the labeled, non-failed candidates of
/// one or more diagnostics files.
pub fn cmd_select_train(cfg: &PipelineConfig, diagnostics: &[PathBuf]) -> CliResult<SelectorWeights> {
    if diagnostics.is_empty() {
        return Err(CliError::Config("no diagnostics files given".into()));
    }
    let (mut features, mut labels) = (Vec::new(), Vec::new());
    for p in diagnostics {
        let rows: Vec<DetectionDiag> = io::read_jsonl(existing(p, "diagnostics file")?)?;
        for c in rows.iter().flat_map(|d| &d.candidates) {
            if let (Some(f), Some(l), false) = (c.features, c.label, c.failed) {
                features.push(f);
                labels.push(l);
            }
        }
    }
    if features.is_empty() {
        return Err(CliError::Config("diagnostics contain no labeled candidates".into()));
    }
    let w = train_selector(&features, &labels, cfg.selector_lambda)?;
    let path = cfg.selector_path();
    create_parent(&path)?;
    w.save(&path)?;
    Ok(w)
}

/// One modelAP evaluation setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelApRun {
    pub eval: EvalConfig,
    /// All categories pooled.
    pub ap: f64,
    pub per_category: BTreeMap<String, f64>,
    pub mean_category_ap: f64,
    pub pr_curve: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelApReport {
    pub predictions: usize,
    pub runs: Vec<ModelApRun>,
}

fn agree_tag(t: f64) -> String {
    if t.is_infinite() {
        "inf".into()
    } else {
        format!("{t}")
    }
}

/// modelAP at the configured `t_agree` and at `t_agree = ∞`.
pub fn cmd_eval_modelap(cfg: &PipelineConfig, predictions: &Path, scenes: &Path, out_dir: &Path) -> CliResult<ModelApReport> {
    let preds: Vec<ModelPrediction> = io::read_jsonl(existing(predictions, "predictions file")?)?;
    let set = SceneSet::load(existing(scenes, "scene directory")?)?;
    let library = load_library(cfg)?;
    for p in &preds {
        library.find(&p.model)?;
        p.placement.validate()?;
    }
    let gts = set.ground_truth()?;
    let obs = set.observations()?;
    let mut settings = vec![cfg.eval];
    if cfg.eval.t_agree.is_finite() {
        settings.push(EvalConfig { t_agree: f64::INFINITY, ..cfg.eval });
    }
    let mut runs = Vec::new();
    let mut curves = Vec::new();
    for e in settings {
        let pooled = model_ap(&preds, &gts, &obs, &library, &e)?;
        let (by_cat, mean) = model_ap_by_category(&preds, &gts, &obs, &library, &e)?;
        let pr = PathBuf::from(format!("modelap_pr_agree_{}.csv", agree_tag(e.t_agree)));
        runs.push(ModelApRun {
            eval: e,
            ap: pooled.ap,
            per_category: by_cat.into_iter().map(|(c, v)| (c, v.ap)).collect(),
            mean_category_ap: mean,
            pr_curve: pr.clone(),
        });
        curves.push((pr, pooled));
    }
    create_dir(out_dir)?;
    for (name, c) in &curves {
        write_pr_csv(c, &out_dir.join(name))?;
    }
    let report = ModelApReport { predictions: preds.len(), runs };
    io::write_json(&out_dir.join(MODELAP_FILE), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Det3dReport {
    pub t_iou_3d: f64,
    pub ap: f64,
    pub predictions: usize,
    pub pr_curve: PathBuf,
}

/// 3D detection AP of box predictions against the scenes' amodal boxes.
pub fn cmd_eval_det3d(cfg: &PipelineConfig, boxes: &Path, scenes: &Path, out_dir: &Path) -> CliResult<Det3dReport> {
    let preds: Vec<BoxPrediction> = io::read_jsonl(existing(boxes, "box predictions file")?)?;
    for p in &preds {
        p.box3d.validate()?;
    }
    let set = SceneSet::load(existing(scenes, "scene directory")?)?;
    let gts = set.ground_truth()?;
    let curve = detection_ap_3d(&preds, &gts, cfg.eval.t_iou_3d)?;
    create_dir(out_dir)?;
    let pr = PathBuf::from("det3d_pr.csv");
    write_pr_csv(&curve, &out_dir.join(&pr))?;
    let report = Det3dReport { t_iou_3d: cfg.eval.t_iou_3d, ap: curve.ap, predictions: preds.len(), pr_curve: pr };
    io::write_json(&out_dir.join(DET3D_FILE), &report)?;
    Ok(report)
}

/// Debug rendering of one placed library model, optionally over the floor.
/// Writes `<out>_depth.png` and `<out>_mask.png`.
pub fn cmd_render(cfg: &PipelineConfig, model: &str, placement: &Placement, with_floor: bool, out: &Path) -> CliResult<[PathBuf; 2]> {
    placement.validate()?;
    let lib = load_library(cfg)?;
    let (k, frame) = load_camera(cfg)?;
    let mesh = &lib.find(model)?.mesh;
    let scene = render_scene(&[SceneItem { mesh, placement: *placement }], with_floor, &frame, &k, false)?;
    let stem = out.file_name().and_then(|s| s.to_str()).unwrap_or("render");
    let depth = out.with_file_name(format!("{stem}_depth.png"));
    let mask = out.with_file_name(format!("{stem}_mask.png"));
    io::save_depth_png(&scene.depth, &depth)?;
    io::save_mask_png(&scene.item_mask(0), &mask)?;
    Ok([depth, mask])
}

/// Summary of a full pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub dataset: DatasetManifest,
    pub final_train_loss: Option<f64>,
    pub pose: PoseReport,
    pub selector: SelectorWeights,
    pub modelap: ModelApReport,
    pub det3d: Det3dReport,
}

pub const SUMMARY_FILE: &str = "summary.json";

/// Every stage in order under `paths.output_dir`: crop dataset, pose
/// network, training and test scenes, selector training on the training
/// scenes' fits, then fitting and evaluation on the test scenes.
pub fn cmd_pipeline(cfg: &PipelineConfig) -> CliResult<PipelineSummary> {
    let out = cfg.paths.output_dir.clone();
    load_library(cfg)?;
    load_stats_file(cfg)?;
    load_camera(cfg)?;
    network_spec(cfg)?.validate()?;

    let dataset = cmd_synth(cfg)?;
    cmd_train_pose(cfg)?;
    let log_path = out.join(TRAIN_LOG_FILE);
    let final_train_loss = std::fs::read_to_string(&log_path)
        .ok()
        .and_then(|t| t.lines().last().and_then(|l| l.split(',').nth(1)).and_then(|v| v.parse().ok()));

    let train_scenes = cmd_synth_scenes(cfg, Some(&out.join("scenes_train")), "scenes-train")?;
    let test_scenes = cmd_synth_scenes(cfg, None, "scenes-test")?;
    let pose = cmd_eval_pose(cfg, None, Some(&test_scenes))?;

    fit_scenes_with(cfg, &train_scenes, None, &out.join("fit_train"), Some(untrained_selector()))?;
    let selector = cmd_select_train(cfg, &[out.join("fit_train").join(DIAGNOSTICS_FILE)])?;
    let fit_dir = out.join("fit_test");
    fit_scenes_with(cfg, &test_scenes, None, &fit_dir, Some(selector.clone()))?;
    let eval_dir = out.join("eval");
    let modelap = cmd_eval_modelap(cfg, &fit_dir.join(PREDICTIONS_FILE), &test_scenes, &eval_dir)?;
    let det3d = cmd_eval_det3d(cfg, &fit_dir.join(BOXES_FILE), &test_scenes, &eval_dir)?;
    let summary = PipelineSummary { dataset, final_train_loss, pose, selector, modelap, det3d };
    io::write_json(&out.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

/// Runs `f` on a pool with the configured thread count.
pub fn with_threads<T: Send>(cfg: &PipelineConfig, f: impl FnOnce() -> CliResult<T> + Send) -> CliResult<T> {
    let n = cfg.thread_count()?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    pool.install(f)
}

/// Writes a starter directory: a procedural model library, footprint
/// statistics measured from it, a camera and a config referencing them.
pub fn init_demo(dir: &Path, categories: &[String], per_category: usize, small_camera: bool) -> CliResult<PathBuf> {
    use scene_align::render::{shapes, top_view_area};
    use scene_align::synthgen::CategoryStats;

    if per_category == 0 {
        return Err(CliError::Config("per_category must be positive".into()));
    }
    let mut lib = ModelLibrary::new();
    for s in shapes::demo_library(per_category) {
        if categories.is_empty() || categories.iter().any(|c| c == s.category) {
            lib.insert(s.category, &s.name, &s.mesh);
        }
    }
    if lib.is_empty() {
        return Err(CliError::Config(format!("no demo models for categories {categories:?}")));
    }
    let mut stats = StatsFile::new();
    for c in lib.categories() {
        let areas = lib.models(c)?.iter().map(|m| top_view_area(&m.mesh, 1.0)).collect::<scene_align::Result<Vec<_>>>()?;
        let mu = areas.iter().sum::<f64>() / areas.len() as f64;
        stats.insert(c.to_string(), CategoryStats { mu_area: mu, sigma_area: 0.1 * mu, z_range: [2.2, 3.4] });
    }
    let k = if small_camera { CameraIntrinsics::new(131.25, 131.25, 79.5, 59.5, 160, 120)? } else { CameraIntrinsics::kinect() };
    let frame = GeocentricFrame::pitched(0.25, 1.3);
    create_dir(dir)?;
    lib.save(&dir.join("library"))?;
    io::write_json(&dir.join("stats.json"), &stats)?;
    io::write_json(&dir.join("camera.json"), &CameraDoc::new(&k, &frame))?;
    let config = serde_json::json!({
        "seed": 0,
        "paths": {
            "library": "library/library.json",
            "stats": "stats.json",
            "camera": "camera.json",
            "output_dir": "out"
        }
    });
    let path = dir.join("config.json");
    let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    writeln!(f, "{}", serde_json::to_string_pretty(&config).expect("json")).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
