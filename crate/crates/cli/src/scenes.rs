//! Synthetic evaluation scenes: library models standing on one floor, with
//! their depth rendering, ground-truth masks, placements and amodal boxes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use scene_align::boxes3d::{box_from_model, OrientedBox3D};
use scene_align::eval::{BoxPrediction, GroundTruthInstance, ModelPrediction, Observation};
use scene_align::geometry::{CameraIntrinsics, DepthImage, GeocentricFrame, Mask};
use scene_align::io::{self, CameraDoc};
use scene_align::render::{render_scene, ModelLibrary, Placement, SceneItem};
use scene_align::rng::substream;
use scene_align::synthgen::{sample_scene, StatsFile};
use scene_align::{Error, Result};

use crate::config::SceneSetConfig;

pub const CAMERA_FILE: &str = "camera.json";
pub const SCENES_FILE: &str = "scenes.jsonl";
pub const DETECTIONS_FILE: &str = "detections.jsonl";

/// Placement attempts per object before giving up on a scene.
const PLACEMENT_TRIES: usize = 50;
/// Clearance between the footprint circles of two objects, meters.
const CLEARANCE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtObject {
    pub category: String,
    pub model: String,
    pub placement: Placement,
    /// Visible-pixel mask, relative to the scene directory.
    pub mask: PathBuf,
    pub box3d: OrientedBox3D,
    pub visible_pixels: usize,
    pub difficult: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub image_id: String,
    pub depth: PathBuf,
    pub objects: Vec<GtObject>,
}

/// One row of a detections file. Mask paths are relative to the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: String,
    pub category: String,
    pub score: f64,
    pub mask: PathBuf,
    /// Ranked yaw hypotheses; when absent the pose network supplies them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose_yaws: Option<Vec<f64>>,
}

/// A loaded scene directory.
#[derive(Debug, Clone)]
pub struct SceneSet {
    pub dir: PathBuf,
    pub k: CameraIntrinsics,
    pub frame: GeocentricFrame,
    pub records: Vec<SceneRecord>,
}

fn footprint_radius(b: &OrientedBox3D) -> f64 {
    b.half_extents.x.hypot(b.half_extents.z)
}

/// Renders `cfg.n_scenes` scenes into `dir` and writes the camera, the
/// scene index and an oracle detections file (ground-truth masks, score 1).
/// Scene `i` draws from substream `(seed, stream, i)`.
#[allow(clippy::too_many_arguments)]
pub fn generate_scenes(
    library: &ModelLibrary,
    stats: &StatsFile,
    k: &CameraIntrinsics,
    frame: &GeocentricFrame,
    cfg: &SceneSetConfig,
    seed: u64,
    stream: &str,
    dir: &Path,
) -> Result<Vec<SceneRecord>> {
    let cats: Vec<&str> = library.categories().collect();
    if cats.is_empty() {
        return Err(Error::InvalidArgument("empty model library".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let records: Vec<SceneRecord> = (0..cfg.n_scenes)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, stream, &[i as u64]);
            let mut chosen = Vec::new();
            for j in 0..cfg.objects_per_scene {
                let slot = i * cfg.objects_per_scene + j;
                let cat = cats[slot % cats.len()];
                let models = library.models(cat)?;
                let model = &models[(slot / cats.len()) % models.len()];
                let st = stats.get(cat).ok_or_else(|| Error::UnknownCategory(cat.to_string()))?;
                let mut placed = None;
                for _ in 0..PLACEMENT_TRIES {
                    let s = sample_scene(&model.mesh, st, frame, k, &mut rng)?;
                    let b = box_from_model(&model.mesh, &s.placement)?;
                    let clear = chosen.iter().all(|(_, _, ob): &(&str, _, OrientedBox3D)| {
                        let d = (b.center - ob.center).xz().norm();
                        d > footprint_radius(&b) + footprint_radius(ob) + CLEARANCE
                    });
                    if clear {
                        placed = Some((s.placement, b));
                        break;
                    }
                }
                let (placement, b) = placed.ok_or(Error::SamplingFailed(PLACEMENT_TRIES))?;
                chosen.push((cat, (model, placement), b));
            }
            let items: Vec<SceneItem> = chosen.iter().map(|(_, (m, p), _)| SceneItem { mesh: &m.mesh, placement: *p }).collect();
            let scene = render_scene(&items, true, frame, k, false)?;
            let image_id = format!("scene_{i:04}");
            let depth = PathBuf::from(format!("{image_id}_depth.png"));
            io::save_depth_png(&scene.depth, &dir.join(&depth))?;
            let mut objects = Vec::new();
            for (j, (cat, (m, p), b)) in chosen.iter().enumerate() {
                let mask = scene.item_mask(j);
                let mask_path = PathBuf::from(format!("{image_id}_obj{j}_mask.png"));
                io::save_mask_png(&mask, &dir.join(&mask_path))?;
                objects.push(GtObject {
                    category: cat.to_string(),
                    model: m.name.clone(),
                    placement: *p,
                    mask: mask_path,
                    box3d: *b,
                    visible_pixels: mask.count(),
                    difficult: mask.count() < cfg.min_visible,
                });
            }
            Ok(SceneRecord { image_id, depth, objects })
        })
        .collect::<Result<_>>()?;
    io::write_json(&dir.join(CAMERA_FILE), &CameraDoc::new(k, frame))?;
    io::write_jsonl(&dir.join(SCENES_FILE), &records)?;
    let detections: Vec<DetectionRecord> = records
        .iter()
        .flat_map(|r| {
            r.objects.iter().filter(|o| o.visible_pixels > 0).map(move |o| DetectionRecord {
                image_id: r.image_id.clone(),
                category: o.category.clone(),
                score: 1.0,
                mask: o.mask.clone(),
                pose_yaws: None,
            })
        })
        .collect();
    io::write_jsonl(&dir.join(DETECTIONS_FILE), &detections)?;
    Ok(records)
}

impl SceneSet {
    pub fn load(dir: &Path) -> Result<Self> {
        let (k, frame) = CameraDoc::load(&dir.join(CAMERA_FILE))?;
        let records = io::read_jsonl(&dir.join(SCENES_FILE))?;
        Ok(Self { dir: dir.to_path_buf(), k, frame, records })
    }

    pub fn depth(&self, r: &SceneRecord) -> Result<DepthImage> {
        let d = io::load_depth_png(&self.dir.join(&r.depth))?;
        d.check_dims(self.k.width, self.k.height)?;
        Ok(d)
    }

    pub fn mask(&self, o: &GtObject) -> Result<Mask> {
        io::load_mask_png(&self.dir.join(&o.mask))
    }

    pub fn observations(&self) -> Result<BTreeMap<String, Observation>> {
        self.records.iter().map(|r| Ok((r.image_id.clone(), Observation { depth: self.depth(r)?, k: self.k, frame: self.frame }))).collect()
    }

    pub fn ground_truth(&self) -> Result<Vec<GroundTruthInstance>> {
        let mut out = Vec::new();
        for r in &self.records {
            for o in &r.objects {
                out.push(GroundTruthInstance {
                    image_id: r.image_id.clone(),
                    category: o.category.clone(),
                    mask: self.mask(o)?,
                    box3d: Some(o.box3d),
                    difficult: o.difficult,
                });
            }
        }
        Ok(out)
    }

    /// Ground-truth placements written as predictions with score 1.
    pub fn oracle_predictions(&self) -> Vec<ModelPrediction> {
        self.records
            .iter()
            .flat_map(|r| {
                r.objects.iter().map(move |o| ModelPrediction {
                    image_id: r.image_id.clone(),
                    category: o.category.clone(),
                    score: 1.0,
                    model: o.model.clone(),
                    placement: o.placement,
                })
            })
            .collect()
    }

    pub fn oracle_boxes(&self) -> Vec<BoxPrediction> {
        self.records
            .iter()
            .flat_map(|r| {
                r.objects.iter().map(move |o| BoxPrediction {
                    image_id: r.image_id.clone(),
                    category: o.category.clone(),
                    score: 1.0,
                    box3d: o.box3d,
                })
            })
            .collect()
    }
}
