//! Pipeline configuration: one JSON document plus `--set key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use scene_align::align::SearchConfig;
use scene_align::eval::EvalConfig;
use scene_align::posenet::{NetworkSpec, TrainConfig};
use scene_align::synthgen::DatasetConfig;

use crate::error::{CliError, CliResult};

/// File locations. Relative paths are resolved against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    /// Model library manifest.
    pub library: Option<PathBuf>,
    /// Per-category footprint statistics.
    pub stats: Option<PathBuf>,
    /// Camera intrinsics and geocentric frame.
    pub camera: Option<PathBuf>,
    /// Synthetic crop dataset; defaults to `<output_dir>/dataset`.
    pub dataset: Option<PathBuf>,
    /// Pose network weights; defaults to `<output_dir>/pose.pnw`.
    pub weights: Option<PathBuf>,
    /// Weights to resume training from.
    pub init_weights: Option<PathBuf>,
    /// Candidate selector; defaults to `<output_dir>/selector.json`.
    pub selector: Option<PathBuf>,
    /// Synthetic evaluation scenes; defaults to `<output_dir>/scenes`.
    pub scenes: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            library: None,
            stats: None,
            camera: None,
            dataset: None,
            weights: None,
            init_weights: None,
            selector: None,
            scenes: None,
            output_dir: PathBuf::from("out"),
        }
    }
}

/// Synthetic evaluation scenes: several library models on one floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSetConfig {
    pub n_scenes: usize,
    pub objects_per_scene: usize,
    /// Objects with fewer visible pixels are marked difficult.
    pub min_visible: usize,
}

impl Default for SceneSetConfig {
    fn default() -> Self {
        Self { n_scenes: 10, objects_per_scene: 2, min_visible: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Worker threads; `None` uses the available parallelism. The
    /// `SCENE_ALIGN_THREADS` environment variable takes precedence.
    pub threads: Option<usize>,
    pub paths: Paths,
    pub dataset: DatasetConfig,
    /// Network description; `None` uses the standard architecture for the
    /// library's categories, `dataset.n_posebin` and `dataset.crop_size`.
    pub network: Option<NetworkSpec>,
    pub train: TrainConfig,
    pub search: SearchConfig,
    pub eval: EvalConfig,
    /// L2 penalty of the candidate selector.
    pub selector_lambda: f64,
    pub scenes: SceneSetConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: None,
            paths: Paths::default(),
            dataset: DatasetConfig::default(),
            network: None,
            train: TrainConfig::default(),
            search: SearchConfig::default(),
            eval: EvalConfig::default(),
            selector_lambda: 1.0,
            scenes: SceneSetConfig::default(),
        }
    }
}

pub const THREADS_ENV: &str = "SCENE_ALIGN_THREADS";

impl PipelineConfig {
    /// Reads `path`, applies the overrides and validates the result.
    pub fn load(path: &Path, overrides: &[String]) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let doc: Value = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::from_value(doc, overrides, base)
    }

    /// Builds a config from a JSON value. Every key of `doc` and every
    /// override must name a field of the schema.
    pub fn from_value(mut doc: Value, overrides: &[String], base: &Path) -> CliResult<Self> {
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let mut cfg: PipelineConfig = serde_json::from_value(doc.clone()).map_err(|e| CliError::Config(e.to_string()))?;
        let canonical = serde_json::to_value(&cfg).expect("config serializes");
        if let Some(key) = unknown_key(&doc, &canonical, "") {
            return Err(CliError::Config(format!("unknown key `{key}`")));
        }
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let p = &mut self.paths;
        for slot in [
            &mut p.library,
            &mut p.stats,
            &mut p.camera,
            &mut p.dataset,
            &mut p.weights,
            &mut p.init_weights,
            &mut p.selector,
            &mut p.scenes,
        ] {
            if let Some(v) = slot.as_mut() {
                *v = base.join(&*v);
            }
        }
        p.output_dir = base.join(&p.output_dir);
    }

    /// Value checks that need no file access.
    pub fn validate(&self) -> CliResult<()> {
        let wrap = |what: &str, e: scene_align::Error| CliError::Config(format!("{what}: {e}"));
        if self.threads == Some(0) {
            return Err(CliError::Config("threads must be positive".into()));
        }
        if self.dataset.n_posebin == 0 || self.dataset.crop_size == 0 {
            return Err(CliError::Config("dataset.n_posebin and dataset.crop_size must be positive".into()));
        }
        self.train.validate().map_err(|e| wrap("train", e))?;
        self.search.validate().map_err(|e| wrap("search", e))?;
        self.eval.validate().map_err(|e| wrap("eval", e))?;
        if self.search.top_k > self.dataset.n_posebin {
            return Err(CliError::Config(format!(
                "search.top_k = {} exceeds dataset.n_posebin = {}",
                self.search.top_k, self.dataset.n_posebin
            )));
        }
        if self.train.input_side != self.dataset.crop_size {
            return Err(CliError::Config(format!(
                "train.input_side = {} differs from dataset.crop_size = {}",
                self.train.input_side, self.dataset.crop_size
            )));
        }
        if let Some(net) = &self.network {
            net.validate().map_err(|e| wrap("network", e))?;
            if net.n_posebin != self.dataset.n_posebin || net.input_side != self.dataset.crop_size {
                return Err(CliError::Config("network must match dataset.n_posebin and dataset.crop_size".into()));
            }
        }
        if !(self.selector_lambda >= 0.0 && self.selector_lambda.is_finite()) {
            return Err(CliError::Config("selector_lambda must be finite and non-negative".into()));
        }
        if self.scenes.objects_per_scene == 0 {
            return Err(CliError::Config("scenes.objects_per_scene must be positive".into()));
        }
        Ok(())
    }

    /// Thread count: environment, then config, then available parallelism.
    pub fn thread_count(&self) -> CliResult<usize> {
        if let Ok(v) = std::env::var(THREADS_ENV) {
            return match v.trim().parse::<usize>() {
                Ok(n) if n > 0 => Ok(n),
                _ => Err(CliError::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
            };
        }
        Ok(self.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())))
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.paths.dataset.clone().unwrap_or_else(|| self.paths.output_dir.join("dataset"))
    }

    pub fn weights_path(&self) -> PathBuf {
        self.paths.weights.clone().unwrap_or_else(|| self.paths.output_dir.join("pose.pnw"))
    }

    pub fn selector_path(&self) -> PathBuf {
        self.paths.selector.clone().unwrap_or_else(|| self.paths.output_dir.join("selector.json"))
    }

    pub fn scenes_dir(&self) -> PathBuf {
        self.paths.scenes.clone().unwrap_or_else(|| self.paths.output_dir.join("scenes"))
    }
}

/// The configured path, which must exist.
pub fn require<'a>(path: &'a Option<PathBuf>, field: &str) -> CliResult<&'a Path> {
    let p = path.as_deref().ok_or_else(|| CliError::Config(format!("paths.{field} is not set")))?;
    existing(p, field)
}

pub fn existing<'a>(p: &'a Path, what: &str) -> CliResult<&'a Path> {
    if p.exists() {
        Ok(p)
    } else {
        Err(CliError::MissingInput { what: what.to_string(), path: p.to_path_buf() })
    }
}

/// `a.b.c=value`; the value is parsed as JSON and kept as a string otherwise.
fn apply_override(doc: &mut Value, spec: &str) -> CliResult<()> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| CliError::Config(format!("override `{spec}` is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("bad override key `{key}`")));
    }
    let mut node = doc;
    for (i, part) in parts.iter().enumerate() {
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
        let obj = node.as_object_mut().ok_or_else(|| CliError::Config(format!("`{}` is not an object", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    unreachable!("key has at least one part")
}

/// First key path of `given` missing from `canonical`.
fn unknown_key(given: &Value, canonical: &Value, prefix: &str) -> Option<String> {
    match (given, canonical) {
        (Value::Object(g), Value::Object(c)) => g.iter().find_map(|(k, v)| {
            let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match c.get(k) {
                None => Some(path),
                Some(cv) => unknown_key(v, cv, &path),
            }
        }),
        (Value::Array(g), Value::Array(c)) => {
            g.iter().zip(c).enumerate().find_map(|(i, (gv, cv))| unknown_key(gv, cv, &format!("{prefix}[{i}]")))
        }
        _ => None,
    }
}
