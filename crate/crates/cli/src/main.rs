use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use scene_align::render::Placement;
use scene_align_cli::commands::{self, with_threads};
use scene_align_cli::{CliError, CliResult, PipelineConfig};

#[derive(Parser)]
#[command(name = "scene-align", version, about = "Fit CAD models to depth images with gravity-constrained search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Pipeline configuration (JSON).
    #[arg(long, short)]
    config: PathBuf,
    /// Override a config value, e.g. `--set search.n_scale=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Render the pose-labeled crop dataset.
    Synth(ConfigArgs),
    /// Render synthetic evaluation scenes with ground truth and oracle detections.
    SynthScenes {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Substream name; different names give independent scene sets.
        #[arg(long, default_value = "scenes-test")]
        stream: String,
    },
    /// Train the pose network on the crop dataset.
    TrainPose(ConfigArgs),
    /// Pose accuracy curves on a crop dataset or on scene ground truth.
    EvalPose {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, conflicts_with = "scenes")]
        dataset: Option<PathBuf>,
        #[arg(long)]
        scenes: Option<PathBuf>,
    },
    /// Search models, scales and poses for each detection and keep the best fit.
    Fit {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Detections JSONL; defaults to the scene directory's oracle detections.
        #[arg(long)]
        detections: Option<PathBuf>,
        /// Depth PNG (millimeters) of a single image.
        #[arg(long, required_unless_present = "scenes", conflicts_with = "scenes")]
        depth: Option<PathBuf>,
        /// Camera JSON for `--depth`; defaults to `paths.camera`.
        #[arg(long, requires = "depth")]
        camera: Option<PathBuf>,
        #[arg(long, requires = "depth")]
        image_id: Option<String>,
        /// Fit every image of a scene directory.
        #[arg(long)]
        scenes: Option<PathBuf>,
        /// Output directory; defaults to `<output_dir>/fit`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the candidate selector from fit diagnostics.
    SelectTrain {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, required = true, num_args = 1..)]
        diagnostics: Vec<PathBuf>,
    },
    /// modelAP of placed-model predictions at the configured t_agree and at infinity.
    EvalModelap {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// 3D detection AP of box predictions.
    EvalDet3d {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        boxes: PathBuf,
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Debug render of one placed library model.
    Render {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        model: String,
        /// Placement JSON, e.g. `{"s":1,"theta":0.5,"t":[0,-1.3,3]}`.
        #[arg(long)]
        placement: String,
        #[arg(long)]
        floor: bool,
        /// Output prefix; writes `<out>_depth.png` and `<out>_mask.png`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every stage end to end under `paths.output_dir`.
    Pipeline(ConfigArgs),
    /// Write a demo model library, stats, camera and config.
    InitDemo {
        #[arg(long)]
        dir: PathBuf,
        /// Comma-separated categories; all demo categories when empty.
        #[arg(long, value_delimiter = ',')]
        categories: Vec<String>,
        #[arg(long, default_value_t = 3)]
        per_category: usize,
        /// 160x120 camera instead of 640x480.
        #[arg(long)]
        small_camera: bool,
    },
}

fn load(a: &ConfigArgs) -> CliResult<PipelineConfig> {
    PipelineConfig::load(&a.config, &a.overrides)
}

fn print<T: Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("report serializes"));
}

fn run_config<T: Serialize + Send>(a: &ConfigArgs, f: impl FnOnce(&PipelineConfig) -> CliResult<T> + Send) -> CliResult<()> {
    let cfg = load(a)?;
    let out = with_threads(&cfg, || f(&cfg))?;
    print(&out);
    Ok(())
}

fn out_or(cfg: &PipelineConfig, out: &Option<PathBuf>, default: &str) -> PathBuf {
    out.clone().unwrap_or_else(|| cfg.paths.output_dir.join(default))
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth(a) => run_config(&a, commands::cmd_synth),
        Command::SynthScenes { cfg, out, stream } => run_config(&cfg, |c| commands::cmd_synth_scenes(c, out.as_deref(), &stream)),
        Command::TrainPose(a) => run_config(&a, commands::cmd_train_pose),
        Command::EvalPose { cfg, dataset, scenes } => {
            run_config(&cfg, |c| commands::cmd_eval_pose(c, dataset.as_deref(), scenes.as_deref()))
        }
        Command::Fit { cfg, detections, depth, camera, image_id, scenes, out } => run_config(&cfg, |c| {
            let out = out_or(c, &out, "fit");
            let r = match (&scenes, &depth) {
                (Some(s), _) => commands::cmd_fit_scenes(c, s, detections.as_deref(), &out)?,
                (None, Some(d)) => {
                    let det = detections.as_deref().ok_or_else(|| CliError::Config("--detections is required with --depth".into()))?;
                    commands::cmd_fit(c, det, d, camera.as_deref(), image_id.as_deref(), &out)?
                }
                (None, None) => return Err(CliError::Config("either --scenes or --depth is required".into())),
            };
            Ok(serde_json::json!({
                "predictions": r.predictions.len(),
                "detections": r.diagnostics.len(),
                "candidates": r.diagnostics.iter().map(|d| d.n_candidates).collect::<Vec<_>>(),
                "out": out,
            }))
        }),
        Command::SelectTrain { cfg, diagnostics } => run_config(&cfg, |c| commands::cmd_select_train(c, &diagnostics)),
        Command::EvalModelap { cfg, predictions, scenes, out } => {
            run_config(&cfg, |c| commands::cmd_eval_modelap(c, &predictions, &scenes, &out_or(c, &out, "eval")))
        }
        Command::EvalDet3d { cfg, boxes, scenes, out } => {
            run_config(&cfg, |c| commands::cmd_eval_det3d(c, &boxes, &scenes, &out_or(c, &out, "eval")))
        }
        Command::Render { cfg, model, placement, floor, out } => {
            let p: Placement = serde_json::from_str(&placement).map_err(|e| CliError::Config(format!("placement: {e}")))?;
            run_config(&cfg, |c| commands::cmd_render(c, &model, &p, floor, &out))
        }
        Command::Pipeline(a) => run_config(&a, commands::cmd_pipeline),
        Command::InitDemo { dir, categories, per_category, small_camera } => {
            let path = commands::init_demo(Path::new(&dir), &categories, per_category, small_camera)?;
            print(&path);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
