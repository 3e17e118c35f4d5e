use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use autolabel::dataset::{self, AnnotationFile, DatasetWriter, LocalizationMethod};
use autolabel::metrics::{self, FrameEvaluation, PixelErrorMode};
use autolabel::pipeline::{self, LabelSource, SceneConfig, WriteOptions};
use autolabel::{CameraModel, Error, PolygonAnnotation};

#[derive(Parser)]
#[command(name = "autolabel", version, about = "Robot-assisted polygon labeling on a simulated rig")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the labeling pipeline and write a dataset.
    Scan(ScanArgs),
    /// Compare a predicted dataset against a reference dataset.
    Evaluate(EvaluateArgs),
    /// Simulate home-return trials of the arm.
    Repeatability(RepeatabilityArgs),
    /// Monte-Carlo of fiducial localization error vs visible tags and corner noise.
    FiducialSweep(SweepArgs),
    /// Write the simulated operator labels of the initial frame.
    LabelInitial(LabelInitialArgs),
    /// Write the default scene and camera files.
    Defaults(DefaultsArgs),
}

#[derive(Args, Clone)]
struct SceneArgs {
    /// Scene configuration (JSON). Missing fields take default values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Camera calibration (JSON).
    #[arg(long)]
    calib: Option<PathBuf>,
    /// Overrides the seed from the scene file.
    #[arg(long)]
    seed: Option<u64>,
    /// Per-axis translation repeatability bound, mm, as x,y,z.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    trans_bound_mm: Option<Vec<f64>>,
    #[arg(long)]
    rot_bound_deg: Option<f64>,
    #[arg(long)]
    range_sigma_mm: Option<f64>,
    #[arg(long)]
    tag_sigma_px: Option<f64>,
    /// Disable all noise.
    #[arg(long)]
    no_noise: bool,
}

#[derive(Args)]
struct ScanArgs {
    #[command(flatten)]
    scene: SceneArgs,
    /// Initial-frame labels (annotation JSON). Defaults to exact simulated labels.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long, default_value_t = 400)]
    frames: usize,
    #[arg(long, value_enum, default_value_t = Method::Odometry)]
    method: Method,
    #[arg(long)]
    out: PathBuf,
    /// Also write the simulator's exact labels as a dataset here.
    #[arg(long)]
    truth_out: Option<PathBuf>,
    /// Render camera images.
    #[arg(long)]
    images: bool,
    /// Render images with the mask outline drawn on them (implies --images).
    #[arg(long)]
    overlay: bool,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Write the report JSON here instead of standard output.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Per-frame values as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PixelMode::PerObject)]
    pixel_mode: PixelMode,
    /// Operator time for the initial frame, seconds.
    #[arg(long, default_value_t = 119.0)]
    initial_label_sec: f64,
    /// Print the comparison table, with the imported manual row, to standard error.
    #[arg(long)]
    table: bool,
}

#[derive(Args)]
struct RepeatabilityArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[arg(long, default_value_t = 300)]
    trials: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
    tags: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,1.0")]
    sigmas: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Args)]
struct LabelInitialArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DefaultsArgs {
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Odometry,
    Fiducial,
}

impl From<Method> for LocalizationMethod {
    fn from(m: Method) -> Self {
        match m {
            Method::Odometry => LocalizationMethod::Odometry,
            Method::Fiducial => LocalizationMethod::Fiducial,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PixelMode {
    PerObject,
    PerFrame,
}

impl From<PixelMode> for PixelErrorMode {
    fn from(m: PixelMode) -> Self {
        match m {
            PixelMode::PerObject => PixelErrorMode::PerObject,
            PixelMode::PerFrame => PixelErrorMode::PerFrame,
        }
    }
}

enum Failure {
    Validation(Error),
    Runtime(Error),
}

type CliResult<T> = std::result::Result<T, Failure>;

fn invalid<T>(r: autolabel::Result<T>) -> CliResult<T> {
    r.map_err(Failure::Validation)
}

fn runtime<T>(r: autolabel::Result<T>) -> CliResult<T> {
    r.map_err(|e| match e {
        Error::Config(_) => Failure::Validation(e),
        e => Failure::Runtime(e),
    })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> autolabel::Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> autolabel::Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> autolabel::Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> autolabel::Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn load_scene(args: &SceneArgs) -> autolabel::Result<(SceneConfig, CameraModel)> {
    let mut config: SceneConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => SceneConfig::default(),
    };
    let cam: CameraModel = match &args.calib {
        Some(p) => read_json(p)?,
        None => CameraModel::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if args.no_noise {
        config.noise = autolabel::NoiseModel::zero();
    }
    if let Some(t) = &args.trans_bound_mm {
        config.noise.trans_bound = Vector3::new(t[0], t[1], t[2]) * 1e-3;
    }
    if let Some(v) = args.rot_bound_deg {
        config.noise.rot_bound_deg = v;
    }
    if let Some(v) = args.range_sigma_mm {
        config.noise.range_sigma = v * 1e-3;
    }
    if let Some(v) = args.tag_sigma_px {
        config.noise.tag_pixel_sigma = v;
    }
    config.validate()?;
    Ok((config, cam))
}

fn thread_pool(jobs: usize) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Failure::Runtime(Error::Config(format!("thread pool: {e}"))))
}

/// Deterministic summary written next to the manifest.
#[derive(Serialize)]
struct RunSummary {
    method: LocalizationMethod,
    seed: u64,
    frames_requested: usize,
    frames_written: usize,
    skipped_frames: Vec<u64>,
    /// Objects dropped because a vertex fell behind the camera, per frame id.
    hidden_objects: BTreeMap<u64, Vec<usize>>,
    range_estimate: autolabel::RangeEstimate,
    initial_labels: usize,
}

/// Wall-clock figures. Kept apart from the deterministic outputs.
#[derive(Serialize, Deserialize)]
struct Timing {
    machine_sec: f64,
    initial_label_sec: f64,
    frames: usize,
}

fn scan(args: ScanArgs) -> CliResult<()> {
    let start = Instant::now();
    let (config, cam) = invalid(load_scene(&args.scene))?;
    if args.frames == 0 {
        return Err(Failure::Validation(Error::Config("--frames must be at least 1".into())));
    }
    let labels = match &args.init {
        Some(p) => Some(invalid(load_initial_labels(p))?),
        None => None,
    };
    if args.out.is_file() {
        return Err(Failure::Validation(Error::Config(format!(
            "--out {} is a file",
            args.out.display()
        ))));
    }
    let method: LocalizationMethod = args.method.into();
    let pool = thread_pool(args.jobs)?;

    pool.install(|| {
        eprintln!("simulating {} frames ({method})", args.frames);
        let run = runtime(pipeline::run(&config, &cam, args.frames, method, labels))?;
        if !run.skipped.is_empty() {
            eprintln!("{} frames without a usable tag pose were skipped", run.skipped.len());
        }
        let options = WriteOptions {
            images: args.images || args.overlay,
            overlay: args.overlay,
        };
        eprintln!("writing {}", args.out.display());
        let mut writer = runtime(DatasetWriter::create(&args.out, &cam))?;
        let records = runtime(pipeline::write_run(&run, &config, &cam, &mut writer, LabelSource::Predicted, options))?;
        if let Some(truth_dir) = &args.truth_out {
            eprintln!("writing {}", truth_dir.display());
            let mut tw = runtime(DatasetWriter::create(truth_dir, &cam))?;
            runtime(pipeline::write_run(&run, &config, &cam, &mut tw, LabelSource::Truth, options))?;
        }
        let summary = RunSummary {
            method,
            seed: config.seed,
            frames_requested: args.frames,
            frames_written: records.len(),
            skipped_frames: run.skipped.clone(),
            hidden_objects: run
                .frames
                .iter()
                .filter(|f| !f.predicted.hidden.is_empty())
                .map(|f| (f.predicted.frame_id, f.predicted.hidden.clone()))
                .collect(),
            range_estimate: run.range,
            initial_labels: run.initial_labels.len(),
        };
        runtime(write_json(&args.out.join("run.json"), &summary))?;
        let timing = Timing {
            machine_sec: start.elapsed().as_secs_f64(),
            initial_label_sec: config.initial_label_sec,
            frames: records.len(),
        };
        runtime(write_json(&args.out.join("timing.json"), &timing))?;
        eprintln!(
            "done: {} frames in {:.2} s (range {:.4} m)",
            records.len(),
            timing.machine_sec,
            run.range.mean
        );
        Ok(())
    })
}

fn load_initial_labels(path: &Path) -> autolabel::Result<Vec<PolygonAnnotation>> {
    Ok(dataset::read_annotation(path)?.polygons)
}

fn evaluate(args: EvaluateArgs) -> CliResult<()> {
    let pred = invalid(dataset::read_manifest(&args.pred))?;
    let truth = invalid(dataset::read_manifest(&args.truth))?;
    let truth_by_id: BTreeMap<u64, &dataset::DatasetRecord> = truth.iter().map(|r| (r.frame_id, r)).collect();
    let missing: Vec<u64> = pred
        .iter()
        .map(|r| r.frame_id)
        .filter(|id| !truth_by_id.contains_key(id))
        .collect();
    if !missing.is_empty() {
        return Err(Failure::Validation(Error::InconsistentData(format!(
            "frames missing from {}: {missing:?}",
            args.truth.display()
        ))));
    }
    if pred.is_empty() {
        return Err(Failure::Validation(Error::InconsistentData("predicted dataset is empty".into())));
    }

    let mut evals: Vec<FrameEvaluation> = Vec::with_capacity(pred.len());
    for p in &pred {
        let t = truth_by_id[&p.frame_id];
        let e = runtime(evaluate_pair(&args.pred, p, &args.truth, t).map_err(|e| e.in_frame(p.frame_id)))?;
        if let Some(e) = e {
            evals.push(e);
        }
    }

    let machine_sec = read_json::<Timing>(&args.pred.join("timing.json"))
        .map(|t| t.machine_sec)
        .unwrap_or(0.0);
    let frame_time = runtime(metrics::mean_frame_time(args.initial_label_sec, machine_sec, pred.len()))?;
    let method = pred[0].localization_method.to_string();
    let report = runtime(metrics::summarize(&method, &evals, frame_time, args.pixel_mode.into()))?;

    match &args.report {
        Some(p) => runtime(write_json(p, &report))?,
        None => println!("{}", serde_json::to_string_pretty(&report).expect("report serializes")),
    }
    if let Some(p) = &args.csv {
        runtime(write_text(p, &metrics::frames_csv(&evals)))?;
    }
    if args.table {
        eprint!("{}", metrics::render_table(std::slice::from_ref(&report), true));
    }
    Ok(())
}

/// Object error from the annotations, pixel error from the stored masks.
fn evaluate_pair(
    pred_root: &Path,
    pred: &dataset::DatasetRecord,
    truth_root: &Path,
    truth: &dataset::DatasetRecord,
) -> autolabel::Result<Option<FrameEvaluation>> {
    let pa = dataset::read_annotation(&pred_root.join(&pred.annotation_path))?;
    let ta = dataset::read_annotation(&truth_root.join(&truth.annotation_path))?;
    let pm = dataset::read_mask(&pred_root.join(&pred.mask_path))?;
    let tm = dataset::read_mask(&truth_root.join(&truth.mask_path))?;
    pm.check_dims(&tm)?;
    let cam = CameraModel {
        width: tm.width(),
        height: tm.height(),
        ..CameraModel::default()
    };
    let counts = match metrics::object_error(&pa, &ta, &cam) {
        Ok(c) => c,
        Err(Error::UndefinedMetric(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    Ok(Some(FrameEvaluation {
        frame_id: truth.frame_id,
        objects: counts.total,
        wrong_objects: counts.wrong,
        differing_pixels: metrics::pixel_difference(&pm, &tm)?,
    }))
}

fn repeatability(args: RepeatabilityArgs) -> CliResult<()> {
    let (config, _) = invalid(load_scene(&args.scene))?;
    if args.trials == 0 {
        return Err(Failure::Validation(Error::Config("--trials must be at least 1".into())));
    }
    let trials = runtime(pipeline::repeatability_trials(&config, args.trials))?;
    let stats = metrics::repeatability_stats(&trials);
    runtime(create_dir(&args.out))?;
    runtime(write_json(&args.out.join("repeatability.json"), &stats))?;
    runtime(write_text(&args.out.join("repeatability.csv"), &metrics::repeatability_csv(&trials)))?;
    eprintln!(
        "max |dx| {:.4} mm, |dy| {:.4} mm, |dz| {:.4} mm, rotation {:.4} deg over {} trials",
        stats.max_translation[0] * 1e3,
        stats.max_translation[1] * 1e3,
        stats.max_translation[2] * 1e3,
        stats.max_angle.to_degrees(),
        stats.trials
    );
    Ok(())
}

fn fiducial_sweep(args: SweepArgs) -> CliResult<()> {
    let (config, cam) = invalid(load_scene(&args.scene))?;
    if args.trials == 0 {
        return Err(Failure::Validation(Error::Config("--trials must be at least 1".into())));
    }
    let pool = thread_pool(args.jobs)?;
    let points = pool.install(|| runtime(pipeline::fiducial_sweep(&config, &cam, &args.tags, &args.sigmas, args.trials)))?;
    runtime(write_text(&args.out, &pipeline::sweep_csv(&points)))?;
    for p in &points {
        eprintln!(
            "tags {} sigma {:.2} px: median {:.2} mm / {:.3} deg ({} failures)",
            p.tags,
            p.pixel_sigma,
            p.median_translation_m * 1e3,
            p.median_rotation_deg,
            p.failures
        );
    }
    Ok(())
}

fn label_initial(args: LabelInitialArgs) -> CliResult<()> {
    let (config, cam) = invalid(load_scene(&args.scene))?;
    let initial = autolabel::simulator::initial_frame(
        config.seed,
        &config.board,
        &config.mount,
        config.initial_distance,
        &config.noise,
    );
    let mut frame = autolabel::simulator::truth_annotation(&config.board, &initial.true_pose, &cam, 0);
    frame.polygons = pipeline::operator_labels(&config.board, &initial, &cam);
    let frame = dataset::quantize_frame(&frame);
    let pose = runtime(initial.reported_pose.to_pose_vector())?;
    let file: AnnotationFile = runtime(dataset::annotation_for(&frame, &pose, config.initial_distance, LocalizationMethod::Odometry))?;
    runtime(write_text(&args.out, &(runtime(file.to_json())? + "\n")))?;
    Ok(())
}

fn defaults(args: DefaultsArgs) -> CliResult<()> {
    runtime(create_dir(&args.out))?;
    runtime(write_json(&args.out.join("scene.json"), &SceneConfig::default()))?;
    runtime(write_json(&args.out.join("camera.json"), &CameraModel::default()))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Scan(a) => scan(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Repeatability(a) => repeatability(a),
        Command::FiducialSweep(a) => fiducial_sweep(a),
        Command::LabelInitial(a) => label_initial(a),
        Command::Defaults(a) => defaults(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
