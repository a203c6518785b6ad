//! `microyolo`: dataset generation, training, quantization, evaluation,
//! inference, deployability checks and device profiling.
//!
//! Exit codes: 0 on success, 1 for usage or validation errors, 2 for runtime
//! failures. Every command writes `manifest.json` into its output directory.

mod manifest;
mod models;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use microyolo_core::checkpoint::{export_quantized, Checkpoint};
use microyolo_core::config::{check_deployability, DeviceProfile};
use microyolo_core::data::{
    load_jsonl, load_samples, load_voc_dir, preprocess_to, split_90_10, synth_generate, ClassTable, MaxObjects,
    SampleDesc, SynthConfig,
};
use microyolo_core::eval::{eval_matrix, evaluate, ApMethod, Detector, EvalSettings};
use microyolo_core::head::{LossWeights, NegativeSize};
use microyolo_core::profile::{compare_report, read_measurements};
use microyolo_core::train::{calibrate, train, TrainConfig, TrainOutput};

use manifest::Manifest;
use models::{load_detector, resolve_model, DetectorPrecision};

#[derive(Parser, Debug)]
#[command(name = "microyolo", version, about = "Tiny int8 YOLO detector toolkit", args_override_self = true)]
struct Cli {
    /// Random seed for initialization, shuffling, splitting and data
    /// generation [integer]
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// JSON options file, e.g. a `manifest.json` from an earlier run; its
    /// options become defaults that flags on the command line override [path]
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Output directory [path]
    #[arg(long, global = true, default_value = "out", value_name = "DIR")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(tag = "command", content = "options", rename_all = "kebab-case")]
enum Command {
    /// Train a model (float epochs, then quantization-aware epochs)
    Train(TrainArgs),
    /// Compute per-class AP and mAP on an annotated image set
    Eval(EvalArgs),
    /// Run a model on one image and print detections as JSON lines
    Infer(InferArgs),
    /// Calibrate activation scales for a float checkpoint
    Quantize(QuantizeArgs),
    /// Write the int8 model blob and config text of a quantized checkpoint
    Export(ExportArgs),
    /// Check a model config against a device's memory and input limits
    CheckDeploy(CheckDeployArgs),
    /// Deployment metrics from measured latency and power per device
    Profile(ProfileArgs),
    /// Generate a synthetic shapes dataset
    DatasetGen(DatasetGenArgs),
}

#[derive(Args, Debug, Serialize)]
struct TrainArgs {
    /// Training annotations: a JSONL file or a VOC directory [path]
    #[arg(long)]
    data: PathBuf,
    /// Validation annotations; without it the data is split 90/10 [path]
    #[arg(long)]
    val_data: Option<PathBuf>,
    /// Model config file or built-in name (ref-88, ref-88-voc3) [path|name]
    #[arg(long, default_value = "ref-88")]
    model: String,
    /// Class table for VOC data, `name id` per line [path]
    #[arg(long)]
    classes: Option<PathBuf>,
    /// Floating-point epochs [epochs]
    #[arg(long, default_value_t = 350)]
    epochs_float: u32,
    /// Quantization-aware epochs [epochs]
    #[arg(long, default_value_t = 300)]
    epochs_qat: u32,
    /// Initial learning rate [per step]
    #[arg(long, default_value_t = 5e-4)]
    lr: f32,
    /// Initial learning rate of the QAT phase; defaults to --lr [per step]
    #[arg(long)]
    lr_qat: Option<f32>,
    /// L2 weight decay [coefficient]
    #[arg(long, default_value_t = 5e-4)]
    weight_decay: f32,
    /// Heavy-ball momentum, 0 for plain SGD [coefficient in 0..1]
    #[arg(long, default_value_t = 0.0)]
    momentum: f32,
    /// Images per SGD step [images]
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Learning-rate milestones within each phase [fractions of the phase, comma separated]
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.8")]
    milestones: Vec<f32>,
    /// Learning-rate multiplier at each milestone [factor]
    #[arg(long, default_value_t = 0.1)]
    lr_factor: f32,
    /// Train only on images with at most this many objects [objects, or inf]
    #[arg(long, default_value = "inf")]
    max_objects: String,
    /// Random horizontal flips [flag]
    #[arg(long)]
    hflip: bool,
    /// Coordinate loss weight [factor]
    #[arg(long, default_value_t = 5.0)]
    lambda_coord: f32,
    /// No-object confidence loss weight [factor]
    #[arg(long, default_value_t = 0.5)]
    lambda_noobj: f32,
    /// Loss for non-positive predicted sizes
    #[arg(long, value_enum, default_value_t = NegativeSizeArg::Quadratic)]
    negative_size: NegativeSizeArg,
    /// Clip each batch gradient to this global L2 norm [norm]
    #[arg(long)]
    grad_clip: Option<f32>,
    /// Write a checkpoint every N epochs, 0 for only the final one [epochs]
    #[arg(long, default_value_t = 0)]
    checkpoint_every: u32,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum NegativeSizeArg {
    Quadratic,
    Clamp,
}

#[derive(Args, Debug, Serialize)]
struct EvalArgs {
    /// Checkpoint or int8 blob; several to compare models [path, comma separated]
    #[arg(long = "model", required = true, value_delimiter = ',')]
    #[serde(rename = "model")]
    models: Vec<PathBuf>,
    /// Object limit each model was trained with, one per --model [objects, or inf; comma separated]
    #[arg(long, value_delimiter = ',')]
    trained_with: Vec<String>,
    /// Evaluation annotations: a JSONL file or a VOC directory [path]
    #[arg(long)]
    data: PathBuf,
    /// Class table for VOC data [path]
    #[arg(long)]
    classes: Option<PathBuf>,
    /// Arithmetic used for inference
    #[arg(long, value_enum, default_value_t = DetectorPrecision::Float)]
    precision: DetectorPrecision,
    /// Evaluate only images with at most this many objects [objects, or inf; comma separated for a matrix]
    #[arg(long, value_delimiter = ',', default_value = "inf")]
    max_objects: Vec<String>,
    /// Minimum detection score [0..1]
    #[arg(long, default_value_t = 0.1)]
    conf_threshold: f32,
    /// IoU above which NMS suppresses a detection [0..1]
    #[arg(long, default_value_t = 0.5)]
    nms_iou: f32,
    /// IoU needed for a true positive [0..1]
    #[arg(long, default_value_t = 0.5)]
    match_iou: f32,
    /// 11-point interpolated AP instead of all-point [flag]
    #[arg(long)]
    eleven_point: bool,
}

#[derive(Args, Debug, Serialize)]
struct InferArgs {
    /// Checkpoint or int8 blob [path]
    #[arg(long)]
    model: PathBuf,
    /// RGB image [path]
    #[arg(long)]
    image: PathBuf,
    /// Arithmetic used for inference
    #[arg(long, value_enum, default_value_t = DetectorPrecision::Float)]
    precision: DetectorPrecision,
    /// Minimum detection score [0..1]
    #[arg(long, default_value_t = 0.1)]
    conf_threshold: f32,
    /// IoU above which NMS suppresses a detection [0..1]
    #[arg(long, default_value_t = 0.5)]
    nms_iou: f32,
}

#[derive(Args, Debug, Serialize)]
struct QuantizeArgs {
    /// Float or QAT checkpoint [path]
    #[arg(long)]
    checkpoint: PathBuf,
    /// Calibration images: a JSONL file or a VOC directory [path]
    #[arg(long)]
    data: PathBuf,
    /// Class table for VOC data [path]
    #[arg(long)]
    classes: Option<PathBuf>,
    /// Use at most this many calibration images [images]
    #[arg(long, default_value_t = 256)]
    images: usize,
    /// Recalibrate even if the checkpoint already has scales [flag]
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug, Serialize)]
struct ExportArgs {
    /// Checkpoint with quantization scales [path]
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct CheckDeployArgs {
    /// Model config file or built-in name (ref-88, ref-88-voc3) [path|name]
    #[arg(long, default_value = "ref-88")]
    model: String,
    /// Target device
    #[arg(long, value_enum, default_value_t = ProfileArg::Max78000)]
    profile: ProfileArg,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum ProfileArg {
    Max78000,
}

#[derive(Args, Debug, Serialize)]
struct ProfileArgs {
    /// CSV with device,voltage_v,clock_mhz,latency_ms,power_mw [path]
    #[arg(long)]
    measurements: PathBuf,
    /// Model config file or built-in name (ref-88, ref-88-voc3) [path|name]
    #[arg(long, default_value = "ref-88")]
    model: String,
    /// Published MAC count to report MAC/cycle against as well [MACs]
    #[arg(long)]
    reference_macs: Option<u64>,
}

#[derive(Args, Debug, Serialize)]
struct DatasetGenArgs {
    /// Number of images [images]
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Number of shape classes, 1 to 3 [classes]
    #[arg(long, default_value_t = 1)]
    classes: usize,
    /// Maximum objects per image, 1 to 10 [objects]
    #[arg(long, default_value_t = 3)]
    max_objects: usize,
}

/// Failure classes mapped to exit codes.
enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

fn classify(err: anyhow::Error) -> Failure {
    use microyolo_core::Error as E;
    let validation = err.chain().any(|e| {
        e.downcast_ref::<Invalid>().is_some()
            || matches!(
                e.downcast_ref::<E>(),
                Some(E::Config(_) | E::InvalidArgument(_) | E::Parse { .. } | E::Annotation { .. } | E::Dataset(_))
            )
    });
    if validation {
        Failure::Validation(err)
    } else {
        Failure::Runtime(err)
    }
}

/// A user-supplied value that does not make sense.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct Invalid(String);

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .format_target(false)
        .init();
    let argv: Vec<String> = std::env::args().collect();
    let argv = match manifest::expand_config(&argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => match classify(e) {
            Failure::Validation(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(1)
            }
            Failure::Runtime(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(2)
            }
        },
    }
}

fn parse_limit(text: &str) -> anyhow::Result<MaxObjects> {
    text.parse().map_err(|e| invalid(format!("object limit `{text}`: {e}")))
}

fn load_class_table(classes: Option<&Path>) -> anyhow::Result<ClassTable> {
    match classes {
        Some(p) => Ok(ClassTable::load(p)?),
        None => Ok(ClassTable::person_chair_car()),
    }
}

/// JSONL file, or a VOC directory with `Annotations/` and `JPEGImages/`.
fn load_annotations(path: &Path, classes: Option<&Path>) -> anyhow::Result<Vec<SampleDesc>> {
    if path.is_dir() {
        let table = load_class_table(classes)?;
        Ok(load_voc_dir(path, &table).with_context(|| format!("reading VOC directory {}", path.display()))?)
    } else {
        Ok(load_jsonl(path)?)
    }
}

/// Class names for reports: `classes.txt` next to a JSONL file, the VOC
/// class table, or generic names.
fn class_names(data: &Path, classes: Option<&Path>, count: usize) -> Vec<String> {
    let table = match classes {
        Some(p) => ClassTable::load(p).ok(),
        None if data.is_dir() => Some(ClassTable::person_chair_car()),
        None => data.parent().and_then(|d| ClassTable::load(d.join("classes.txt")).ok()),
    };
    match table {
        Some(t) if t.len() == count => t.names().iter().map(|s| s.to_string()).collect(),
        _ => (0..count).map(|i| format!("class{i}")).collect(),
    }
}

fn run(cli: &Cli, argv: &[String]) -> anyhow::Result<()> {
    let out = &cli.out;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut manifest = Manifest::new(cli.seed, out, argv, &cli.command)?;
    match &cli.command {
        Command::Train(a) => cmd_train(cli, a, &mut manifest)?,
        Command::Eval(a) => cmd_eval(cli, a, &mut manifest)?,
        Command::Infer(a) => cmd_infer(cli, a, &mut manifest)?,
        Command::Quantize(a) => cmd_quantize(cli, a, &mut manifest)?,
        Command::Export(a) => cmd_export(cli, a, &mut manifest)?,
        Command::CheckDeploy(a) => cmd_check_deploy(a, &mut manifest)?,
        Command::Profile(a) => cmd_profile(cli, a, &mut manifest)?,
        Command::DatasetGen(a) => cmd_dataset_gen(cli, a, &mut manifest)?,
    }
    manifest.write(out)
}

fn cmd_train(cli: &Cli, a: &TrainArgs, manifest: &mut Manifest) -> anyhow::Result<()> {
    let model = resolve_model(&a.model)?;
    manifest.model_config(&model);
    let cfg = TrainConfig {
        epochs_float: a.epochs_float,
        epochs_qat: a.epochs_qat,
        lr0: a.lr,
        lr0_qat: a.lr_qat,
        weight_decay: a.weight_decay,
        momentum: a.momentum,
        batch_size: a.batch_size,
        milestones: a.milestones.clone(),
        lr_factor: a.lr_factor,
        seed: cli.seed,
        max_objects: parse_limit(&a.max_objects)?,
        hflip: a.hflip,
        loss: LossWeights {
            coord: a.lambda_coord,
            noobj: a.lambda_noobj,
            negative_size: match a.negative_size {
                NegativeSizeArg::Quadratic => NegativeSize::Quadratic,
                NegativeSizeArg::Clamp => NegativeSize::Clamp,
            },
        },
        grad_clip: a.grad_clip,
        checkpoint_every: a.checkpoint_every,
    };
    cfg.validate()?;

    let (_, h, w) = model.input();
    let descs = load_annotations(&a.data, a.classes.as_deref())?;
    let samples = load_samples(&descs, h, w)?;
    let (train_set, val_set) = match &a.val_data {
        Some(v) => (samples, load_samples(&load_annotations(v, a.classes.as_deref())?, h, w)?),
        None => {
            let split = split_90_10(&samples, cli.seed)?;
            (split.train, split.validation)
        }
    };
    log::info!("{} training and {} validation images", train_set.len(), val_set.len());

    let outcome = match train(&cfg, &model, &train_set, &val_set, &TrainOutput {
        dir: Some(cli.out.clone()),
        verbose: true,
    }) {
        Ok(o) => o,
        Err(microyolo_core::Error::Diverged { epoch, last_good }) => {
            let path = cli.out.join("last-good.ckpt");
            last_good.save(&path)?;
            manifest.output(&path);
            bail!("training diverged at epoch {epoch}; last good checkpoint written to {}", path.display());
        }
        Err(e) => return Err(e.into()),
    };
    for p in &outcome.written {
        manifest.output(p);
    }
    manifest.output(&cli.out.join("train_log.csv"));
    println!("{}", cli.out.join("final.ckpt").display());
    Ok(())
}

fn eval_settings(a: &EvalArgs) -> EvalSettings {
    EvalSettings {
        conf_threshold: a.conf_threshold,
        nms_iou: a.nms_iou,
        match_iou: a.match_iou,
        ap_method: if a.eleven_point { ApMethod::ElevenPoint } else { ApMethod::AllPoint },
        max_objects: MaxObjects::Unlimited,
    }
}

fn check_unit(name: &str, v: f32) -> anyhow::Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(invalid(format!("--{name} must be in [0, 1], got {v}")));
    }
    Ok(())
}

fn cmd_eval(cli: &Cli, a: &EvalArgs, manifest: &mut Manifest) -> anyhow::Result<()> {
    check_unit("conf-threshold", a.conf_threshold)?;
    check_unit("nms-iou", a.nms_iou)?;
    check_unit("match-iou", a.match_iou)?;
    let restrictions = a.max_objects.iter().map(|s| parse_limit(s)).collect::<anyhow::Result<Vec<_>>>()?;
    let trained: Vec<MaxObjects> = if a.trained_with.is_empty() {
        vec![MaxObjects::Unlimited; a.models.len()]
    } else if a.trained_with.len() == a.models.len() {
        a.trained_with.iter().map(|s| parse_limit(s)).collect::<anyhow::Result<_>>()?
    } else {
        return Err(invalid(format!(
            "{} --trained-with values for {} models",
            a.trained_with.len(),
            a.models.len()
        )));
    };
    let detectors = a
        .models
        .iter()
        .map(|p| load_detector(p, a.precision))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let head = detectors[0].head();
    let (_, h, w) = detectors[0].config().input();
    if detectors.iter().any(|d| d.head() != head || d.config().input() != (3, h, w)) {
        return Err(invalid("all models must share input size and head"));
    }
    manifest.model_config(detectors[0].config());
    for p in &a.models {
        manifest.input(p);
    }
    manifest.input(&a.data);

    let samples = load_samples(&load_annotations(&a.data, a.classes.as_deref())?, h, w)?;
    let names = class_names(&a.data, a.classes.as_deref(), head.classes);
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let settings = eval_settings(a);

    if detectors.len() == 1 && restrictions.len() == 1 {
        let result = evaluate(detectors[0].as_detector(), &samples, &EvalSettings {
            max_objects: restrictions[0],
            ..settings
        })?;
        std::fs::write(cli_path(&cli.out, "eval.csv"), result.to_csv(&names))?;
        manifest.output(&cli_path(&cli.out, "eval.csv"));
        print!("{}", result.to_text(&names));
    } else {
        let models: Vec<(MaxObjects, &dyn Detector)> =
            trained.iter().copied().zip(detectors.iter().map(|d| d.as_detector())).collect();
        let matrix = eval_matrix(&models, &samples, &restrictions, &settings)?;
        std::fs::write(cli_path(&cli.out, "eval_matrix.csv"), matrix.to_csv())?;
        manifest.output(&cli_path(&cli.out, "eval_matrix.csv"));
        print!("{}", matrix.to_text());
    }
    Ok(())
}

fn cli_path(out: &Path, name: &str) -> PathBuf {
    out.join(name)
}

fn cmd_infer(cli: &Cli, a: &InferArgs, manifest: &mut Manifest) -> anyhow::Result<()> {
    check_unit("conf-threshold", a.conf_threshold)?;
    check_unit("nms-iou", a.nms_iou)?;
    let detector = load_detector(&a.model, a.precision)?;
    manifest.model_config(detector.config());
    manifest.input(&a.model);
    manifest.input(&a.image);
    let (_, h, w) = detector.config().input();
    let img = image::open(&a.image).map_err(microyolo_core::Error::from)?;
    let tensor = preprocess_to(&img, h, w)?;
    let raw = detector.as_detector().raw_output(&tensor)?;
    let dets = microyolo_core::head::decode_predictions(&raw, detector.head(), a.conf_threshold)?;
    let dets = microyolo_core::head::nms(&dets, a.nms_iou);
    let mut lines = String::new();
    for d in &dets {
        let row = serde_json::json!({
            "class": d.class_id,
            "score": d.score,
            "cx": d.bbox.cx,
            "cy": d.bbox.cy,
            "w": d.bbox.w,
            "h": d.bbox.h,
        });
        lines.push_str(&row.to_string());
        lines.push('\n');
    }
    let path = cli.out.join("detections.jsonl");
    std::fs::write(&path, &lines)?;
    manifest.output(&path);
    print!("{lines}");
    Ok(())
}

fn cmd_quantize(cli: &Cli, a: &QuantizeArgs, manifest: &mut Manifest) -> anyhow::Result<()> {
    let mut ck = Checkpoint::load(&a.checkpoint)?;
    manifest.model_config(ck.network.config());
    manifest.input(&a.checkpoint);
    if ck.scales.is_some() && !a.force {
        log::info!("checkpoint already carries quantization scales; keeping them (use --force to recalibrate)");
    } else {
        if a.images == 0 {
            return Err(invalid("--images must be at least 1"));
        }
        let (_, h, w) = ck.network.config().input();
        let descs = load_annotations(&a.data, a.classes.as_deref())?;
        let descs = &descs[..descs.len().min(a.images)];
        manifest.input(&a.data);
        let samples = load_samples(descs, h, w)?;
        ck.scales = Some(calibrate(&ck.network, &ck.network.weight_scales(), &samples)?);
        log::info!("calibrated on {} images", samples.len());
    }
    let path = cli.out.join("quantized.ckpt");
    ck.save(&path)?;
    manifest.output(&path);
    println!("{}", path.display());
    Ok(())
}

fn cmd_export(cli: &Cli, a: &ExportArgs, manifest: &mut Manifest) -> anyhow::Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    manifest.model_config(ck.network.config());
    manifest.input(&a.checkpoint);
    let scales = ck
        .scales
        .as_ref()
        .ok_or_else(|| invalid("checkpoint has no quantization scales; run QAT or `quantize` first"))?;
    let blob = export_quantized(&ck.network, scales)?;
    let blob_path = cli.out.join("model.tylq");
    let cfg_path = cli.out.join("model.cfg");
    std::fs::write(&blob_path, &blob)?;
    std::fs::write(&cfg_path, ck.network.config().to_text())?;
    manifest.output(&blob_path);
    manifest.output(&cfg_path);
    println!("{} ({} bytes)", blob_path.display(), blob.len());
    Ok(())
}

fn cmd_check_deploy(a: &CheckDeployArgs, manifest: &mut Manifest) -> anyhow::Result<()> {
    let model = resolve_model(&a.model)?;
    manifest.model_config(&model);
    let profile = match a.profile {
        ProfileArg::Max78000 => DeviceProfile::Max78000,
    };
    let report = check_deployability(&model, profile);
    print!("{report}");
    if !report.passed() {
        let reasons: Vec<&str> = report.issues.iter().map(|i| i.reason()).collect();
        return Err(invalid(format!("not deployable: {}", reasons.join(", "))));
    }
    Ok(())
}

fn cmd_profile(cli: &Cli, a: &ProfileArgs, manifest: &mut Manifest) -> anyhow::Result<()> {
    let model = resolve_model(&a.model)?;
    manifest.model_config(&model);
    manifest.input(&a.measurements);
    let rows = read_measurements(&a.measurements)?;
    let report = compare_report(&rows, &model, a.reference_macs)?;
    let path = cli.out.join("profile.csv");
    std::fs::write(&path, report.to_csv())?;
    manifest.output(&path);
    print!("{}", report.to_text());
    Ok(())
}

fn cmd_dataset_gen(cli: &Cli, a: &DatasetGenArgs, manifest: &mut Manifest) -> anyhow::Result<()> {
    let cfg = SynthConfig::new(a.n, a.classes, cli.seed, a.max_objects);
    let descs = synth_generate(&cfg, &cli.out)?;
    manifest.output(&cli.out.join("annotations.jsonl"));
    manifest.output(&cli.out.join("classes.txt"));
    let objects: usize = descs.iter().map(|d| d.boxes.len()).sum();
    println!("{} images, {objects} objects in {}", descs.len(), cli.out.display());
    Ok(())
}
