//! Command-line surface. Each subcommand is a `cmd_*` function that takes
//! its parsed arguments and returns the text for stdout plus an exit code,
//! so commands can be driven in-process.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 partial failure.
//! Every flag can also be set through a `DETBENCH_*` environment variable;
//! flags win.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augmentation::{apply_pipeline, AugmentationSpec, LabeledImage};
use crate::backend::{
    attach_ground_truth, run_benchmark, write_predictions, BenchOptions, ConfLaw, DetectorBackend, DoublePassRefine,
    ExternalDetector, FixedLatency, OracleDetector, OracleNoise,
};
use crate::dataset::{
    compute_stats, image_files, integrity_report, read_manifest, scan_dataset, write_label_file, ClassTaxonomy,
    Diagnostic, DiagnosticKind, GroundTruthSet, ScanOptions,
};
use crate::evaluation::{per_class_report, ApMode, EvalSettings, DEFAULT_CONF_THRESHOLD, DEFAULT_IOU_THRESHOLD};
use crate::report::{
    format_metric, render_bar_chart, render_bench_detail, render_bench_table, render_confusion_csv,
    render_confusion_svg, render_document, render_size_heatmap, render_structured, render_table, render_timing_csv,
    MetricsTable,
};
use crate::par;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_PARTIAL: i32 = 3;

pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Input(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        EXIT_INPUT
    }
}

fn input<E: std::fmt::Display>(context: &str) -> impl FnOnce(E) -> CliError + '_ {
    move |e| CliError::Input(format!("{context}: {e}"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmdOutput {
    pub code: i32,
    pub stdout: String,
}

/// Recorded hyperparameters of the model under test. Metadata only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingManifest {
    pub learning_rate: f64,
    pub warmup_iterations: u32,
    pub momentum: f64,
    pub epochs: u32,
    pub batch_size: u32,
    pub optimizer: String,
    pub image_size: u32,
}

impl Default for TrainingManifest {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            warmup_iterations: 3,
            momentum: 0.937,
            epochs: 50,
            batch_size: 16,
            optimizer: "AdamW".into(),
            image_size: 416,
        }
    }
}

impl TrainingManifest {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let m: Self = toml::from_str(text).map_err(input("training manifest"))?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let ok = self.learning_rate > 0.0
            && self.momentum > 0.0
            && self.warmup_iterations > 0
            && self.epochs > 0
            && self.batch_size > 0
            && self.image_size > 0
            && !self.optimizer.trim().is_empty();
        if ok {
            Ok(())
        } else {
            Err(CliError::Input(format!("training manifest values must be positive: {self:?}")))
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "detbench", version, about = "Object-detection dataset analysis, augmentation, evaluation and benchmarking")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Class distribution, box sizes and integrity checks for a labeled dataset.
    Analyze(AnalyzeArgs),
    /// Apply an augmentation spec to images and labels.
    Augment(AugmentArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Run a detector backend and time its stages.
    Bench(BenchArgs),
    /// Re-render a structured report.
    Report(ReportArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct CommonArgs {
    /// Output directory.
    #[arg(long, env = "DETBENCH_OUT")]
    #[serde(skip)]
    pub out: PathBuf,
    /// Class names, one per line. Defaults to the built-in 13-class list.
    #[arg(long, env = "DETBENCH_TAXONOMY")]
    pub taxonomy: Option<PathBuf>,
    #[arg(long, env = "DETBENCH_WORKERS", default_value_t = 1)]
    #[serde(skip)]
    pub workers: usize,
    /// TOML file of training hyperparameters to record in the config echo.
    #[arg(long, env = "DETBENCH_TRAINING_MANIFEST")]
    pub training_manifest: Option<PathBuf>,
}

impl CommonArgs {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        Self {
            out: out.into(),
            taxonomy: None,
            workers: 1,
            training_manifest: None,
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct AnalyzeArgs {
    #[arg(long, env = "DETBENCH_LABELS")]
    pub labels: PathBuf,
    #[arg(long, env = "DETBENCH_IMAGES")]
    pub images: Option<PathBuf>,
    /// `<image_id> <width> <height>` per line, for label-only datasets.
    #[arg(long, env = "DETBENCH_MANIFEST")]
    pub manifest: Option<PathBuf>,
    /// Classes present with fewer instances are flagged.
    #[arg(long, env = "DETBENCH_RARE_THRESHOLD", default_value_t = 10)]
    pub rare_threshold: u64,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct AugmentArgs {
    #[arg(long, env = "DETBENCH_IMAGES")]
    pub images: PathBuf,
    #[arg(long, env = "DETBENCH_LABELS")]
    pub labels: PathBuf,
    /// Augmentation spec (TOML).
    #[arg(long, env = "DETBENCH_SPEC")]
    pub spec: PathBuf,
    /// Overrides the seed in the spec.
    #[arg(long, env = "DETBENCH_SEED")]
    pub seed: Option<u64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct EvalArgs {
    #[arg(long, env = "DETBENCH_LABELS")]
    pub labels: PathBuf,
    #[arg(long, env = "DETBENCH_PREDICTIONS")]
    pub predictions: PathBuf,
    /// When given, ground truth covers every image here, labeled or not.
    #[arg(long, env = "DETBENCH_IMAGES")]
    pub images: Option<PathBuf>,
    /// Confidence cutoff for P/R and the confusion matrix.
    #[arg(long, env = "DETBENCH_CONF", default_value_t = DEFAULT_CONF_THRESHOLD)]
    pub conf: f64,
    /// IoU threshold for P/R and the confusion matrix.
    #[arg(long, env = "DETBENCH_IOU", default_value_t = DEFAULT_IOU_THRESHOLD)]
    pub iou: f64,
    #[arg(long, env = "DETBENCH_AP_MODE", default_value = "coco101")]
    pub ap_mode: ApMode,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    /// External command, see `--command`.
    External,
    /// Ground-truth oracle with optional noise; needs `--labels`.
    Oracle,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct BenchArgs {
    #[arg(long, env = "DETBENCH_IMAGES")]
    pub images: PathBuf,
    #[arg(long, env = "DETBENCH_LABELS")]
    pub labels: Option<PathBuf>,
    #[arg(long, env = "DETBENCH_BACKEND", value_enum, default_value_t = BackendKind::External)]
    pub backend: BackendKind,
    /// Command template with `{input_list}` and `{output_dir}` placeholders.
    #[arg(long, env = "DETBENCH_COMMAND")]
    pub command: Option<String>,
    /// Images run before measurement starts.
    #[arg(long, env = "DETBENCH_WARMUP", default_value_t = 0)]
    pub warmup: usize,
    /// Extra fixed latency added to each inference.
    #[arg(long, env = "DETBENCH_LATENCY_MS")]
    pub latency_ms: Option<f64>,
    /// Run each image and its mirror and fuse the detections.
    #[arg(long, env = "DETBENCH_DOUBLE_PASS")]
    pub double_pass: bool,
    #[arg(long, env = "DETBENCH_MERGE_IOU", default_value_t = 0.5)]
    pub merge_iou: f64,
    #[arg(long, env = "DETBENCH_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "DETBENCH_DROP_RATE", default_value_t = 0.0)]
    pub drop_rate: f64,
    #[arg(long, env = "DETBENCH_JITTER", default_value_t = 0.0)]
    pub jitter: f64,
    /// Oracle confidences are uniform in `[conf_min, conf_max]`.
    #[arg(long, env = "DETBENCH_CONF_MIN", default_value_t = 1.0)]
    pub conf_min: f64,
    #[arg(long, env = "DETBENCH_CONF_MAX", default_value_t = 1.0)]
    pub conf_max: f64,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ReportArgs {
    /// Structured report written by `eval` (report.json).
    #[arg(long, env = "DETBENCH_INPUT")]
    pub input: PathBuf,
    #[arg(long, env = "DETBENCH_FORMAT", default_value = "table")]
    pub format: String,
    /// Also write the rendering into this directory.
    #[arg(long, env = "DETBENCH_OUT")]
    pub out: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command,
/// printing its output. Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Analyze(a) => cmd_analyze(a),
        Command::Augment(a) => cmd_augment(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(out) => {
            print!("{}", out.stdout);
            out.code
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_taxonomy(path: Option<&Path>) -> Result<ClassTaxonomy, CliError> {
    match path {
        Some(p) => ClassTaxonomy::from_file(p).map_err(input("taxonomy")),
        None => Ok(ClassTaxonomy::default()),
    }
}

fn load_training(path: Option<&Path>) -> Result<Option<TrainingManifest>, CliError> {
    path.map(|p| {
        let text = fs::read_to_string(p).map_err(input("training manifest"))?;
        TrainingManifest::from_toml(&text)
    })
    .transpose()
}

fn require_dir(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::Input(format!("{what} directory {} does not exist", path.display())))
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(input("create output directory"))?;
    }
    fs::write(path, contents).map_err(|e| CliError::Input(format!("write {}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

#[derive(Serialize)]
struct ConfigEcho<'a, S: Serialize> {
    command: &'a str,
    version: &'a str,
    settings: &'a S,
    #[serde(skip_serializing_if = "Option::is_none")]
    training: Option<&'a TrainingManifest>,
    #[serde(skip_serializing_if = "Option::is_none")]
    extra: Option<serde_json::Value>,
}

fn echo_config<S: Serialize>(
    out: &Path,
    command: &str,
    settings: &S,
    training: Option<&TrainingManifest>,
    extra: Option<serde_json::Value>,
) -> Result<(), CliError> {
    let echo = ConfigEcho {
        command,
        version: env!("CARGO_PKG_VERSION"),
        settings,
        training,
        extra,
    };
    write_file(&out.join(CONFIG_FILE), to_json(&echo))
}

fn scan(
    labels: &Path,
    images: Option<&Path>,
    manifest: Option<&Path>,
    taxonomy: &ClassTaxonomy,
    workers: usize,
) -> Result<(GroundTruthSet, Vec<Diagnostic>), CliError> {
    require_dir(labels, "labels")?;
    if let Some(dir) = images {
        require_dir(dir, "images")?;
    }
    let manifest = manifest.map(read_manifest).transpose().map_err(input("manifest"))?;
    let opts = ScanOptions {
        images_dir: images.map(Path::to_path_buf),
        labels_dir: labels.to_path_buf(),
        manifest,
        workers,
    };
    let outcome = scan_dataset(&opts, taxonomy).map_err(input("dataset"))?;
    Ok((outcome.set, outcome.diagnostics))
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<CmdOutput, CliError> {
    let taxonomy = load_taxonomy(args.common.taxonomy.as_deref())?;
    let training = load_training(args.common.training_manifest.as_deref())?;
    let (gt, mut diagnostics) = scan(
        &args.labels,
        args.images.as_deref(),
        args.manifest.as_deref(),
        &taxonomy,
        args.common.workers,
    )?;
    diagnostics.extend(integrity_report(&gt, args.rare_threshold));
    let stats = compute_stats(&gt);
    let out = &args.common.out;

    write_file(&out.join("stats.json"), to_json(&stats))?;
    write_file(&out.join("diagnostics.json"), to_json(&diagnostics))?;
    let diag_text: String = diagnostics.iter().map(|d| format!("{d}\n")).collect();
    write_file(&out.join("diagnostics.txt"), diag_text)?;
    write_file(
        &out.join("class_counts.svg"),
        render_bar_chart("instances per class", taxonomy.names(), &stats.class_counts),
    )?;
    write_file(&out.join("bbox_sizes.svg"), render_size_heatmap(&stats))?;
    echo_config(out, "analyze", args, training.as_ref(), None)?;

    let mut text = format!("images: {}\ninstances: {}\n", stats.image_count, stats.instance_count);
    let width = taxonomy.names().iter().map(String::len).max().unwrap_or(0);
    for (name, count) in taxonomy.names().iter().zip(&stats.class_counts) {
        let _ = writeln!(text, "  {name:<width$}  {count}");
    }
    let _ = writeln!(text, "diagnostics: {}", diagnostics.len());
    write_file(&out.join("summary.txt"), &text)?;
    Ok(CmdOutput { code: EXIT_OK, stdout: text })
}

/// Image id and the reason it could not be read.
type LoadFailure = (String, String);

/// Reads pixels for every ground-truth entry that has an image file.
fn load_images(
    images_dir: &Path,
    gt: &GroundTruthSet,
    workers: usize,
) -> Result<(Vec<LabeledImage>, Vec<LoadFailure>), CliError> {
    let (files, _) = image_files(images_dir).map_err(input("images"))?;
    let loaded: Vec<Result<LabeledImage, (String, String)>> = par::with_workers(workers, || {
        gt.images()
            .par_iter()
            .filter_map(|e| files.get(&e.id).map(|p| (e, p)))
            .map(|(e, path)| {
                image::open(path)
                    .map(|img| LabeledImage::new(e.id.clone(), img.to_rgb8(), e.annotations.clone()))
                    .map_err(|err| (e.id.clone(), err.to_string()))
            })
            .collect()
    });
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for r in loaded {
        match r {
            Ok(img) => ok.push(img),
            Err(f) => failed.push(f),
        }
    }
    Ok((ok, failed))
}

#[derive(Serialize)]
struct StepDrops {
    step: usize,
    op: &'static str,
    dropped: usize,
}

#[derive(Serialize)]
struct AugmentSummary {
    inputs: usize,
    outputs: usize,
    dropped_per_step: Vec<StepDrops>,
    failures: Vec<(String, String)>,
    mosaic_leftovers: Vec<String>,
}

pub fn cmd_augment(args: &AugmentArgs) -> Result<CmdOutput, CliError> {
    let taxonomy = load_taxonomy(args.common.taxonomy.as_deref())?;
    let training = load_training(args.common.training_manifest.as_deref())?;
    let spec_text = fs::read_to_string(&args.spec).map_err(input("spec"))?;
    let mut spec = AugmentationSpec::from_toml(&spec_text).map_err(input("spec"))?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    spec.validate().map_err(input("spec"))?;

    let workers = args.common.workers;
    let (gt, diagnostics) = scan(&args.labels, Some(&args.images), None, &taxonomy, workers)?;
    let mut failures: Vec<(String, String)> = Vec::new();
    for d in &diagnostics {
        eprintln!("warning: {d}");
        if matches!(d.kind, DiagnosticKind::ParseError { .. }) {
            failures.push((d.subject.clone(), d.to_string()));
        }
    }
    let (images, load_failures) = load_images(&args.images, &gt, workers)?;
    failures.extend(load_failures);
    let inputs = images.len();

    let output = apply_pipeline(images, &spec, workers).map_err(input("spec"))?;
    failures.extend(output.failures.iter().map(|f| (f.id.clone(), format!("step {}: {}", f.step, f.error))));

    let out = &args.common.out;
    let (img_dir, lbl_dir) = (out.join("images"), out.join("labels"));
    fs::create_dir_all(&img_dir).map_err(input("create output directory"))?;
    fs::create_dir_all(&lbl_dir).map_err(input("create output directory"))?;
    let written: Vec<Result<(), CliError>> = par::with_workers(workers, || {
        output
            .images
            .par_iter()
            .map(|img| {
                let path = img_dir.join(format!("{}.png", img.id));
                img.pixels
                    .save(&path)
                    .map_err(|e| CliError::Input(format!("write {}: {e}", path.display())))?;
                write_file(&lbl_dir.join(format!("{}.txt", img.id)), write_label_file(&img.annotations))
            })
            .collect()
    });
    written.into_iter().collect::<Result<Vec<()>, _>>()?;

    let summary = AugmentSummary {
        inputs,
        outputs: output.images.len(),
        dropped_per_step: spec
            .steps
            .iter()
            .zip(&output.dropped_per_step)
            .enumerate()
            .map(|(step, (s, &dropped))| StepDrops {
                step,
                op: s.kind.name(),
                dropped,
            })
            .collect(),
        failures,
        mosaic_leftovers: output.mosaic_leftovers.clone(),
    };
    write_file(&out.join("summary.json"), to_json(&summary))?;
    let spec_echo = serde_json::to_value(&spec).ok();
    echo_config(out, "augment", args, training.as_ref(), spec_echo)?;

    let mut text = format!("images: {} in, {} out\n", summary.inputs, summary.outputs);
    for s in &summary.dropped_per_step {
        let _ = writeln!(text, "step {} {}: {} boxes dropped", s.step, s.op, s.dropped);
    }
    if !summary.mosaic_leftovers.is_empty() {
        let _ = writeln!(text, "mosaic leftovers: {}", summary.mosaic_leftovers.join(", "));
    }
    for (id, msg) in &summary.failures {
        eprintln!("failed: {id}: {msg}");
    }
    let code = if summary.failures.is_empty() { EXIT_OK } else { EXIT_PARTIAL };
    Ok(CmdOutput { code, stdout: text })
}

pub fn cmd_eval(args: &EvalArgs) -> Result<CmdOutput, CliError> {
    let taxonomy = load_taxonomy(args.common.taxonomy.as_deref())?;
    let training = load_training(args.common.training_manifest.as_deref())?;
    for (name, v) in [("conf", args.conf), ("iou", args.iou)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(CliError::Usage(format!("--{name} {v} outside [0, 1]")));
        }
    }
    let (gt, diagnostics) = scan(&args.labels, args.images.as_deref(), None, &taxonomy, args.common.workers)?;
    for d in &diagnostics {
        eprintln!("warning: {d}");
    }
    require_dir(&args.predictions, "predictions")?;
    let dets = crate::backend::load_predictions(&args.predictions, taxonomy.len()).map_err(input("predictions"))?;
    let settings = EvalSettings {
        conf_threshold: args.conf,
        iou_threshold: args.iou,
        ap_mode: args.ap_mode,
        ..EvalSettings::default()
    };
    let report = per_class_report(&dets, &gt, &settings).map_err(input("evaluation"))?;
    let table = MetricsTable::from_report(&report);

    let out = &args.common.out;
    write_file(&out.join("report.json"), render_structured(&table))?;
    write_file(&out.join("report.txt"), render_table(&table))?;
    write_file(&out.join("confusion.csv"), render_confusion_csv(&report.confusion))?;
    write_file(&out.join("confusion.svg"), render_confusion_svg(&report.confusion))?;
    echo_config(out, "eval", args, training.as_ref(), None)?;

    let a = &report.all;
    let f = |v: Option<f64>| format_metric(v.unwrap_or(0.0));
    let text = format!(
        "{}all: P {} R {} mAP50 {:.4} mAP50-95 {:.4}\n",
        render_table(&table),
        f(a.precision),
        f(a.recall),
        a.map50.unwrap_or(0.0),
        a.map50_95.unwrap_or(0.0)
    );
    Ok(CmdOutput { code: EXIT_OK, stdout: text })
}

fn build_backend(args: &BenchArgs, taxonomy: &ClassTaxonomy) -> Result<Box<dyn DetectorBackend>, CliError> {
    let base: Box<dyn DetectorBackend> = match args.backend {
        BackendKind::External => {
            let template = args
                .command
                .as_deref()
                .ok_or_else(|| CliError::Usage("--backend external needs --command".into()))?;
            let work = args.common.out.join("work");
            Box::new(ExternalDetector::from_template(template, taxonomy.len(), work).map_err(input("backend"))?)
        }
        BackendKind::Oracle => {
            if args.labels.is_none() {
                return Err(CliError::Usage("--backend oracle needs --labels".into()));
            }
            let conf_law = if args.conf_min == args.conf_max {
                ConfLaw::Constant { value: args.conf_min }
            } else {
                ConfLaw::Uniform {
                    lo: args.conf_min,
                    hi: args.conf_max,
                }
            };
            let noise = OracleNoise {
                drop_rate: args.drop_rate,
                jitter: args.jitter,
                conf_law,
            };
            Box::new(OracleDetector::new(noise, args.seed).map_err(input("backend"))?)
        }
    };
    let base = match args.latency_ms {
        Some(ms) if ms.is_finite() && ms >= 0.0 => Box::new(FixedLatency::new(base, Duration::from_secs_f64(ms / 1e3))),
        Some(ms) => return Err(CliError::Usage(format!("--latency-ms {ms} must be non-negative"))),
        None => base,
    };
    if args.double_pass {
        if !(0.0..=1.0).contains(&args.merge_iou) {
            return Err(CliError::Usage(format!("--merge-iou {} outside [0, 1]", args.merge_iou)));
        }
        return Ok(Box::new(DoublePassRefine::new(base, args.merge_iou)));
    }
    Ok(base)
}

pub fn cmd_bench(args: &BenchArgs) -> Result<CmdOutput, CliError> {
    let taxonomy = load_taxonomy(args.common.taxonomy.as_deref())?;
    let training = load_training(args.common.training_manifest.as_deref())?;
    require_dir(&args.images, "images")?;
    let workers = args.common.workers;
    let gt = match &args.labels {
        Some(labels) => scan(labels, Some(&args.images), None, &taxonomy, workers)?.0,
        None => {
            let (files, _) = image_files(&args.images).map_err(input("images"))?;
            let entries = files
                .keys()
                .map(|id| crate::dataset::ImageEntry {
                    id: id.clone(),
                    dims: None,
                    annotations: Vec::new(),
                })
                .collect();
            GroundTruthSet::new(taxonomy.clone(), entries)
        }
    };
    let (mut images, load_failures) = load_images(&args.images, &gt, workers)?;
    attach_ground_truth(&mut images, &gt);
    if args.warmup >= images.len() {
        return Err(CliError::Usage(format!(
            "--warmup {} must be smaller than the number of images ({})",
            args.warmup,
            images.len()
        )));
    }
    let backend = build_backend(args, &taxonomy)?;
    let outcome = run_benchmark(
        &backend,
        &images,
        BenchOptions {
            warmup: args.warmup,
            workers,
        },
    )
    .map_err(input("benchmark"))?;

    let out = &args.common.out;
    write_file(&out.join("timings.csv"), render_timing_csv(&outcome.records))?;
    let table = render_bench_table(&outcome.summary);
    write_file(
        &out.join("summary.txt"),
        format!("{table}\n{}", render_bench_detail(&outcome.summary)),
    )?;
    write_file(&out.join("summary.json"), to_json(&outcome.summary))?;
    write_predictions(&out.join("predictions"), &outcome.detections).map_err(input("predictions"))?;
    echo_config(out, "bench", args, training.as_ref(), None)?;

    let mut failures: Vec<String> = load_failures.iter().map(|(id, e)| format!("{id}: {e}")).collect();
    failures.extend(outcome.failures.iter().map(|(id, e)| format!("{id}: {e}")));
    for f in &failures {
        eprintln!("failed: {f}");
    }
    let code = if failures.is_empty() { EXIT_OK } else { EXIT_PARTIAL };
    Ok(CmdOutput { code, stdout: table })
}

pub fn cmd_report(args: &ReportArgs) -> Result<CmdOutput, CliError> {
    let text = fs::read_to_string(&args.input).map_err(input("report input"))?;
    let doc = MetricsTable::from_json(&text).map_err(input("report input"))?;
    let rendered = render_document(&doc, &args.format).map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(dir) = &args.out {
        let ext = match args.format.as_str() {
            "table" => "txt",
            "structured" | "json" => "json",
            other => other,
        };
        write_file(&dir.join(format!("report.{ext}")), &rendered)?;
    }
    Ok(CmdOutput {
        code: EXIT_OK,
        stdout: rendered,
    })
}
