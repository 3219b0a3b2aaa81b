//! Detector backends and the staged latency harness.
//!
//! A backend turns a [`LabeledImage`] into detections plus a
//! [`TimingRecord`]. Shipped backends: an external process speaking the
//! prediction-file grammar, a seeded ground-truth oracle for tests, a
//! fixed-latency wrapper, and a two-pass (original + mirror) refinement
//! wrapper.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augmentation::LabeledImage;
use crate::dataset::{parse_box_fields, parse_class, LabelError};
use crate::geometry::norm_iou;
use crate::rng::keyed_rng;
use crate::{par, NormBox};

/// Name of the optional timing file an external detector may leave in its
/// output directory. Not a `.txt` file, so it never collides with a
/// per-image prediction file.
pub const TIMING_SIDECAR: &str = "timings.sidecar";

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("failed to spawn {command:?}: {message}")]
    SpawnFailure { command: String, message: String },
    #[error("detector exited with {code:?}: {stderr}")]
    NonZeroExit { code: Option<i32>, stderr: String },
    #[error("detector produced no output for image {image_id} (expected {path})")]
    MissingOutput { image_id: String, path: PathBuf },
    #[error("{path}:{line}: {error}")]
    Prediction { path: PathBuf, line: usize, error: LabelError },
    #[error("timing sidecar {path}:{line}: {message}")]
    Sidecar { path: PathBuf, line: usize, message: String },
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid backend configuration: {0}")]
    Config(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BackendError + '_ {
    move |source| BackendError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class: usize,
    pub confidence: f64,
    pub bbox: NormBox,
}

impl Detection {
    pub fn new(class: usize, confidence: f64, bbox: NormBox) -> Self {
        Self { class, confidence, bbox }
    }

    pub fn mirrored(&self) -> Self {
        Self {
            bbox: self.bbox.mirrored(),
            ..*self
        }
    }
}

/// Detections per image id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionSet {
    images: BTreeMap<String, Vec<Detection>>,
}

impl DetectionSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, image_id: impl Into<String>, dets: Vec<Detection>) {
        self.images.insert(image_id.into(), dets);
    }

    pub fn get(&self, image_id: &str) -> Option<&[Detection]> {
        self.images.get(image_id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[Detection])> {
        self.images.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn image_ids(&self) -> impl Iterator<Item = &str> {
        self.images.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn total_detections(&self) -> usize {
        self.images.values().map(Vec::len).sum()
    }
}

impl FromIterator<(String, Vec<Detection>)> for DetectionSet {
    fn from_iter<I: IntoIterator<Item = (String, Vec<Detection>)>>(iter: I) -> Self {
        Self {
            images: iter.into_iter().collect(),
        }
    }
}

/// Per-image stage durations in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub image_id: String,
    pub preprocess_ms: f64,
    pub inference_ms: f64,
    pub postprocess_ms: f64,
}

impl TimingRecord {
    pub fn new(image_id: impl Into<String>, preprocess_ms: f64, inference_ms: f64, postprocess_ms: f64) -> Self {
        Self {
            image_id: image_id.into(),
            preprocess_ms,
            inference_ms,
            postprocess_ms,
        }
    }

    pub fn total_ms(&self) -> f64 {
        self.preprocess_ms + self.inference_ms + self.postprocess_ms
    }

    /// Field-wise sum, keeping `self.image_id`.
    pub fn plus(&self, other: &TimingRecord) -> TimingRecord {
        TimingRecord {
            image_id: self.image_id.clone(),
            preprocess_ms: self.preprocess_ms + other.preprocess_ms,
            inference_ms: self.inference_ms + other.inference_ms,
            postprocess_ms: self.postprocess_ms + other.postprocess_ms,
        }
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Parses `<class_id> <confidence> <cx> <cy> <w> <h>`.
pub fn parse_prediction_line(line: &str, taxonomy_size: usize) -> Result<Detection, LabelError> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 6 {
        return Err(LabelError::MalformedLine(format!(
            "expected 6 fields, found {}",
            fields.len()
        )));
    }
    let class = parse_class(fields[0], taxonomy_size)?;
    let confidence: f64 = fields[1]
        .parse()
        .map_err(|_| LabelError::MalformedLine(format!("confidence {:?} is not a number", fields[1])))?;
    if !(0.0..=1.0).contains(&confidence) {
        return Err(LabelError::ConfidenceOutOfRange(confidence));
    }
    let bbox = parse_box_fields(&fields[2..])?;
    Ok(Detection { class, confidence, bbox })
}

pub fn write_prediction_line(d: &Detection) -> String {
    let b = &d.bbox;
    format!(
        "{} {:.6} {:.6} {:.6} {:.6} {:.6}",
        d.class, d.confidence, b.cx, b.cy, b.w, b.h
    )
}

pub fn write_prediction_file(dets: &[Detection]) -> String {
    dets.iter().map(|d| write_prediction_line(d) + "\n").collect()
}

fn read_prediction_file(path: &Path, taxonomy_size: usize) -> Result<Vec<Detection>, BackendError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let d = parse_prediction_line(line, taxonomy_size).map_err(|error| BackendError::Prediction {
            path: path.to_path_buf(),
            line: i + 1,
            error,
        })?;
        out.push(d);
    }
    Ok(out)
}

/// Reads every `<image_id>.txt` prediction file in `dir`.
pub fn load_predictions(dir: &Path, taxonomy_size: usize) -> Result<DetectionSet, BackendError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "txt"))
        .collect();
    files.sort();
    let mut set = DetectionSet::new();
    for path in files {
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        set.insert(id, read_prediction_file(&path, taxonomy_size)?);
    }
    Ok(set)
}

/// Writes one `<image_id>.txt` per image, empty files included.
pub fn write_predictions(dir: &Path, set: &DetectionSet) -> Result<(), BackendError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (id, dets) in set.iter() {
        let path = dir.join(format!("{id}.txt"));
        fs::write(&path, write_prediction_file(dets)).map_err(io_err(&path))?;
    }
    Ok(())
}

/// `<image_id> <preprocess_ms> <inference_ms> <postprocess_ms>` per line.
pub fn parse_timing_sidecar(path: &Path) -> Result<BTreeMap<String, TimingRecord>, BackendError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| BackendError::Sidecar {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 4 {
            return Err(bad(format!("expected 4 fields, found {}", f.len())));
        }
        let mut v = [0.0f64; 3];
        for (slot, s) in v.iter_mut().zip(&f[1..]) {
            *slot = s.parse().map_err(|_| bad(format!("{s:?} is not a number")))?;
            if slot.is_nan() || *slot < 0.0 {
                return Err(bad(format!("negative duration {s}")));
            }
        }
        out.insert(f[0].to_string(), TimingRecord::new(f[0], v[0], v[1], v[2]));
    }
    Ok(out)
}

pub fn write_timing_sidecar(records: &[TimingRecord]) -> String {
    records
        .iter()
        .map(|r| format!("{} {} {} {}\n", r.image_id, r.preprocess_ms, r.inference_ms, r.postprocess_ms))
        .collect()
}

pub type DetectOutput = (Vec<Detection>, TimingRecord);

pub trait DetectorBackend: Send + Sync {
    fn detect(&self, img: &LabeledImage) -> Result<DetectOutput, BackendError>;

    fn detect_batch(&self, imgs: &[LabeledImage]) -> Vec<Result<DetectOutput, BackendError>> {
        imgs.iter().map(|img| self.detect(img)).collect()
    }

    /// Whether concurrent `detect` calls are allowed.
    fn reentrant(&self) -> bool {
        false
    }
}

impl<B: DetectorBackend + ?Sized> DetectorBackend for Box<B> {
    fn detect(&self, img: &LabeledImage) -> Result<DetectOutput, BackendError> {
        (**self).detect(img)
    }

    fn detect_batch(&self, imgs: &[LabeledImage]) -> Vec<Result<DetectOutput, BackendError>> {
        (**self).detect_batch(imgs)
    }

    fn reentrant(&self) -> bool {
        (**self).reentrant()
    }
}

/// Runs an external command per batch.
///
/// The argv template may contain `{input_list}` (a file listing one PNG path
/// per line) and `{output_dir}` (where the command writes `<image_id>.txt`
/// prediction files and, optionally, a [`TIMING_SIDECAR`]). Spawns are
/// serialized.
pub struct ExternalDetector {
    argv: Vec<String>,
    taxonomy_size: usize,
    work_root: PathBuf,
    calls: AtomicU64,
    spawn_lock: Mutex<()>,
}

impl ExternalDetector {
    pub fn new(argv: Vec<String>, taxonomy_size: usize, work_root: impl Into<PathBuf>) -> Result<Self, BackendError> {
        if argv.is_empty() {
            return Err(BackendError::Config("empty command template".into()));
        }
        Ok(Self {
            argv,
            taxonomy_size,
            work_root: work_root.into(),
            calls: AtomicU64::new(0),
            spawn_lock: Mutex::new(()),
        })
    }

    /// Whitespace-split template, e.g. `"python3 infer.py {input_list} {output_dir}"`.
    pub fn from_template(template: &str, taxonomy_size: usize, work_root: impl Into<PathBuf>) -> Result<Self, BackendError> {
        Self::new(template.split_whitespace().map(str::to_string).collect(), taxonomy_size, work_root)
    }

    fn run_batch(&self, imgs: &[LabeledImage]) -> Result<Vec<DetectOutput>, BackendError> {
        let n = imgs.len().max(1) as f64;
        let call = self.calls.fetch_add(1, Ordering::SeqCst);
        let dir = self.work_root.join(format!("call-{call:06}"));
        let (in_dir, out_dir) = (dir.join("in"), dir.join("out"));

        let t_pre = Instant::now();
        fs::create_dir_all(&in_dir).map_err(io_err(&in_dir))?;
        fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;
        let mut list = String::new();
        for img in imgs {
            let path = in_dir.join(format!("{}.png", img.id));
            img.pixels.save(&path).map_err(|e| BackendError::Io {
                path: path.clone(),
                source: std::io::Error::other(e.to_string()),
            })?;
            list.push_str(&path.display().to_string());
            list.push('\n');
        }
        let list_path = dir.join("input_list.txt");
        fs::write(&list_path, list).map_err(io_err(&list_path))?;
        let pre_ms = ms(t_pre.elapsed()) / n;

        let args: Vec<String> = self
            .argv
            .iter()
            .map(|a| {
                a.replace("{input_list}", &list_path.display().to_string())
                    .replace("{output_dir}", &out_dir.display().to_string())
            })
            .collect();
        let (output, wall) = {
            let _guard = self.spawn_lock.lock().unwrap_or_else(|p| p.into_inner());
            let t = Instant::now();
            let output = Command::new(&args[0])
                .args(&args[1..])
                .stdin(Stdio::null())
                .stdout(Stdio::null())
                .stderr(Stdio::piped())
                .output()
                .map_err(|e| BackendError::SpawnFailure {
                    command: args.join(" "),
                    message: e.to_string(),
                })?;
            (output, t.elapsed())
        };
        if !output.status.success() {
            return Err(BackendError::NonZeroExit {
                code: output.status.code(),
                stderr: String::from_utf8_lossy(&output.stderr).into_owned(),
            });
        }
        let infer_ms = ms(wall) / n;

        let t_post = Instant::now();
        let sidecar_path = out_dir.join(TIMING_SIDECAR);
        let sidecar = if sidecar_path.exists() {
            parse_timing_sidecar(&sidecar_path)?
        } else {
            BTreeMap::new()
        };
        let mut parsed = Vec::with_capacity(imgs.len());
        for img in imgs {
            let path = out_dir.join(format!("{}.txt", img.id));
            if !path.exists() {
                return Err(BackendError::MissingOutput {
                    image_id: img.id.clone(),
                    path,
                });
            }
            parsed.push(read_prediction_file(&path, self.taxonomy_size)?);
        }
        let post_ms = ms(t_post.elapsed()) / n;
        let _ = fs::remove_dir_all(&dir);

        Ok(imgs
            .iter()
            .zip(parsed)
            .map(|(img, dets)| {
                let timing = sidecar
                    .get(&img.id)
                    .cloned()
                    .unwrap_or_else(|| TimingRecord::new(img.id.clone(), pre_ms, infer_ms, post_ms));
                (dets, timing)
            })
            .collect())
    }
}

impl DetectorBackend for ExternalDetector {
    fn detect(&self, img: &LabeledImage) -> Result<DetectOutput, BackendError> {
        let mut out = self.run_batch(std::slice::from_ref(img))?;
        Ok(out.remove(0))
    }

    fn detect_batch(&self, imgs: &[LabeledImage]) -> Vec<Result<DetectOutput, BackendError>> {
        match self.run_batch(imgs) {
            Ok(v) => v.into_iter().map(Ok).collect(),
            Err(e) => {
                let msg = e.to_string();
                let mut out = vec![Err(e)];
                out.extend((1..imgs.len()).map(|_| Err(BackendError::Config(format!("batch failed: {msg}")))));
                out
            }
        }
    }
}

/// How the oracle assigns confidences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum ConfLaw {
    Constant { value: f64 },
    Uniform { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleNoise {
    /// Probability of dropping each ground-truth box.
    pub drop_rate: f64,
    /// Center shift and size change, as a fraction of the box size.
    pub jitter: f64,
    pub conf_law: ConfLaw,
}

impl Default for OracleNoise {
    fn default() -> Self {
        Self {
            drop_rate: 0.0,
            jitter: 0.0,
            conf_law: ConfLaw::Constant { value: 1.0 },
        }
    }
}

/// Test double that "detects" the annotations carried by each image, with
/// seeded drops, coordinate jitter and synthetic confidences. Attach the
/// ground truth to images with [`attach_ground_truth`].
#[derive(Debug, Clone)]
pub struct OracleDetector {
    noise: OracleNoise,
    seed: u64,
}

impl OracleDetector {
    pub fn new(noise: OracleNoise, seed: u64) -> Result<Self, BackendError> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        let conf_ok = match noise.conf_law {
            ConfLaw::Constant { value } => unit(value),
            ConfLaw::Uniform { lo, hi } => unit(lo) && unit(hi) && lo <= hi,
        };
        if !unit(noise.drop_rate) || !unit(noise.jitter) || !conf_ok {
            return Err(BackendError::Config(format!("oracle noise out of range: {noise:?}")));
        }
        Ok(Self { noise, seed })
    }

    pub fn exact() -> Self {
        Self {
            noise: OracleNoise::default(),
            seed: 0,
        }
    }

    fn emit(&self, img: &LabeledImage) -> Vec<Detection> {
        let mut rng = keyed_rng(self.seed, &img.id, 0);
        let OracleNoise { drop_rate, jitter, conf_law } = self.noise;
        let mut out = Vec::with_capacity(img.annotations.len());
        for a in &img.annotations {
            if drop_rate > 0.0 && rng.random::<f64>() < drop_rate {
                continue;
            }
            let mut b = a.bbox;
            if jitter > 0.0 {
                let mut u = || rng.random_range(-jitter..=jitter);
                let (dx, dy, sw, sh) = (u(), u(), u(), u());
                b.cx = (b.cx + dx * b.w).clamp(0.0, 1.0);
                b.cy = (b.cy + dy * b.h).clamp(0.0, 1.0);
                b.w = (b.w * (1.0 + sw)).clamp(1e-6, 1.0);
                b.h = (b.h * (1.0 + sh)).clamp(1e-6, 1.0);
            }
            let confidence = match conf_law {
                ConfLaw::Constant { value } => value,
                ConfLaw::Uniform { lo, hi } => rng.random_range(lo..=hi),
            };
            out.push(Detection::new(a.class, confidence, b));
        }
        out
    }
}

impl DetectorBackend for OracleDetector {
    fn detect(&self, img: &LabeledImage) -> Result<DetectOutput, BackendError> {
        let t0 = Instant::now();
        let dets = self.emit(img);
        let inference = ms(t0.elapsed());
        Ok((dets, TimingRecord::new(img.id.clone(), 0.0, inference, 0.0)))
    }

    fn reentrant(&self) -> bool {
        true
    }
}

/// Replaces each image's annotations with the ground truth for its id.
pub fn attach_ground_truth(imgs: &mut [LabeledImage], gt: &crate::dataset::GroundTruthSet) {
    for img in imgs {
        img.annotations = gt.get(&img.id).map(|e| e.annotations.clone()).unwrap_or_default();
    }
}

/// Busy-waits, then adds the elapsed time to the inner backend's inference stage.
pub struct FixedLatency<B> {
    inner: B,
    latency: Duration,
}

impl<B> FixedLatency<B> {
    pub fn new(inner: B, latency: Duration) -> Self {
        Self { inner, latency }
    }
}

impl<B: DetectorBackend> DetectorBackend for FixedLatency<B> {
    fn detect(&self, img: &LabeledImage) -> Result<DetectOutput, BackendError> {
        let (dets, mut timing) = self.inner.detect(img)?;
        let t0 = Instant::now();
        while t0.elapsed() < self.latency {
            std::hint::spin_loop();
        }
        timing.inference_ms += ms(t0.elapsed());
        Ok((dets, timing))
    }

    fn reentrant(&self) -> bool {
        self.inner.reentrant()
    }
}

fn fuse_pair(a: &Detection, b: &Detection) -> Detection {
    let (ca, cb) = (a.confidence, b.confidence);
    let total = ca + cb;
    let (wa, wb) = if total > 0.0 { (ca / total, cb / total) } else { (0.5, 0.5) };
    // Corner averaging is linear, so it equals averaging center and size.
    let mix = |u: f64, v: f64| if u == v { u } else { wa * u + wb * v };
    let (p, q) = (&a.bbox, &b.bbox);
    let bbox = NormBox {
        cx: mix(p.cx, q.cx).clamp(0.0, 1.0),
        cy: mix(p.cy, q.cy).clamp(0.0, 1.0),
        w: mix(p.w, q.w),
        h: mix(p.h, q.h),
    };
    Detection::new(a.class, ca.max(cb), bbox)
}

/// Greedy confidence-ordered fusion of two detection passes. Each detection,
/// in descending confidence (ties: pass A first, then input order), claims
/// the unclaimed same-class detection from the other pass with the highest
/// IoU `>= merge_iou`; a claimed pair becomes one confidence-weighted box
/// with the larger confidence. Unpaired detections pass through.
pub fn fuse_passes(a: &[Detection], b: &[Detection], merge_iou: f64) -> Vec<Detection> {
    let pool: Vec<(usize, &Detection)> = a.iter().map(|d| (0, d)).chain(b.iter().map(|d| (1, d))).collect();
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&i, &j| pool[j].1.confidence.total_cmp(&pool[i].1.confidence).then(i.cmp(&j)));
    let mut used = vec![false; pool.len()];
    let mut out = Vec::with_capacity(pool.len());
    for (rank, &i) in order.iter().enumerate() {
        if used[i] {
            continue;
        }
        used[i] = true;
        let (pass, det) = pool[i];
        let mut best: Option<(usize, f64)> = None;
        for &j in &order[rank + 1..] {
            let (other_pass, cand) = pool[j];
            if used[j] || other_pass == pass || cand.class != det.class {
                continue;
            }
            let overlap = norm_iou(&det.bbox, &cand.bbox);
            if overlap >= merge_iou && best.is_none_or(|(_, v)| overlap > v) {
                best = Some((j, overlap));
            }
        }
        match best {
            Some((j, _)) => {
                used[j] = true;
                out.push(fuse_pair(det, pool[j].1));
            }
            None => out.push(*det),
        }
    }
    out
}

/// Runs the wrapped backend on the image and on its horizontal mirror, maps
/// the second pass back, and fuses with [`fuse_passes`]. Stage timings are
/// the sums of both passes.
pub struct DoublePassRefine<B> {
    inner: B,
    merge_iou: f64,
}

impl<B> DoublePassRefine<B> {
    pub fn new(inner: B, merge_iou: f64) -> Self {
        Self { inner, merge_iou }
    }
}

impl<B: DetectorBackend> DetectorBackend for DoublePassRefine<B> {
    fn detect(&self, img: &LabeledImage) -> Result<DetectOutput, BackendError> {
        let (first, t1) = self.inner.detect(img)?;
        let (second, t2) = self.inner.detect(&img.mirrored())?;
        let second: Vec<Detection> = second.iter().map(Detection::mirrored).collect();
        Ok((fuse_passes(&first, &second, self.merge_iou), t1.plus(&t2)))
    }

    fn reentrant(&self) -> bool {
        self.inner.reentrant()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageStats {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
    pub min: f64,
    pub max: f64,
}

impl StageStats {
    /// Order-invariant: values are sorted before any reduction, including the sum.
    pub fn from_values(mut values: Vec<f64>) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        values.sort_by(f64::total_cmp);
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let median = if n % 2 == 1 {
            values[n / 2]
        } else {
            (values[n / 2 - 1] + values[n / 2]) / 2.0
        };
        // Nearest-rank percentile.
        let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
        Self {
            count: n,
            mean,
            median,
            p95: values[rank - 1],
            min: values[0],
            max: values[n - 1],
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub count: usize,
    pub preprocess: StageStats,
    pub inference: StageStats,
    pub postprocess: StageStats,
}

impl BenchSummary {
    pub fn from_records(records: &[TimingRecord]) -> Self {
        let stage = |f: fn(&TimingRecord) -> f64| StageStats::from_values(records.iter().map(f).collect());
        Self {
            count: records.len(),
            preprocess: stage(|r| r.preprocess_ms),
            inference: stage(|r| r.inference_ms),
            postprocess: stage(|r| r.postprocess_ms),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BenchOptions {
    pub warmup: usize,
    /// Only used when the backend is reentrant.
    pub workers: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self { warmup: 0, workers: 1 }
    }
}

#[derive(Debug)]
pub struct BenchOutcome {
    pub detections: DetectionSet,
    pub warmup_records: Vec<TimingRecord>,
    /// Post-warmup records, in image order.
    pub records: Vec<TimingRecord>,
    pub summary: BenchSummary,
    pub failures: Vec<(String, BackendError)>,
}

/// Runs `backend` over `images` in order. The first `warmup` images are run
/// but excluded from the summary; failed images are reported and excluded.
pub fn run_benchmark<B: DetectorBackend + ?Sized>(
    backend: &B,
    images: &[LabeledImage],
    opts: BenchOptions,
) -> Result<BenchOutcome, BackendError> {
    if opts.warmup >= images.len() {
        return Err(BackendError::Config(format!(
            "warmup {} must be smaller than the number of images ({})",
            opts.warmup,
            images.len()
        )));
    }
    let (warm, measured) = images.split_at(opts.warmup);
    let warm_results: Vec<_> = warm.iter().map(|img| backend.detect(img)).collect();
    let results: Vec<Result<DetectOutput, BackendError>> = if backend.reentrant() && opts.workers > 1 {
        par::with_workers(opts.workers, || measured.par_iter().map(|img| backend.detect(img)).collect())
    } else {
        measured.iter().map(|img| backend.detect(img)).collect()
    };

    let mut detections = DetectionSet::new();
    let mut failures = Vec::new();
    let mut collect = |imgs: &[LabeledImage], results: Vec<Result<DetectOutput, BackendError>>| {
        let mut records = Vec::new();
        for (img, r) in imgs.iter().zip(results) {
            match r {
                Ok((dets, timing)) => {
                    detections.insert(img.id.clone(), dets);
                    records.push(timing);
                }
                Err(e) => failures.push((img.id.clone(), e)),
            }
        }
        records
    };
    let warmup_records = collect(warm, warm_results);
    let records = collect(measured, results);
    let summary = BenchSummary::from_records(&records);
    Ok(BenchOutcome {
        detections,
        warmup_records,
        records,
        summary,
        failures,
    })
}
