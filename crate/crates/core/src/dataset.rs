//! YOLO-format label ingestion, dataset indexing, integrity checks and
//! distribution statistics.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{par, ImageDims, NormBox};

/// The 13 road-object classes, in label-index order.
pub const DEFAULT_CLASSES: [&str; 13] = [
    "auto-rickshaw",
    "bicycle",
    "bus",
    "car",
    "cart-vehicle",
    "construction-vehicle",
    "motorbike",
    "person",
    "priority-vehicle",
    "three-wheeler",
    "train",
    "truck",
    "wheelchair",
];

/// Image file extensions recognised by [`scan_dataset`].
pub const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

/// Width of the square (w, h) size histogram.
pub const SIZE_BINS: usize = 64;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid taxonomy: {0}")]
    Taxonomy(String),
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
}

impl DatasetError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}

/// Lexical and range errors for label and prediction lines.
#[derive(Debug, Error, Clone, PartialEq, Serialize, Deserialize)]
pub enum LabelError {
    #[error("malformed line: {0}")]
    MalformedLine(String),
    #[error("class id {class} out of range for {classes} classes")]
    ClassOutOfRange { class: i64, classes: usize },
    #[error("coordinate {field} = {value} out of range")]
    CoordOutOfRange { field: String, value: f64 },
    #[error("confidence {0} outside [0,1]")]
    ConfidenceOutOfRange(f64),
}

/// Lowercases and joins words with a single hyphen, so "Auto Rickshaw",
/// "auto_rickshaw" and "auto-rickshaw" all name the same class.
pub fn canonical_class_name(name: &str) -> String {
    name.trim()
        .to_lowercase()
        .split(|c: char| c.is_whitespace() || c == '-' || c == '_')
        .filter(|part| !part.is_empty())
        .collect::<Vec<_>>()
        .join("-")
}

/// Ordered list of class names; a class index is its position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassTaxonomy {
    names: Vec<String>,
}

impl Default for ClassTaxonomy {
    fn default() -> Self {
        Self {
            names: DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl ClassTaxonomy {
    pub fn new<I, S>(names: I) -> Result<Self, DatasetError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let names: Vec<String> = names
            .into_iter()
            .map(|s| canonical_class_name(s.as_ref()))
            .collect();
        if names.is_empty() {
            return Err(DatasetError::Taxonomy("no classes".into()));
        }
        let mut seen = BTreeSet::new();
        for n in &names {
            if n.is_empty() {
                return Err(DatasetError::Taxonomy("empty class name".into()));
            }
            if !seen.insert(n.as_str()) {
                return Err(DatasetError::Taxonomy(format!("duplicate class name {n:?}")));
            }
        }
        Ok(Self { names })
    }

    /// One class name per line; blank lines are ignored.
    pub fn parse(text: &str) -> Result<Self, DatasetError> {
        Self::new(text.lines().filter(|l| !l.trim().is_empty()))
    }

    pub fn from_file(path: &Path) -> Result<Self, DatasetError> {
        let text = fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        let key = canonical_class_name(name);
        self.names.iter().position(|n| *n == key)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub class: usize,
    pub bbox: NormBox,
}

impl Annotation {
    pub fn new(class: usize, bbox: NormBox) -> Self {
        Self { class, bbox }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub id: String,
    /// Unknown when running label-only without a manifest entry.
    pub dims: Option<ImageDims>,
    pub annotations: Vec<Annotation>,
}

/// Labeled images, kept sorted by image id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthSet {
    pub taxonomy: ClassTaxonomy,
    images: Vec<ImageEntry>,
}

impl GroundTruthSet {
    pub fn new(taxonomy: ClassTaxonomy, mut images: Vec<ImageEntry>) -> Self {
        images.sort_by(|a, b| a.id.cmp(&b.id));
        Self { taxonomy, images }
    }

    pub fn images(&self) -> &[ImageEntry] {
        &self.images
    }

    pub fn get(&self, id: &str) -> Option<&ImageEntry> {
        self.images
            .binary_search_by(|e| e.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.images[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.get(id).is_some()
    }

    pub fn total_instances(&self) -> usize {
        self.images.iter().map(|e| e.annotations.len()).sum()
    }
}

fn parse_unit(field: &str, name: &str) -> Result<f64, LabelError> {
    let v: f64 = field
        .parse()
        .map_err(|_| LabelError::MalformedLine(format!("{name} {field:?} is not a number")))?;
    if !v.is_finite() || !(0.0..=1.0).contains(&v) {
        return Err(LabelError::CoordOutOfRange {
            field: name.to_string(),
            value: v,
        });
    }
    Ok(v)
}

pub(crate) fn parse_class(field: &str, taxonomy_size: usize) -> Result<usize, LabelError> {
    let class: i64 = field
        .parse()
        .map_err(|_| LabelError::MalformedLine(format!("class id {field:?} is not an integer")))?;
    if class < 0 || class as u64 >= taxonomy_size as u64 {
        return Err(LabelError::ClassOutOfRange {
            class,
            classes: taxonomy_size,
        });
    }
    Ok(class as usize)
}

/// Parses the four normalized box fields `cx cy w h`.
pub(crate) fn parse_box_fields(fields: &[&str]) -> Result<NormBox, LabelError> {
    let cx = parse_unit(fields[0], "cx")?;
    let cy = parse_unit(fields[1], "cy")?;
    let w = parse_unit(fields[2], "w")?;
    let h = parse_unit(fields[3], "h")?;
    for (name, v) in [("w", w), ("h", h)] {
        if v <= 0.0 {
            return Err(LabelError::CoordOutOfRange {
                field: name.to_string(),
                value: v,
            });
        }
    }
    Ok(NormBox { cx, cy, w, h })
}

/// Parses `<class_id> <cx> <cy> <w> <h>`.
pub fn parse_label_line(line: &str, taxonomy_size: usize) -> Result<Annotation, LabelError> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 5 {
        return Err(LabelError::MalformedLine(format!(
            "expected 5 fields, found {}",
            fields.len()
        )));
    }
    let class = parse_class(fields[0], taxonomy_size)?;
    let bbox = parse_box_fields(&fields[1..])?;
    Ok(Annotation { class, bbox })
}

/// Emits one label line (no trailing newline) with 6 decimal places.
pub fn write_label_line(a: &Annotation) -> String {
    let b = &a.bbox;
    format!("{} {:.6} {:.6} {:.6} {:.6}", a.class, b.cx, b.cy, b.w, b.h)
}

/// Whole label file: one line per annotation, each newline-terminated.
pub fn write_label_file(annotations: &[Annotation]) -> String {
    annotations
        .iter()
        .map(|a| write_label_line(a) + "\n")
        .collect()
}

/// Parses every non-blank line. Bad lines are returned with their 1-based
/// line number instead of aborting the file.
pub fn parse_label_text(text: &str, taxonomy_size: usize) -> (Vec<Annotation>, Vec<(usize, LabelError)>) {
    let mut ok = Vec::new();
    let mut bad = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_label_line(line, taxonomy_size) {
            Ok(a) => ok.push(a),
            Err(e) => bad.push((i + 1, e)),
        }
    }
    (ok, bad)
}

/// `<image_id> <width> <height>` per line.
pub fn parse_manifest(text: &str) -> Result<BTreeMap<String, ImageDims>, DatasetError> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| DatasetError::Manifest { line: i + 1, message };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(err(format!("expected 3 fields, found {}", fields.len())));
        }
        let w: u32 = fields[1].parse().map_err(|_| err(format!("bad width {:?}", fields[1])))?;
        let h: u32 = fields[2].parse().map_err(|_| err(format!("bad height {:?}", fields[2])))?;
        let dims = ImageDims::new(w, h).map_err(|e| err(e.to_string()))?;
        out.insert(fields[0].to_string(), dims);
    }
    Ok(out)
}

pub fn read_manifest(path: &Path) -> Result<BTreeMap<String, ImageDims>, DatasetError> {
    let text = fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
    parse_manifest(&text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DiagnosticKind {
    ParseError { line: usize, error: LabelError },
    MissingLabelFile,
    OrphanLabelFile,
    DuplicateImageStem { path: String },
    UnreadableImage { message: String },
    OutOfRangeBox { index: usize },
    BoxOutsideFrame { index: usize },
    DuplicateBox { index: usize, first: usize },
    EmptyImage,
    RareClass { class: usize, count: u64, threshold: u64 },
}

/// A non-fatal finding about one image, file or class (`subject`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub subject: String,
    #[serde(flatten)]
    pub kind: DiagnosticKind,
}

impl Diagnostic {
    pub fn new(subject: impl Into<String>, kind: DiagnosticKind) -> Self {
        Self {
            subject: subject.into(),
            kind,
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = &self.subject;
        match &self.kind {
            DiagnosticKind::ParseError { line, error } => write!(f, "{s}:{line}: {error}"),
            DiagnosticKind::MissingLabelFile => write!(f, "{s}: no label file, treated as empty"),
            DiagnosticKind::OrphanLabelFile => write!(f, "{s}: label file has no matching image"),
            DiagnosticKind::DuplicateImageStem { path } => {
                write!(f, "{s}: another image shares this stem, ignored {path}")
            }
            DiagnosticKind::UnreadableImage { message } => write!(f, "{s}: unreadable image: {message}"),
            DiagnosticKind::OutOfRangeBox { index } => write!(f, "{s}: annotation {index} out of range"),
            DiagnosticKind::BoxOutsideFrame { index } => {
                write!(f, "{s}: annotation {index} extends outside the image")
            }
            DiagnosticKind::DuplicateBox { index, first } => {
                write!(f, "{s}: annotation {index} duplicates annotation {first}")
            }
            DiagnosticKind::EmptyImage => write!(f, "{s}: no annotations"),
            DiagnosticKind::RareClass { count, threshold, .. } => {
                write!(f, "class {s}: only {count} instances (threshold {threshold})")
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ScanOptions {
    /// When absent, entries come from label files plus manifest ids.
    pub images_dir: Option<PathBuf>,
    pub labels_dir: PathBuf,
    pub manifest: Option<BTreeMap<String, ImageDims>>,
    pub workers: usize,
}

#[derive(Debug, Clone)]
pub struct ScanOutcome {
    pub set: GroundTruthSet,
    pub diagnostics: Vec<Diagnostic>,
}

fn list_dir(dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| DatasetError::io(dir, e))? {
        let entry = entry.map_err(|e| DatasetError::io(dir, e))?;
        let path = entry.path();
        if path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn has_extension(path: &Path, exts: &[&str]) -> bool {
    path.extension()
        .map(|e| {
            let e = e.to_string_lossy().to_lowercase();
            exts.contains(&e.as_str())
        })
        .unwrap_or(false)
}

/// Label files (`*.txt`) in `dir`, keyed by stem.
pub fn label_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>, DatasetError> {
    Ok(list_dir(dir)?
        .into_iter()
        .filter(|p| has_extension(p, &["txt"]))
        .map(|p| (stem(&p), p))
        .collect())
}

/// Image files in `dir`, keyed by stem. Later files sharing a stem are
/// reported and skipped.
pub fn image_files(dir: &Path) -> Result<(BTreeMap<String, PathBuf>, Vec<Diagnostic>), DatasetError> {
    let mut map = BTreeMap::new();
    let mut diags = Vec::new();
    for p in list_dir(dir)?.into_iter().filter(|p| has_extension(p, &IMAGE_EXTENSIONS)) {
        let s = stem(&p);
        match map.entry(s) {
            Entry::Occupied(e) => diags.push(Diagnostic::new(
                e.key().clone(),
                DiagnosticKind::DuplicateImageStem {
                    path: p.display().to_string(),
                },
            )),
            Entry::Vacant(e) => {
                e.insert(p);
            }
        }
    }
    Ok((map, diags))
}

struct PendingEntry {
    id: String,
    image: Option<PathBuf>,
    label: Option<PathBuf>,
}

fn load_entry(
    pending: &PendingEntry,
    manifest: Option<&BTreeMap<String, ImageDims>>,
    taxonomy_size: usize,
) -> Result<(ImageEntry, Vec<Diagnostic>), DatasetError> {
    let mut diags = Vec::new();
    let from_manifest = manifest.and_then(|m| m.get(&pending.id).copied());
    let dims = match &pending.image {
        Some(path) => match image::image_dimensions(path) {
            Ok((w, h)) => ImageDims::new(w, h).ok().or(from_manifest),
            Err(e) => {
                diags.push(Diagnostic::new(
                    pending.id.clone(),
                    DiagnosticKind::UnreadableImage { message: e.to_string() },
                ));
                from_manifest
            }
        },
        None => from_manifest,
    };
    let annotations = match &pending.label {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
            let (ok, bad) = parse_label_text(&text, taxonomy_size);
            diags.extend(bad.into_iter().map(|(line, error)| {
                Diagnostic::new(path.display().to_string(), DiagnosticKind::ParseError { line, error })
            }));
            ok
        }
        None => {
            diags.push(Diagnostic::new(pending.id.clone(), DiagnosticKind::MissingLabelFile));
            Vec::new()
        }
    };
    let entry = ImageEntry {
        id: pending.id.clone(),
        dims,
        annotations,
    };
    Ok((entry, diags))
}

/// Indexes a YOLO dataset. Per-line parse failures, missing label files and
/// orphan label files become diagnostics; only I/O failures abort.
pub fn scan_dataset(opts: &ScanOptions, taxonomy: &ClassTaxonomy) -> Result<ScanOutcome, DatasetError> {
    let labels = label_files(&opts.labels_dir)?;
    let mut diagnostics = Vec::new();
    let mut pending = Vec::new();

    match &opts.images_dir {
        Some(dir) => {
            let (images, dup_diags) = image_files(dir)?;
            diagnostics.extend(dup_diags);
            for (id, path) in &images {
                pending.push(PendingEntry {
                    id: id.clone(),
                    image: Some(path.clone()),
                    label: labels.get(id).cloned(),
                });
            }
            for (id, path) in &labels {
                if !images.contains_key(id) {
                    diagnostics.push(Diagnostic::new(path.display().to_string(), DiagnosticKind::OrphanLabelFile));
                }
            }
        }
        None => {
            let mut ids: BTreeSet<String> = labels.keys().cloned().collect();
            if let Some(m) = &opts.manifest {
                ids.extend(m.keys().cloned());
            }
            for id in ids {
                let label = labels.get(&id).cloned();
                pending.push(PendingEntry { id, image: None, label });
            }
        }
    }

    let manifest = opts.manifest.as_ref();
    let n = taxonomy.len();
    let loaded: Vec<Result<(ImageEntry, Vec<Diagnostic>), DatasetError>> = par::with_workers(opts.workers, || {
        pending.par_iter().map(|p| load_entry(p, manifest, n)).collect()
    });

    let mut images = Vec::with_capacity(loaded.len());
    for result in loaded {
        let (entry, diags) = result?;
        images.push(entry);
        diagnostics.extend(diags);
    }
    Ok(ScanOutcome {
        set: GroundTruthSet::new(taxonomy.clone(), images),
        diagnostics,
    })
}

/// Distribution summary: class counts, box-size histogram, objects per image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub image_count: usize,
    pub instance_count: u64,
    pub class_counts: Vec<u64>,
    /// Row-major `SIZE_BINS x SIZE_BINS` counts: row = height bin, column = width bin.
    pub size_histogram: Vec<u64>,
    /// `objects_per_image[k]` = number of images with exactly `k` annotations.
    pub objects_per_image: Vec<u64>,
}

impl DatasetStats {
    pub fn size_bin(v: f64) -> usize {
        ((v * SIZE_BINS as f64).floor().max(0.0) as usize).min(SIZE_BINS - 1)
    }

    pub fn size_cell(&self, w_bin: usize, h_bin: usize) -> u64 {
        self.size_histogram[h_bin * SIZE_BINS + w_bin]
    }
}

pub fn compute_stats(gt: &GroundTruthSet) -> DatasetStats {
    let n = gt.taxonomy.len();
    let mut class_counts = vec![0u64; n];
    let mut size_histogram = vec![0u64; SIZE_BINS * SIZE_BINS];
    let mut objects_per_image = vec![0u64; 1];
    let mut instance_count = 0u64;
    for entry in gt.images() {
        let k = entry.annotations.len();
        if objects_per_image.len() <= k {
            objects_per_image.resize(k + 1, 0);
        }
        objects_per_image[k] += 1;
        for a in &entry.annotations {
            if let Some(c) = class_counts.get_mut(a.class) {
                *c += 1;
            }
            let cell = DatasetStats::size_bin(a.bbox.h) * SIZE_BINS + DatasetStats::size_bin(a.bbox.w);
            size_histogram[cell] += 1;
            instance_count += 1;
        }
    }
    if gt.images().is_empty() {
        objects_per_image.clear();
    }
    DatasetStats {
        image_count: gt.images().len(),
        instance_count,
        class_counts,
        size_histogram,
        objects_per_image,
    }
}

/// Out-of-range and out-of-frame boxes, exact duplicate annotations, empty
/// images, and present classes with fewer than `rarity_threshold` instances.
pub fn integrity_report(gt: &GroundTruthSet, rarity_threshold: u64) -> Vec<Diagnostic> {
    const FRAME_TOLERANCE: f64 = 1e-6;
    let mut out = Vec::new();
    for entry in gt.images() {
        if entry.annotations.is_empty() {
            out.push(Diagnostic::new(entry.id.clone(), DiagnosticKind::EmptyImage));
            continue;
        }
        for (i, a) in entry.annotations.iter().enumerate() {
            if !a.bbox.is_valid() || a.class >= gt.taxonomy.len() {
                out.push(Diagnostic::new(entry.id.clone(), DiagnosticKind::OutOfRangeBox { index: i }));
            } else if !a.bbox.is_within_frame(FRAME_TOLERANCE) {
                out.push(Diagnostic::new(entry.id.clone(), DiagnosticKind::BoxOutsideFrame { index: i }));
            }
            if let Some(first) = entry.annotations[..i].iter().position(|b| b == a) {
                out.push(Diagnostic::new(
                    entry.id.clone(),
                    DiagnosticKind::DuplicateBox { index: i, first },
                ));
            }
        }
    }
    let stats = compute_stats(gt);
    for (class, &count) in stats.class_counts.iter().enumerate() {
        if count > 0 && count < rarity_threshold {
            let name = gt.taxonomy.name(class).unwrap_or("?").to_string();
            out.push(Diagnostic::new(
                name,
                DiagnosticKind::RareClass {
                    class,
                    count,
                    threshold: rarity_threshold,
                },
            ));
        }
    }
    out
}
