//! Seeded, label-consistent image augmentation.
//!
//! Geometric steps move pixels and boxes with the same transform: boxes are
//! mapped through [`warp_box`], clipped to the frame, and dropped when the
//! visible fraction of the warped box falls below `min_visibility`.
//! Photometric steps never touch annotations.

use image::{Rgb, RgbImage};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Annotation;
use crate::geometry::{abs_to_norm, clip_box, norm_to_abs, warp_box};
use crate::rng::{keyed_rng, KeyedRng};
use crate::{par, GeometryError, Homography, ImageDims};

pub const DEFAULT_BLUR_KERNEL: u32 = 3;
pub const DEFAULT_MEDIAN_KERNEL: u32 = 3;
pub const DEFAULT_PERSPECTIVE_JITTER: f64 = 0.05;
pub const DEFAULT_SCALE_RANGE: (f64, f64) = (0.9, 1.1);
pub const DEFAULT_TRANSLATE: f64 = 0.1;
pub const DEFAULT_MIN_VISIBILITY: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AugmentError {
    #[error("kernel {kernel} larger than image {width}x{height}")]
    KernelTooLarge { kernel: u32, width: u32, height: u32 },
    #[error("invalid augmentation spec: {0}")]
    InvalidSpec(String),
    #[error("mosaic needs exactly 4 images, got {0}")]
    MosaicArity(usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// RGB8 image with its annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub id: String,
    pub pixels: RgbImage,
    pub annotations: Vec<Annotation>,
}

impl LabeledImage {
    pub fn new(id: impl Into<String>, pixels: RgbImage, annotations: Vec<Annotation>) -> Self {
        Self {
            id: id.into(),
            pixels,
            annotations,
        }
    }

    pub fn dims(&self) -> ImageDims {
        ImageDims {
            width: self.pixels.width(),
            height: self.pixels.height(),
        }
    }

    /// Horizontal mirror of pixels and boxes.
    pub fn mirrored(&self) -> Self {
        Self {
            id: self.id.clone(),
            pixels: image::imageops::flip_horizontal(&self.pixels),
            annotations: self
                .annotations
                .iter()
                .map(|a| Annotation::new(a.class, a.bbox.mirrored()))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepKind {
    Resize {
        width: u32,
        height: u32,
    },
    Blur {
        #[serde(default = "default_blur")]
        kernel: u32,
    },
    MedianBlur {
        #[serde(default = "default_median")]
        kernel: u32,
    },
    Grayscale,
    Perspective {
        #[serde(default = "default_jitter")]
        max_corner_jitter: f64,
    },
    RandomScale {
        #[serde(default = "default_scale_lo")]
        lo: f64,
        #[serde(default = "default_scale_hi")]
        hi: f64,
    },
    RandomTranslate {
        #[serde(default = "default_translate")]
        max_dx: f64,
        #[serde(default = "default_translate")]
        max_dy: f64,
    },
    Mosaic4,
}

fn default_blur() -> u32 {
    DEFAULT_BLUR_KERNEL
}
fn default_median() -> u32 {
    DEFAULT_MEDIAN_KERNEL
}
fn default_jitter() -> f64 {
    DEFAULT_PERSPECTIVE_JITTER
}
fn default_scale_lo() -> f64 {
    DEFAULT_SCALE_RANGE.0
}
fn default_scale_hi() -> f64 {
    DEFAULT_SCALE_RANGE.1
}
fn default_translate() -> f64 {
    DEFAULT_TRANSLATE
}
fn default_min_visibility() -> f64 {
    DEFAULT_MIN_VISIBILITY
}

impl StepKind {
    pub fn name(&self) -> &'static str {
        match self {
            StepKind::Resize { .. } => "resize",
            StepKind::Blur { .. } => "blur",
            StepKind::MedianBlur { .. } => "median_blur",
            StepKind::Grayscale => "grayscale",
            StepKind::Perspective { .. } => "perspective",
            StepKind::RandomScale { .. } => "random_scale",
            StepKind::RandomTranslate { .. } => "random_translate",
            StepKind::Mosaic4 => "mosaic4",
        }
    }

    pub fn is_geometric(&self) -> bool {
        matches!(
            self,
            StepKind::Perspective { .. }
                | StepKind::RandomScale { .. }
                | StepKind::RandomTranslate { .. }
                | StepKind::Mosaic4
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    #[serde(flatten)]
    pub kind: StepKind,
    /// Chance of applying the step; always applied when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probability: Option<f64>,
}

impl From<StepKind> for Step {
    fn from(kind: StepKind) -> Self {
        Self {
            kind,
            probability: None,
        }
    }
}

/// Ordered augmentation steps plus the seed every random draw is keyed on.
///
/// Serialized as TOML:
///
/// ```toml
/// seed = 7
/// min_visibility = 0.1
///
/// [[step]]
/// op = "resize"
/// width = 416
/// height = 416
///
/// [[step]]
/// op = "blur"
/// kernel = 3
/// probability = 0.5
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationSpec {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_min_visibility")]
    pub min_visibility: f64,
    #[serde(default, rename = "step")]
    pub steps: Vec<Step>,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            min_visibility: DEFAULT_MIN_VISIBILITY,
            steps: Vec::new(),
        }
    }
}

impl AugmentationSpec {
    pub fn from_toml(text: &str) -> Result<Self, AugmentError> {
        let spec: Self = toml::from_str(text).map_err(|e| AugmentError::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("augmentation spec serializes to toml")
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        let bad = |msg: String| Err(AugmentError::InvalidSpec(msg));
        if !(0.0..=1.0).contains(&self.min_visibility) {
            return bad(format!("min_visibility {} outside [0,1]", self.min_visibility));
        }
        for (i, step) in self.steps.iter().enumerate() {
            let at = |msg: &str| format!("step {i} ({}): {msg}", step.kind.name());
            if let Some(p) = step.probability {
                if !(0.0..=1.0).contains(&p) {
                    return bad(at(&format!("probability {p} outside [0,1]")));
                }
                if step.kind == StepKind::Mosaic4 {
                    return bad(at("probability is not supported for mosaic4"));
                }
            }
            match step.kind {
                StepKind::Resize { width, height } if width == 0 || height == 0 => {
                    return bad(at("target dims must be positive"));
                }
                StepKind::Blur { kernel } | StepKind::MedianBlur { kernel } if kernel == 0 || kernel.is_multiple_of(2) => {
                    return bad(at(&format!("kernel {kernel} must be odd and >= 1")));
                }
                StepKind::Perspective { max_corner_jitter: j } if !(0.0..0.5).contains(&j) => {
                    return bad(at(&format!("max_corner_jitter {j} outside [0, 0.5)")));
                }
                StepKind::RandomScale { lo, hi } if !(lo > 0.0 && lo <= hi && hi.is_finite()) => {
                    return bad(at(&format!("scale range [{lo}, {hi}] invalid")));
                }
                StepKind::RandomTranslate { max_dx, max_dy }
                    if !(0.0..=1.0).contains(&max_dx) || !(0.0..=1.0).contains(&max_dy) =>
                {
                    return bad(at("translation fractions must lie in [0,1]"));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

fn round_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Bilinear resample with pixel-center alignment and edge clamping.
pub fn resize_pixels(src: &RgbImage, width: u32, height: u32) -> RgbImage {
    if src.width() == width && src.height() == height {
        return src.clone();
    }
    let (sw, sh) = (src.width() as f64, src.height() as f64);
    let (rx, ry) = (sw / width as f64, sh / height as f64);
    let max_x = src.width() - 1;
    let max_y = src.height() - 1;
    RgbImage::from_fn(width, height, |x, y| {
        let fx = ((x as f64 + 0.5) * rx - 0.5).clamp(0.0, max_x as f64);
        let fy = ((y as f64 + 0.5) * ry - 0.5).clamp(0.0, max_y as f64);
        let (x0, y0) = (fx.floor() as u32, fy.floor() as u32);
        let (x1, y1) = ((x0 + 1).min(max_x), (y0 + 1).min(max_y));
        let (ax, ay) = (fx - x0 as f64, fy - y0 as f64);
        let p = |xx, yy, c: usize| src.get_pixel(xx, yy).0[c] as f64;
        let mut out = [0u8; 3];
        for (c, slot) in out.iter_mut().enumerate() {
            let top = p(x0, y0, c) * (1.0 - ax) + p(x1, y0, c) * ax;
            let bottom = p(x0, y1, c) * (1.0 - ax) + p(x1, y1, c) * ax;
            *slot = round_u8(top * (1.0 - ay) + bottom * ay);
        }
        Rgb(out)
    })
}

/// Bilinear sample at continuous pixel-index coordinates; taps outside the
/// image read as black.
fn sample_black_fill(src: &RgbImage, fx: f64, fy: f64) -> Rgb<u8> {
    let (x0, y0) = (fx.floor(), fy.floor());
    let (ax, ay) = (fx - x0, fy - y0);
    let (w, h) = (src.width() as i64, src.height() as i64);
    let tap = |xi: i64, yi: i64| -> [f64; 3] {
        if xi < 0 || yi < 0 || xi >= w || yi >= h {
            [0.0; 3]
        } else {
            let p = src.get_pixel(xi as u32, yi as u32).0;
            [p[0] as f64, p[1] as f64, p[2] as f64]
        }
    };
    let (xi, yi) = (x0 as i64, y0 as i64);
    let taps = [
        (tap(xi, yi), (1.0 - ax) * (1.0 - ay)),
        (tap(xi + 1, yi), ax * (1.0 - ay)),
        (tap(xi, yi + 1), (1.0 - ax) * ay),
        (tap(xi + 1, yi + 1), ax * ay),
    ];
    let mut out = [0u8; 3];
    for (c, slot) in out.iter_mut().enumerate() {
        let v: f64 = taps.iter().filter(|(_, wgt)| *wgt != 0.0).map(|(t, wgt)| t[c] * wgt).sum();
        *slot = round_u8(v);
    }
    Rgb(out)
}

/// Pixels under `m` (source to destination), same output size, black fill.
pub fn warp_pixels(src: &RgbImage, m: &Homography) -> Result<RgbImage, AugmentError> {
    let inv = m.inverse().ok_or(GeometryError::DegenerateTransform {
        x: f64::NAN,
        y: f64::NAN,
        w: 0.0,
    })?;
    Ok(RgbImage::from_fn(src.width(), src.height(), |x, y| {
        match inv.apply(x as f64 + 0.5, y as f64 + 0.5) {
            Ok((u, v)) => sample_black_fill(src, u - 0.5, v - 0.5),
            Err(_) => Rgb([0, 0, 0]),
        }
    }))
}

/// Maps annotations through `m` from `from` pixel space into `to` pixel
/// space. Returns the surviving annotations and the number dropped.
pub fn transform_annotations(
    annotations: &[Annotation],
    m: &Homography,
    from: ImageDims,
    to: ImageDims,
    min_visibility: f64,
) -> Result<(Vec<Annotation>, usize), AugmentError> {
    let mut kept = Vec::with_capacity(annotations.len());
    let mut dropped = 0;
    for a in annotations {
        let original = norm_to_abs(&a.bbox, from);
        let warped = warp_box(&original, m)?;
        let full = warped.area();
        let survivor = clip_box(&warped, to).filter(|c| full > 0.0 && c.area() / full >= min_visibility);
        match survivor {
            // Untouched boxes keep their exact normalized values.
            Some(c) if from == to && c == original => kept.push(*a),
            Some(c) => kept.push(Annotation::new(a.class, abs_to_norm(&c, to)?)),
            None => dropped += 1,
        }
    }
    Ok((kept, dropped))
}

/// Result of a geometric step: the image, the transform that was applied
/// (in pixel coordinates) and how many boxes were filtered out.
#[derive(Debug, Clone)]
pub struct GeometricOutcome {
    pub image: LabeledImage,
    pub transform: Homography,
    pub dropped: usize,
}

pub fn warp_with_labels(img: &LabeledImage, m: &Homography, min_visibility: f64) -> Result<GeometricOutcome, AugmentError> {
    let d = img.dims();
    let (annotations, dropped) = transform_annotations(&img.annotations, m, d, d, min_visibility)?;
    let pixels = warp_pixels(&img.pixels, m)?;
    Ok(GeometricOutcome {
        image: LabeledImage::new(img.id.clone(), pixels, annotations),
        transform: *m,
        dropped,
    })
}

/// Stretch resize. Normalized labels are unchanged.
pub fn resize_with_labels(img: &LabeledImage, target: ImageDims) -> Result<LabeledImage, AugmentError> {
    target.check()?;
    Ok(LabeledImage::new(
        img.id.clone(),
        resize_pixels(&img.pixels, target.width, target.height),
        img.annotations.clone(),
    ))
}

fn check_kernel(img: &LabeledImage, kernel: u32) -> Result<(), AugmentError> {
    if kernel == 0 || kernel.is_multiple_of(2) {
        return Err(AugmentError::InvalidSpec(format!("kernel {kernel} must be odd and >= 1")));
    }
    let d = img.dims();
    if kernel > d.width.min(d.height) {
        return Err(AugmentError::KernelTooLarge {
            kernel,
            width: d.width,
            height: d.height,
        });
    }
    Ok(())
}

/// Applies `reduce` to the edge-replicated `kernel x kernel` window of every
/// pixel, per channel.
fn window_filter(src: &RgbImage, kernel: u32, reduce: impl Fn(&mut Vec<u8>) -> u8) -> RgbImage {
    let r = (kernel / 2) as i64;
    let (w, h) = (src.width() as i64, src.height() as i64);
    let mut window = Vec::with_capacity((kernel * kernel) as usize);
    let mut out = RgbImage::new(src.width(), src.height());
    for y in 0..h {
        for x in 0..w {
            let mut px = [0u8; 3];
            for (c, slot) in px.iter_mut().enumerate() {
                window.clear();
                for dy in -r..=r {
                    let yy = (y + dy).clamp(0, h - 1) as u32;
                    for dx in -r..=r {
                        let xx = (x + dx).clamp(0, w - 1) as u32;
                        window.push(src.get_pixel(xx, yy).0[c]);
                    }
                }
                *slot = reduce(&mut window);
            }
            out.put_pixel(x as u32, y as u32, Rgb(px));
        }
    }
    out
}

/// Box-mean filter with edge replication; labels unchanged.
pub fn blur(img: &LabeledImage, kernel: u32) -> Result<LabeledImage, AugmentError> {
    check_kernel(img, kernel)?;
    if kernel == 1 {
        return Ok(img.clone());
    }
    let pixels = window_filter(&img.pixels, kernel, |win| {
        let n = win.len() as u32;
        let sum: u32 = win.iter().map(|&v| v as u32).sum();
        ((sum + n / 2) / n) as u8
    });
    Ok(LabeledImage::new(img.id.clone(), pixels, img.annotations.clone()))
}

/// Median filter with edge replication; labels unchanged.
pub fn median_blur(img: &LabeledImage, kernel: u32) -> Result<LabeledImage, AugmentError> {
    check_kernel(img, kernel)?;
    if kernel == 1 {
        return Ok(img.clone());
    }
    let pixels = window_filter(&img.pixels, kernel, |win| {
        let mid = win.len() / 2;
        *win.select_nth_unstable(mid).1
    });
    Ok(LabeledImage::new(img.id.clone(), pixels, img.annotations.clone()))
}

/// Rec. 601 luma `0.299 R + 0.587 G + 0.114 B`, rounded, replicated to three
/// channels. Integer arithmetic keeps it exactly idempotent.
pub fn luma(p: Rgb<u8>) -> u8 {
    let [r, g, b] = p.0;
    ((299 * r as u32 + 587 * g as u32 + 114 * b as u32 + 500) / 1000) as u8
}

pub fn grayscale(img: &LabeledImage) -> LabeledImage {
    let mut pixels = img.pixels.clone();
    for p in pixels.pixels_mut() {
        let y = luma(*p);
        *p = Rgb([y, y, y]);
    }
    LabeledImage::new(img.id.clone(), pixels, img.annotations.clone())
}

fn frame_corners(d: ImageDims) -> [(f64, f64); 4] {
    let (w, h) = (d.width as f64, d.height as f64);
    [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)]
}

fn sample_perspective(d: ImageDims, jitter: f64, rng: &mut KeyedRng) -> Option<Homography> {
    let src = frame_corners(d);
    let mut dst = src;
    for corner in dst.iter_mut() {
        let dx = rng.random_range(-jitter..=jitter) * d.width as f64;
        let dy = rng.random_range(-jitter..=jitter) * d.height as f64;
        corner.0 += dx;
        corner.1 += dy;
    }
    if dst == src {
        return Some(Homography::identity());
    }
    Homography::from_quad(&src, &dst)
}

/// Random corner-jitter homography. A degenerate sample is redrawn once.
pub fn perspective_with_labels(
    img: &LabeledImage,
    max_corner_jitter: f64,
    min_visibility: f64,
    rng: &mut KeyedRng,
) -> Result<GeometricOutcome, AugmentError> {
    if !(0.0..0.5).contains(&max_corner_jitter) {
        return Err(AugmentError::InvalidSpec(format!(
            "max_corner_jitter {max_corner_jitter} outside [0, 0.5)"
        )));
    }
    let d = img.dims();
    let attempt = |rng: &mut KeyedRng| -> Result<GeometricOutcome, AugmentError> {
        let m = sample_perspective(d, max_corner_jitter, rng).ok_or(GeometryError::DegenerateTransform {
            x: f64::NAN,
            y: f64::NAN,
            w: 0.0,
        })?;
        warp_with_labels(img, &m, min_visibility)
    };
    match attempt(rng) {
        Err(AugmentError::Geometry(GeometryError::DegenerateTransform { .. })) => attempt(rng),
        other => other,
    }
}

/// Random uniform scale about the image center in `[lo, hi]`, followed by a
/// random shift of up to `max_dx * width`, `max_dy * height`.
pub fn scale_translate_with_labels(
    img: &LabeledImage,
    scale: (f64, f64),
    shift: (f64, f64),
    min_visibility: f64,
    rng: &mut KeyedRng,
) -> Result<GeometricOutcome, AugmentError> {
    let (lo, hi) = scale;
    if !(lo > 0.0 && lo <= hi) {
        return Err(AugmentError::InvalidSpec(format!("scale range [{lo}, {hi}] invalid")));
    }
    let d = img.dims();
    let (w, h) = (d.width as f64, d.height as f64);
    let s = rng.random_range(lo..=hi);
    let dx = rng.random_range(-shift.0..=shift.0) * w;
    let dy = rng.random_range(-shift.1..=shift.1) * h;
    let m = Homography::scaling_about(s, s, w / 2.0, h / 2.0).then(&Homography::translation(dx, dy));
    warp_with_labels(img, &m, min_visibility)
}

#[derive(Debug, Clone)]
pub struct MosaicOutcome {
    pub image: LabeledImage,
    /// Pivot in target pixels.
    pub pivot: (u32, u32),
    /// Source-to-target transform of each input (TL, TR, BL, BR).
    pub transforms: [Homography; 4],
    pub dropped: usize,
}

/// Composites four images into the quadrants around `pivot`, each input
/// stretched to fill its quadrant.
pub fn mosaic4_at(
    imgs: &[LabeledImage],
    target: ImageDims,
    pivot: (u32, u32),
    min_visibility: f64,
) -> Result<MosaicOutcome, AugmentError> {
    if imgs.len() != 4 {
        return Err(AugmentError::MosaicArity(imgs.len()));
    }
    target.check()?;
    let (tw, th) = (target.width, target.height);
    let px = pivot.0.clamp(1, tw.saturating_sub(1).max(1));
    let py = pivot.1.clamp(1, th.saturating_sub(1).max(1));
    let quads = [(0, 0, px, py), (px, 0, tw, py), (0, py, px, th), (px, py, tw, th)];

    let mut canvas = RgbImage::new(tw, th);
    let mut annotations = Vec::new();
    let mut dropped = 0;
    let mut transforms = [Homography::identity(); 4];
    for (i, (img, &(x0, y0, x1, y1))) in imgs.iter().zip(quads.iter()).enumerate() {
        let (qw, qh) = (x1 - x0, y1 - y0);
        if qw == 0 || qh == 0 {
            dropped += img.annotations.len();
            continue;
        }
        let d = img.dims();
        let m = Homography::scaling_about(qw as f64 / d.width as f64, qh as f64 / d.height as f64, 0.0, 0.0)
            .then(&Homography::translation(x0 as f64, y0 as f64));
        transforms[i] = m;
        let tile = resize_pixels(&img.pixels, qw, qh);
        image::imageops::replace(&mut canvas, &tile, x0 as i64, y0 as i64);
        let (kept, lost) = transform_annotations(&img.annotations, &m, d, target, min_visibility)?;
        annotations.extend(kept);
        dropped += lost;
    }
    Ok(MosaicOutcome {
        image: LabeledImage::new(format!("{}_mosaic", imgs[0].id), canvas, annotations),
        pivot: (px, py),
        transforms,
        dropped,
    })
}

/// Mosaic with a pivot drawn uniformly from the central `[0.25, 0.75]^2`.
pub fn mosaic4(
    imgs: &[LabeledImage],
    target: ImageDims,
    min_visibility: f64,
    rng: &mut KeyedRng,
) -> Result<MosaicOutcome, AugmentError> {
    let u: f64 = rng.random_range(0.25..=0.75);
    let v: f64 = rng.random_range(0.25..=0.75);
    let pivot = (
        (u * target.width as f64).round() as u32,
        (v * target.height as f64).round() as u32,
    );
    mosaic4_at(imgs, target, pivot, min_visibility)
}

/// Applies one single-image step. Returns the image and the number of boxes
/// dropped by visibility filtering.
pub fn apply_step(
    img: &LabeledImage,
    step: &Step,
    min_visibility: f64,
    rng: &mut KeyedRng,
) -> Result<(LabeledImage, usize), AugmentError> {
    if let Some(p) = step.probability {
        if rng.random::<f64>() >= p {
            return Ok((img.clone(), 0));
        }
    }
    let geometric = |o: GeometricOutcome| (o.image, o.dropped);
    Ok(match step.kind {
        StepKind::Resize { width, height } => (resize_with_labels(img, ImageDims::new(width, height)?)?, 0),
        StepKind::Blur { kernel } => (blur(img, kernel)?, 0),
        StepKind::MedianBlur { kernel } => (median_blur(img, kernel)?, 0),
        StepKind::Grayscale => (grayscale(img), 0),
        StepKind::Perspective { max_corner_jitter } => {
            geometric(perspective_with_labels(img, max_corner_jitter, min_visibility, rng)?)
        }
        StepKind::RandomScale { lo, hi } => {
            geometric(scale_translate_with_labels(img, (lo, hi), (0.0, 0.0), min_visibility, rng)?)
        }
        StepKind::RandomTranslate { max_dx, max_dy } => {
            geometric(scale_translate_with_labels(img, (1.0, 1.0), (max_dx, max_dy), min_visibility, rng)?)
        }
        StepKind::Mosaic4 => return Err(AugmentError::MosaicArity(1)),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageFailure {
    pub id: String,
    pub step: usize,
    pub error: AugmentError,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    /// Sorted by image id.
    pub images: Vec<LabeledImage>,
    pub failures: Vec<ImageFailure>,
    /// Boxes removed by visibility filtering at each step.
    pub dropped_per_step: Vec<usize>,
    /// Ids left over when the batch size was not a multiple of 4 at a mosaic step.
    pub mosaic_leftovers: Vec<String>,
}

/// Runs `spec` over `imgs`. Inputs are ordered by id first; mosaic steps
/// group consecutive runs of 4. Every random draw comes from
/// `keyed_rng(spec.seed, image id, step index)`, so outputs are identical for
/// any `workers` value.
pub fn apply_pipeline(imgs: Vec<LabeledImage>, spec: &AugmentationSpec, workers: usize) -> Result<PipelineOutput, AugmentError> {
    spec.validate()?;
    let mut batch = imgs;
    batch.sort_by(|a, b| a.id.cmp(&b.id));
    let mut failures = Vec::new();
    let mut dropped_per_step = vec![0; spec.steps.len()];
    let mut mosaic_leftovers = Vec::new();
    let mv = spec.min_visibility;

    par::with_workers(workers, || {
        for (index, step) in spec.steps.iter().enumerate() {
            if step.kind == StepKind::Mosaic4 {
                let full = batch.len() / 4 * 4;
                mosaic_leftovers.extend(batch[full..].iter().map(|i| i.id.clone()));
                let results: Vec<_> = batch[..full]
                    .par_chunks(4)
                    .map(|group| {
                        let mut rng = keyed_rng(spec.seed, &group[0].id, index);
                        mosaic4(group, group[0].dims(), mv, &mut rng).map_err(|e| (group[0].id.clone(), e))
                    })
                    .collect();
                batch = Vec::with_capacity(results.len());
                for r in results {
                    match r {
                        Ok(o) => {
                            dropped_per_step[index] += o.dropped;
                            batch.push(o.image);
                        }
                        Err((id, error)) => failures.push(ImageFailure { id, step: index, error }),
                    }
                }
            } else {
                let results: Vec<_> = batch
                    .par_iter()
                    .map(|img| {
                        let mut rng = keyed_rng(spec.seed, &img.id, index);
                        apply_step(img, step, mv, &mut rng).map_err(|e| (img.id.clone(), e))
                    })
                    .collect();
                batch = Vec::with_capacity(results.len());
                for r in results {
                    match r {
                        Ok((img, dropped)) => {
                            dropped_per_step[index] += dropped;
                            batch.push(img);
                        }
                        Err((id, error)) => failures.push(ImageFailure { id, step: index, error }),
                    }
                }
            }
        }
    });
    batch.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(PipelineOutput {
        images: batch,
        failures,
        dropped_per_step,
        mosaic_leftovers,
    })
}
