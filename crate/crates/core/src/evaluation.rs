//! Detection scoring: greedy matching, PR curves, AP/mAP, per-class
//! precision/recall and the confusion matrix.
//!
//! AP pools detections across all images per class. Ties in confidence are
//! broken by image id and then by input index, so results never depend on
//! the order images are supplied in.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Detection, DetectionSet};
use crate::dataset::{Annotation, GroundTruthSet};
use crate::geometry::norm_iou;
use crate::Scalar;

pub const DEFAULT_CONF_THRESHOLD: f64 = 0.25;
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.45;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("predictions reference images missing from the ground truth: {}", .0.join(", "))]
    UnknownImages(Vec<String>),
    #[error("{name} threshold {value} outside [0, 1]")]
    InvalidThreshold { name: &'static str, value: f64 },
    #[error("unknown AP mode {0:?} (expected coco101 or voc11)")]
    UnknownApMode(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApMode {
    /// Mean interpolated precision at recall 0, 0.01, ..., 1.
    #[default]
    Coco101,
    /// Mean interpolated precision at recall 0, 0.1, ..., 1.
    Voc11,
}

impl ApMode {
    fn grid_steps(self) -> usize {
        match self {
            ApMode::Coco101 => 100,
            ApMode::Voc11 => 10,
        }
    }
}

impl FromStr for ApMode {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "coco101" => Ok(ApMode::Coco101),
            "voc11" => Ok(ApMode::Voc11),
            other => Err(EvalError::UnknownApMode(other.to_string())),
        }
    }
}

impl fmt::Display for ApMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ApMode::Coco101 => "coco101",
            ApMode::Voc11 => "voc11",
        })
    }
}

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn iou_grid() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatchedDetection {
    /// Index into the detection slice passed to the matcher.
    pub index: usize,
    pub class: usize,
    pub confidence: f64,
    /// Index of the claimed ground-truth box.
    pub gt: Option<usize>,
    /// IoU with the claimed box, 0 when unmatched.
    pub iou: f64,
}

impl MatchedDetection {
    pub fn is_tp(&self) -> bool {
        self.gt.is_some()
    }
}

/// Outcome of matching one image's detections against its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchResult {
    /// In processing order: descending confidence, ties by input index.
    pub detections: Vec<MatchedDetection>,
    /// `gt_matched[j]` is the detection index that claimed ground truth `j`.
    pub gt_matched: Vec<Option<usize>>,
}

impl MatchResult {
    pub fn true_positives(&self) -> usize {
        self.detections.iter().filter(|d| d.is_tp()).count()
    }

    pub fn false_positives(&self) -> usize {
        self.detections.len() - self.true_positives()
    }

    pub fn false_negatives(&self) -> usize {
        self.gt_matched.iter().filter(|m| m.is_none()).count()
    }
}

/// Detection indices in descending confidence, ties by ascending index.
pub fn confidence_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence).then(a.cmp(&b)));
    order
}

fn match_impl(dets: &[Detection], gts: &[Annotation], iou_threshold: f64, class_aware: bool) -> MatchResult {
    let mut gt_matched = vec![None; gts.len()];
    let mut detections = Vec::with_capacity(dets.len());
    for i in confidence_order(dets) {
        let d = &dets[i];
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            if gt_matched[j].is_some() || (class_aware && g.class != d.class) {
                continue;
            }
            let overlap = norm_iou(&d.bbox, &g.bbox);
            if overlap >= iou_threshold && best.is_none_or(|(_, v)| overlap > v) {
                best = Some((j, overlap));
            }
        }
        if let Some((j, _)) = best {
            gt_matched[j] = Some(i);
        }
        detections.push(MatchedDetection {
            index: i,
            class: d.class,
            confidence: d.confidence,
            gt: best.map(|(j, _)| j),
            iou: best.map_or(0.0, |(_, v)| v),
        });
    }
    MatchResult { detections, gt_matched }
}

/// Greedy one-to-one matching. Each detection, in descending confidence,
/// claims the unclaimed same-class ground truth with the highest IoU
/// `>= iou_threshold` (ties to the lowest index).
pub fn match_greedy(dets: &[Detection], gts: &[Annotation], iou_threshold: f64) -> MatchResult {
    match_impl(dets, gts, iou_threshold, true)
}

/// As [`match_greedy`] but ignoring classes, as used by the confusion matrix.
pub fn match_agnostic(dets: &[Detection], gts: &[Annotation], iou_threshold: f64) -> MatchResult {
    match_impl(dets, gts, iou_threshold, false)
}

/// Cumulative (recall, precision) after each detection of a
/// confidence-sorted TP/FP sequence. Empty when `gt_count == 0`.
pub fn pr_curve<T: Scalar>(tp_flags: &[bool], gt_count: usize) -> Vec<(T, T)> {
    if gt_count == 0 {
        return Vec::new();
    }
    let gt = T::from_count(gt_count);
    let mut tp = 0usize;
    tp_flags
        .iter()
        .enumerate()
        .map(|(k, &hit)| {
            tp += usize::from(hit);
            (T::from_count(tp) / gt, T::from_count(tp) / T::from_count(k + 1))
        })
        .collect()
}

/// Interpolated AP: the mean over the recall grid of the maximum precision
/// at recall `>= r`, 0 where that recall is never reached.
pub fn average_precision<T: Scalar>(curve: &[(T, T)], mode: ApMode) -> T {
    let steps = mode.grid_steps();
    if curve.is_empty() {
        return T::zero();
    }
    // Suffix maxima of precision, so envelope[k] = max precision at points k...
    let mut envelope: Vec<T> = curve.iter().map(|&(_, p)| p).collect();
    for k in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[k] = envelope[k].max(envelope[k + 1]);
    }
    let mut total = T::zero();
    let mut k = 0;
    for i in 0..=steps {
        let r = T::from_count(i) / T::from_count(steps);
        // Recall is non-decreasing along the curve.
        while k < curve.len() && curve[k].0 < r {
            k += 1;
        }
        if k == curve.len() {
            break;
        }
        total = total + envelope[k];
    }
    total / T::from_count(steps + 1)
}

/// Unknown prediction image ids, sorted.
pub fn unknown_images(dets: &DetectionSet, gt: &GroundTruthSet) -> Vec<String> {
    dets.image_ids().filter(|id| !gt.contains(id)).map(str::to_string).collect()
}

fn check_images(dets: &DetectionSet, gt: &GroundTruthSet) -> Result<(), EvalError> {
    let unknown = unknown_images(dets, gt);
    if unknown.is_empty() {
        Ok(())
    } else {
        Err(EvalError::UnknownImages(unknown))
    }
}

fn check_threshold(name: &'static str, value: f64) -> Result<(), EvalError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(EvalError::InvalidThreshold { name, value })
    }
}

fn gt_counts(gt: &GroundTruthSet) -> Vec<usize> {
    let mut counts = vec![0; gt.taxonomy.len()];
    for e in gt.images() {
        for a in &e.annotations {
            counts[a.class] += 1;
        }
    }
    counts
}

/// Per-class AP at one IoU threshold; `None` for classes without ground truth.
fn class_aps(dets: &DetectionSet, gt: &GroundTruthSet, iou_threshold: f64, mode: ApMode) -> Vec<Option<f64>> {
    let n = gt.taxonomy.len();
    // (confidence, image rank, detection index, tp)
    let mut pooled: Vec<Vec<(f64, usize, usize, bool)>> = vec![Vec::new(); n];
    for (rank, entry) in gt.images().iter().enumerate() {
        let Some(image_dets) = dets.get(&entry.id) else { continue };
        let m = match_greedy(image_dets, &entry.annotations, iou_threshold);
        for md in m.detections {
            if md.class < n {
                pooled[md.class].push((md.confidence, rank, md.index, md.is_tp()));
            }
        }
    }
    let counts = gt_counts(gt);
    pooled
        .into_iter()
        .zip(counts)
        .map(|(mut list, count)| {
            if count == 0 {
                return None;
            }
            list.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let flags: Vec<bool> = list.iter().map(|e| e.3).collect();
            Some(average_precision(&pr_curve::<f64>(&flags, count), mode))
        })
        .collect()
}

fn mean_defined(values: &[Option<f64>]) -> f64 {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    if defined.is_empty() {
        0.0
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassAps {
    pub per_class: Vec<Option<f64>>,
    /// Mean over classes with at least one ground-truth instance.
    pub mean: f64,
}

/// Per-class AP at one IoU threshold, pooled over images.
pub fn map_at(dets: &DetectionSet, gt: &GroundTruthSet, iou_threshold: f64, mode: ApMode) -> Result<ClassAps, EvalError> {
    check_threshold("iou", iou_threshold)?;
    check_images(dets, gt)?;
    let per_class = class_aps(dets, gt, iou_threshold, mode);
    let mean = mean_defined(&per_class);
    Ok(ClassAps { per_class, mean })
}

/// Mean of [`map_at`] over [`iou_grid`].
pub fn map_range(dets: &DetectionSet, gt: &GroundTruthSet, mode: ApMode) -> Result<f64, EvalError> {
    let grid = iou_grid();
    let per: Vec<ClassAps> = grid
        .par_iter()
        .map(|&t| map_at(dets, gt, t, mode))
        .collect::<Result<_, _>>()?;
    Ok(per.iter().map(|a| a.mean).sum::<f64>() / grid.len() as f64)
}

/// `(n+1) x (n+1)` counts indexed `[predicted][true]`; index `n` is background.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    fn zeros(class_names: &[String]) -> Self {
        let mut labels = class_names.to_vec();
        labels.push("background".into());
        let k = labels.len();
        Self {
            labels,
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn background(&self) -> usize {
        self.labels.len() - 1
    }

    pub fn get(&self, predicted: usize, truth: usize) -> u64 {
        self.counts[predicted][truth]
    }

    pub fn column_sum(&self, truth: usize) -> u64 {
        self.counts.iter().map(|row| row[truth]).sum()
    }

    pub fn row_sum(&self, predicted: usize) -> u64 {
        self.counts[predicted].iter().sum()
    }

    pub fn is_diagonal(&self) -> bool {
        self.counts
            .iter()
            .enumerate()
            .all(|(i, row)| row.iter().enumerate().all(|(j, &c)| i == j || c == 0))
    }
}

fn above_cutoff(dets: &[Detection], conf_threshold: f64) -> Vec<Detection> {
    dets.iter().filter(|d| d.confidence >= conf_threshold).copied().collect()
}

/// Class-agnostic matching of detections with confidence `>= conf_threshold`.
pub fn confusion_matrix(
    dets: &DetectionSet,
    gt: &GroundTruthSet,
    conf_threshold: f64,
    iou_threshold: f64,
) -> Result<ConfusionMatrix, EvalError> {
    check_threshold("confidence", conf_threshold)?;
    check_threshold("iou", iou_threshold)?;
    check_images(dets, gt)?;
    let mut cm = ConfusionMatrix::zeros(gt.taxonomy.names());
    let bg = cm.background();
    for entry in gt.images() {
        let kept = above_cutoff(dets.get(&entry.id).unwrap_or(&[]), conf_threshold);
        let m = match_agnostic(&kept, &entry.annotations, iou_threshold);
        for md in &m.detections {
            let truth = md.gt.map_or(bg, |j| entry.annotations[j].class);
            cm.counts[md.class][truth] += 1;
        }
        for (j, claimed) in m.gt_matched.iter().enumerate() {
            if claimed.is_none() {
                cm.counts[bg][entry.annotations[j].class] += 1;
            }
        }
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub instances: usize,
    /// `None` when the class has neither ground truth nor detections at the cutoff.
    pub precision: Option<f64>,
    /// `None` for classes without ground truth, as are the AP columns.
    pub recall: Option<f64>,
    pub map50: Option<f64>,
    pub map50_95: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub conf_threshold: f64,
    pub iou_threshold: f64,
    pub iou_grid: Vec<f64>,
    pub ap_mode: ApMode,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            conf_threshold: DEFAULT_CONF_THRESHOLD,
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            iou_grid: iou_grid(),
            ap_mode: ApMode::Coco101,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub settings: EvalSettings,
    pub images: usize,
    pub classes: Vec<ClassMetrics>,
    /// Means over classes with at least one ground-truth instance.
    pub all: ClassMetrics,
    pub confusion: ConfusionMatrix,
}

/// Precision and recall per class at the confidence cutoff, class-aware
/// matching at `iou_threshold`.
fn precision_recall(dets: &DetectionSet, gt: &GroundTruthSet, conf: f64, iou_threshold: f64) -> Vec<(Option<f64>, Option<f64>)> {
    let n = gt.taxonomy.len();
    let mut tp = vec![0usize; n];
    let mut predicted = vec![0usize; n];
    for entry in gt.images() {
        let kept = above_cutoff(dets.get(&entry.id).unwrap_or(&[]), conf);
        let m = match_greedy(&kept, &entry.annotations, iou_threshold);
        for md in &m.detections {
            predicted[md.class] += 1;
            tp[md.class] += usize::from(md.is_tp());
        }
    }
    gt_counts(gt)
        .into_iter()
        .enumerate()
        .map(|(c, count)| {
            let precision = match (predicted[c], count) {
                (0, 0) => None,
                (0, _) => Some(0.0),
                (p, _) => Some(tp[c] as f64 / p as f64),
            };
            let recall = (count > 0).then(|| tp[c] as f64 / count as f64);
            (precision, recall)
        })
        .collect()
}

/// Per-class rows plus the "all" row and the confusion matrix.
pub fn per_class_report(dets: &DetectionSet, gt: &GroundTruthSet, settings: &EvalSettings) -> Result<EvalReport, EvalError> {
    check_threshold("confidence", settings.conf_threshold)?;
    check_threshold("iou", settings.iou_threshold)?;
    for &t in &settings.iou_grid {
        check_threshold("iou", t)?;
    }
    check_images(dets, gt)?;

    let grid = &settings.iou_grid;
    let per_threshold: Vec<Vec<Option<f64>>> = grid
        .par_iter()
        .map(|&t| class_aps(dets, gt, t, settings.ap_mode))
        .collect();
    let at50 = class_aps(dets, gt, 0.5, settings.ap_mode);
    let pr = precision_recall(dets, gt, settings.conf_threshold, settings.iou_threshold);
    let counts = gt_counts(gt);

    let classes: Vec<ClassMetrics> = (0..gt.taxonomy.len())
        .map(|c| {
            let range = (counts[c] > 0 && !grid.is_empty())
                .then(|| per_threshold.iter().map(|v| v[c].unwrap_or(0.0)).sum::<f64>() / grid.len() as f64);
            ClassMetrics {
                class: gt.taxonomy.names()[c].clone(),
                instances: counts[c],
                precision: pr[c].0,
                recall: pr[c].1,
                map50: at50[c],
                map50_95: range,
            }
        })
        .collect();

    let scored: Vec<&ClassMetrics> = classes.iter().filter(|m| m.instances > 0).collect();
    let mean = |f: fn(&ClassMetrics) -> Option<f64>| {
        if scored.is_empty() {
            0.0
        } else {
            scored.iter().map(|m| f(m).unwrap_or(0.0)).sum::<f64>() / scored.len() as f64
        }
    };
    let map50_95 = if grid.is_empty() {
        0.0
    } else {
        per_threshold.iter().map(|v| mean_defined(v)).sum::<f64>() / grid.len() as f64
    };
    let all = ClassMetrics {
        class: "all".into(),
        instances: counts.iter().sum(),
        precision: Some(mean(|m| m.precision)),
        recall: Some(mean(|m| m.recall)),
        map50: Some(mean_defined(&at50)),
        map50_95: Some(map50_95),
    };
    let confusion = confusion_matrix(dets, gt, settings.conf_threshold, settings.iou_threshold)?;
    Ok(EvalReport {
        settings: settings.clone(),
        images: gt.images().len(),
        classes,
        all,
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ClassTaxonomy, ImageEntry};
    use crate::NormBox;
    use proptest::prelude::*;

    fn nb(cx: f64, cy: f64, w: f64, h: f64) -> NormBox {
        NormBox { cx, cy, w, h }
    }

    fn det(class: usize, conf: f64, b: NormBox) -> Detection {
        Detection::new(class, conf, b)
    }

    fn gt_set(names: &[&str], images: Vec<(&str, Vec<Annotation>)>) -> GroundTruthSet {
        let tax = ClassTaxonomy::new(names.iter().copied()).unwrap();
        let entries = images
            .into_iter()
            .map(|(id, annotations)| ImageEntry {
                id: id.into(),
                dims: None,
                annotations,
            })
            .collect();
        GroundTruthSet::new(tax, entries)
    }

    fn oracle_dets(gt: &GroundTruthSet) -> DetectionSet {
        gt.images()
            .iter()
            .map(|e| (e.id.clone(), e.annotations.iter().map(|a| det(a.class, 1.0, a.bbox)).collect()))
            .collect()
    }

    #[test]
    fn match_examples() {
        let g = [Annotation::new(0, nb(0.5, 0.5, 0.2, 0.2))];
        let m = match_greedy(&[det(0, 0.9, nb(0.5, 0.5, 0.2, 0.2))], &g, 0.5);
        assert_eq!((m.true_positives(), m.false_positives(), m.false_negatives()), (1, 0, 0));

        // Two detections over one GT at IoU 0.9 (width 0.2 -> 0.2/0.9 overlap shifted).
        let shifted = nb(0.5 + 0.2 * (1.0 - 0.9) / (1.0 + 0.9), 0.5, 0.2, 0.2);
        assert!((norm_iou(&shifted, &g[0].bbox) - 0.9).abs() < 1e-12);
        let m = match_greedy(&[det(0, 0.8, shifted), det(0, 0.9, shifted)], &g, 0.5);
        assert_eq!((m.true_positives(), m.false_positives()), (1, 1));
        assert_eq!(m.detections[0].index, 1);
        assert!(m.detections[0].is_tp());

        // Wrong class never matches class-aware, does agnostic.
        let m = match_greedy(&[det(1, 0.9, g[0].bbox)], &g, 0.5);
        assert_eq!(m.true_positives(), 0);
        assert_eq!(match_agnostic(&[det(1, 0.9, g[0].bbox)], &g, 0.5).true_positives(), 1);
    }

    #[test]
    fn pr_curve_examples() {
        assert_eq!(pr_curve::<f64>(&[true], 1), vec![(1.0, 1.0)]);
        assert_eq!(pr_curve::<f64>(&[false, true], 1), vec![(0.0, 0.0), (1.0, 0.5)]);
        assert!(pr_curve::<f64>(&[], 1).is_empty());
        assert!(pr_curve::<f64>(&[true], 0).is_empty());
    }

    #[test]
    fn ap_examples() {
        for mode in [ApMode::Coco101, ApMode::Voc11] {
            assert_eq!(average_precision(&[(1.0, 1.0)], mode), 1.0);
            assert_eq!(average_precision(&[(0.0f64, 0.0), (1.0, 0.5)], mode), 0.5);
            assert_eq!(average_precision::<f64>(&[], mode), 0.0);
        }
        // Half recall at precision 1: 51 of 101 grid points.
        assert!((average_precision(&[(0.5f64, 1.0)], ApMode::Coco101) - 51.0 / 101.0).abs() < 1e-15);
        assert!((average_precision(&[(0.5f32, 1.0)], ApMode::Voc11) - 6.0 / 11.0).abs() < 1e-6);
    }

    #[test]
    fn map_examples() {
        let gt = gt_set(
            &["a", "b"],
            vec![
                ("i0", vec![Annotation::new(0, nb(0.3, 0.3, 0.2, 0.2))]),
                ("i1", vec![Annotation::new(1, nb(0.6, 0.6, 0.2, 0.2))]),
            ],
        );
        let perfect = oracle_dets(&gt);
        assert_eq!(map_at(&perfect, &gt, 0.5, ApMode::Coco101).unwrap().mean, 1.0);
        assert_eq!(map_range(&perfect, &gt, ApMode::Coco101).unwrap(), 1.0);
        assert_eq!(map_at(&DetectionSet::new(), &gt, 0.5, ApMode::Coco101).unwrap().mean, 0.0);
        assert_eq!(map_range(&DetectionSet::new(), &gt, ApMode::Coco101).unwrap(), 0.0);

        let mut half = DetectionSet::new();
        half.insert("i0", vec![det(0, 0.9, nb(0.3, 0.3, 0.2, 0.2))]);
        let aps = map_at(&half, &gt, 0.5, ApMode::Coco101).unwrap();
        assert_eq!(aps.per_class, vec![Some(1.0), Some(0.0)]);
        assert_eq!(aps.mean, 0.5);

        let mut unknown = DetectionSet::new();
        unknown.insert("zz", vec![]);
        assert_eq!(
            map_at(&unknown, &gt, 0.5, ApMode::Coco101),
            Err(EvalError::UnknownImages(vec!["zz".into()]))
        );
    }

    #[test]
    fn map_range_at_fixed_iou() {
        // Same height, shifted so IoU = 0.6 exactly: overlap 0.15, union 0.25 in width.
        let g = nb(0.5, 0.5, 0.2, 0.2);
        let d = nb(0.55, 0.5, 0.2, 0.2);
        let iou = norm_iou(&d, &g);
        assert!((iou - 0.6).abs() < 1e-12);
        let gt = gt_set(&["a"], vec![("i", vec![Annotation::new(0, g)])]);
        let mut dets = DetectionSet::new();
        dets.insert("i", vec![det(0, 0.9, d)]);
        let expected = if iou >= 0.6 { 0.3 } else { 0.2 };
        assert!((map_range(&dets, &gt, ApMode::Coco101).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn confusion_examples() {
        let names = ["c0", "c1", "c2", "c3", "c4", "c5"];
        let g = nb(0.5, 0.5, 0.2, 0.2);
        let gt = gt_set(&names, vec![("i", vec![Annotation::new(5, g)])]);
        let mut dets = DetectionSet::new();
        dets.insert("i", vec![det(2, 0.9, nb(0.5 + 0.2 * 0.2 / 1.8, 0.5, 0.2, 0.2))]);
        let cm = confusion_matrix(&dets, &gt, 0.25, 0.45).unwrap();
        assert_eq!(cm.get(2, 5), 1);
        assert_eq!(cm.counts.iter().flatten().sum::<u64>(), 1);
        assert_eq!(cm.labels.last().unwrap(), "background");

        let perfect = confusion_matrix(&oracle_dets(&gt), &gt, 0.25, 0.45).unwrap();
        assert!(perfect.is_diagonal());
        assert_eq!(perfect.get(5, 5), 1);

        // Below the cutoff: dropped, GT becomes background row.
        let mut low = DetectionSet::new();
        low.insert("i", vec![det(5, 0.1, g)]);
        let cm = confusion_matrix(&low, &gt, 0.25, 0.45).unwrap();
        assert_eq!(cm.get(cm.background(), 5), 1);
    }

    #[test]
    fn report_rows_and_dashes() {
        let gt = gt_set(
            &["a", "b", "c"],
            vec![
                ("i0", vec![Annotation::new(0, nb(0.3, 0.3, 0.2, 0.2))]),
                ("i1", vec![Annotation::new(1, nb(0.6, 0.6, 0.2, 0.2))]),
            ],
        );
        let r = per_class_report(&oracle_dets(&gt), &gt, &EvalSettings::default()).unwrap();
        for m in &r.classes[..2] {
            assert_eq!((m.precision, m.recall, m.map50, m.map50_95), (Some(1.0), Some(1.0), Some(1.0), Some(1.0)));
        }
        assert_eq!(r.classes[2].instances, 0);
        assert_eq!(r.classes[2].precision, None);
        assert_eq!(r.classes[2].map50, None);
        assert_eq!(r.all.precision, Some(1.0));
        assert_eq!(r.all.map50_95, Some(1.0));
        assert_eq!(r.all.instances, 2);
        assert_eq!(r.images, 2);
        assert!(r.confusion.is_diagonal());
    }

    fn arb_box() -> impl Strategy<Value = NormBox> {
        (0.05..0.95f64, 0.05..0.95f64, 0.02..0.5f64, 0.02..0.5f64).prop_map(|(cx, cy, w, h)| nb(cx, cy, w, h))
    }

    fn arb_scene() -> impl Strategy<Value = (Vec<Vec<Annotation>>, Vec<Vec<Detection>>)> {
        let ann = (0..3usize, arb_box()).prop_map(|(c, b)| Annotation::new(c, b));
        let dt = (0..3usize, 0.0..1.0f64, arb_box()).prop_map(|(c, s, b)| det(c, s, b));
        (
            prop::collection::vec(prop::collection::vec(ann, 0..5), 1..4),
            prop::collection::vec(prop::collection::vec(dt, 0..5), 1..4),
        )
    }

    fn build(scene: &(Vec<Vec<Annotation>>, Vec<Vec<Detection>>), order: &[usize]) -> (GroundTruthSet, DetectionSet) {
        let (gts, dts) = scene;
        let ids: Vec<String> = (0..gts.len()).map(|i| format!("img{i}")).collect();
        let images = order.iter().map(|&i| (ids[i].as_str(), gts[i].clone())).collect();
        let gt = gt_set(&["a", "b", "c"], images);
        let dets = order
            .iter()
            .filter(|&&i| i < dts.len())
            .map(|&i| (ids[i].clone(), dts[i].clone()))
            .collect();
        (gt, dets)
    }

    proptest! {
        #[test]
        fn metrics_in_range_and_order_free(scene in arb_scene()) {
            let n = scene.0.len();
            let fwd: Vec<usize> = (0..n).collect();
            let rev: Vec<usize> = (0..n).rev().collect();
            let (g1, d1) = build(&scene, &fwd);
            let (g2, d2) = build(&scene, &rev);
            let r1 = per_class_report(&d1, &g1, &EvalSettings::default()).unwrap();
            let r2 = per_class_report(&d2, &g2, &EvalSettings::default()).unwrap();
            prop_assert_eq!(&r1, &r2);
            for m in r1.classes.iter().chain([&r1.all]) {
                for v in [m.precision, m.recall, m.map50, m.map50_95].into_iter().flatten() {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
            let counts = gt_counts(&g1);
            for (c, &count) in counts.iter().enumerate() {
                prop_assert_eq!(r1.confusion.column_sum(c), count as u64);
            }
        }

        #[test]
        fn ap_non_increasing_in_threshold(scene in arb_scene()) {
            let n = scene.0.len();
            let (gt, dets) = build(&scene, &(0..n).collect::<Vec<_>>());
            let grid = iou_grid();
            for w in grid.windows(2) {
                let lo = map_at(&dets, &gt, w[0], ApMode::Coco101).unwrap();
                let hi = map_at(&dets, &gt, w[1], ApMode::Coco101).unwrap();
                for (a, b) in lo.per_class.iter().zip(&hi.per_class) {
                    prop_assert!(b.unwrap_or(0.0) <= a.unwrap_or(0.0) + 1e-12);
                }
            }
        }

        #[test]
        fn confidence_scaling_invariance(scene in arb_scene(), k in 1..8u32) {
            let n = scene.0.len();
            let (gt, dets) = build(&scene, &(0..n).collect::<Vec<_>>());
            // Powers of two keep the scaling exact, so ties are preserved.
            let s = 0.5f64.powi(k as i32);
            let scaled: DetectionSet = dets
                .iter()
                .map(|(id, d)| (id.to_string(), d.iter().map(|d| det(d.class, d.confidence * s, d.bbox)).collect()))
                .collect();
            for mode in [ApMode::Coco101, ApMode::Voc11] {
                prop_assert_eq!(map_at(&dets, &gt, 0.5, mode).unwrap(), map_at(&scaled, &gt, 0.5, mode).unwrap());
            }
        }
    }
}
