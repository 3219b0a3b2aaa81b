//! Rendering of evaluation, analysis and benchmark results: aligned text
//! tables, a stable structured JSON document, CSV and SVG plots.
//!
//! Every renderer is a pure function of its input, so equal inputs give
//! byte-identical output.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BenchSummary, TimingRecord};
use crate::dataset::{DatasetStats, SIZE_BINS};
use crate::evaluation::{ClassMetrics, ConfusionMatrix, EvalReport, EvalSettings};

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("unknown report format {0:?} (expected table, structured, csv or svg)")]
    UnknownFormat(String),
    #[error("malformed report document: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    /// Aligned per-class table.
    Table,
    /// JSON with the stable key set.
    Structured,
    /// Confusion matrix as CSV.
    Csv,
    /// Confusion matrix heatmap.
    Svg,
}

impl FromStr for ReportFormat {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table" => Ok(Self::Table),
            "structured" | "json" => Ok(Self::Structured),
            "csv" => Ok(Self::Csv),
            "svg" => Ok(Self::Svg),
            other => Err(ReportError::UnknownFormat(other.to_string())),
        }
    }
}

/// Rounds to 3 decimals and drops trailing zeros: `0.980 -> "0.98"`, `1.0 -> "1"`.
pub fn format_metric(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), format_metric)
}

/// The structured report document: per-class rows with the aggregate row
/// first, plus the settings echo and confusion matrix when known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub images: usize,
    pub rows: Vec<ClassMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub settings: Option<EvalSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confusion: Option<ConfusionMatrix>,
}

impl MetricsTable {
    pub fn from_report(r: &EvalReport) -> Self {
        let mut rows = vec![r.all.clone()];
        rows.extend(r.classes.iter().cloned());
        Self {
            images: r.images,
            rows,
            settings: Some(r.settings.clone()),
            confusion: Some(r.confusion.clone()),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ReportError> {
        serde_json::from_str(text).map_err(|e| ReportError::Malformed(e.to_string()))
    }

    pub fn row(&self, class: &str) -> Option<&ClassMetrics> {
        self.rows.iter().find(|r| r.class == class)
    }
}

pub const TABLE_COLUMNS: [&str; 6] = ["Class", "Instances", "Box(P)", "Box(R)", "Box(mAP50)", "Box(mAP50-95)"];

/// Aligned plain-text table. The image count is constant across rows and
/// is printed once above the header.
pub fn render_table(t: &MetricsTable) -> String {
    let mut grid: Vec<[String; 6]> = vec![TABLE_COLUMNS.map(str::to_string)];
    for r in &t.rows {
        grid.push([
            r.class.clone(),
            r.instances.to_string(),
            cell(r.precision),
            cell(r.recall),
            cell(r.map50),
            cell(r.map50_95),
        ]);
    }
    let mut widths = [0usize; 6];
    for row in &grid {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let _ = writeln!(out, "images: {}", t.images);
    if let Some(s) = &t.settings {
        let _ = writeln!(
            out,
            "conf: {}  iou: {}  ap: {}",
            s.conf_threshold, s.iou_threshold, s.ap_mode
        );
    }
    for row in &grid {
        let mut line = format!("{:<width$}", row[0], width = widths[0]);
        for (c, w) in row[1..].iter().zip(&widths[1..]) {
            let _ = write!(line, "  {c:>w$}");
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

/// Pretty JSON with keys `images`, `rows` (each with `class`, `instances`,
/// `precision`, `recall`, `map50`, `map50_95`; `null` where undefined, "all"
/// first), `settings` and `confusion`.
pub fn render_structured(t: &MetricsTable) -> String {
    let mut s = serde_json::to_string_pretty(t).expect("report serializes");
    s.push('\n');
    s
}

/// Rows are predicted classes, columns true classes.
pub fn render_confusion_csv(cm: &ConfusionMatrix) -> String {
    let mut out = String::from("predicted\\true");
    for l in &cm.labels {
        out.push(',');
        out.push_str(&csv_field(l));
    }
    out.push('\n');
    for (l, row) in cm.labels.iter().zip(&cm.counts) {
        out.push_str(&csv_field(l));
        for c in row {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Grey level for `v` in `[0, max]`: white for 0, dark for `max`.
fn shade(v: u64, max: u64) -> String {
    let t = if max == 0 { 0.0 } else { v as f64 / max as f64 };
    let g = (255.0 - 215.0 * t).round() as u8;
    format!("#{g:02x}{g:02x}{:02x}", 255u8)
}

/// Confusion matrix heatmap, one `rect.cell` per entry.
pub fn render_confusion_svg(cm: &ConfusionMatrix) -> String {
    let k = cm.labels.len();
    let size = 28usize;
    let margin = 140usize;
    let dim = margin + k * size + 10;
    let max = cm.counts.iter().flatten().copied().max().unwrap_or(0);
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{dim}\" height=\"{dim}\" viewBox=\"0 0 {dim} {dim}\" font-family=\"sans-serif\" font-size=\"10\">\n"
    );
    let _ = writeln!(out, "<text x=\"{margin}\" y=\"12\">true</text>");
    let _ = writeln!(out, "<text x=\"4\" y=\"{margin}\">predicted</text>");
    for (i, l) in cm.labels.iter().enumerate() {
        let pos = margin + i * size + size / 2;
        let name = xml_escape(l);
        let _ = writeln!(
            out,
            "<text x=\"{pos}\" y=\"{}\" text-anchor=\"end\" transform=\"rotate(-60 {pos} {})\">{name}</text>",
            margin - 4,
            margin - 4
        );
        let _ = writeln!(out, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{name}</text>", margin - 4, pos + 3);
    }
    for (p, row) in cm.counts.iter().enumerate() {
        for (t, &c) in row.iter().enumerate() {
            let (x, y) = (margin + t * size, margin + p * size);
            let _ = writeln!(
                out,
                "<rect class=\"cell\" x=\"{x}\" y=\"{y}\" width=\"{size}\" height=\"{size}\" fill=\"{}\" data-predicted=\"{p}\" data-true=\"{t}\" data-count=\"{c}\"/>",
                shade(c, max)
            );
            if c > 0 {
                let _ = writeln!(
                    out,
                    "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{c}</text>",
                    x + size / 2,
                    y + size / 2 + 3
                );
            }
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Renders a report document in one of the [`ReportFormat`]s. The CSV and
/// SVG formats need the confusion matrix.
pub fn render_document(t: &MetricsTable, format: &str) -> Result<String, ReportError> {
    let format = format.parse::<ReportFormat>()?;
    let confusion = || {
        t.confusion
            .as_ref()
            .ok_or_else(|| ReportError::Malformed("document has no confusion matrix".into()))
    };
    Ok(match format {
        ReportFormat::Table => render_table(t),
        ReportFormat::Structured => render_structured(t),
        ReportFormat::Csv => render_confusion_csv(confusion()?),
        ReportFormat::Svg => render_confusion_svg(confusion()?),
    })
}

pub fn render_report(r: &EvalReport, format: &str) -> Result<String, ReportError> {
    render_document(&MetricsTable::from_report(r), format)
}

/// Vertical bar chart. Inside the plot viewport one user unit is one count,
/// so each `rect.bar` has `height` equal to its count.
pub fn render_bar_chart(title: &str, labels: &[String], counts: &[u64]) -> String {
    let n = labels.len().max(1);
    let max = counts.iter().copied().max().unwrap_or(0).max(1);
    let (plot_w, plot_h, left, top, bottom) = (40 * n, 300usize, 60usize, 30usize, 120usize);
    let (w, h) = (left + plot_w + 20, top + plot_h + bottom);
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    let _ = writeln!(out, "<title>{}</title>", xml_escape(title));
    let _ = writeln!(out, "<text x=\"{left}\" y=\"18\">{}</text>", xml_escape(title));
    let _ = writeln!(out, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{max}</text>", left - 4, top + 4);
    let _ = writeln!(out, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">0</text>", left - 4, top + plot_h);
    let _ = writeln!(
        out,
        "<svg x=\"{left}\" y=\"{top}\" width=\"{plot_w}\" height=\"{plot_h}\" viewBox=\"0 0 {n} {max}\" preserveAspectRatio=\"none\">"
    );
    for (i, (label, &c)) in labels.iter().zip(counts).enumerate() {
        let _ = writeln!(
            out,
            "<rect class=\"bar\" x=\"{}\" y=\"{}\" width=\"0.8\" height=\"{c}\" fill=\"#4c72b0\" data-label=\"{}\" data-count=\"{c}\"/>",
            i as f64 + 0.1,
            max - c,
            xml_escape(label)
        );
    }
    out.push_str("</svg>\n");
    for (i, label) in labels.iter().enumerate() {
        let x = left + 40 * i + 20;
        let y = top + plot_h + 8;
        let _ = writeln!(
            out,
            "<text x=\"{x}\" y=\"{y}\" text-anchor=\"end\" transform=\"rotate(-60 {x} {y})\">{}</text>",
            xml_escape(label)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Box width (x) against height (y) in normalized units, one `rect.cell` per
/// non-empty bin.
pub fn render_size_heatmap(stats: &DatasetStats) -> String {
    let size = 6usize;
    let (left, top) = (40usize, 20usize);
    let dim = SIZE_BINS * size;
    let (w, h) = (left + dim + 10, top + dim + 30);
    let max = stats.size_histogram.iter().copied().max().unwrap_or(0);
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"10\">\n"
    );
    let _ = writeln!(out, "<title>bounding box sizes</title>");
    let _ = writeln!(out, "<rect x=\"{left}\" y=\"{top}\" width=\"{dim}\" height=\"{dim}\" fill=\"#ffffff\" stroke=\"#888888\"/>");
    for hb in 0..SIZE_BINS {
        for wb in 0..SIZE_BINS {
            let c = stats.size_cell(wb, hb);
            if c == 0 {
                continue;
            }
            // Height grows upward.
            let (x, y) = (left + wb * size, top + (SIZE_BINS - 1 - hb) * size);
            let _ = writeln!(
                out,
                "<rect class=\"cell\" x=\"{x}\" y=\"{y}\" width=\"{size}\" height=\"{size}\" fill=\"{}\" data-w-bin=\"{wb}\" data-h-bin=\"{hb}\" data-count=\"{c}\"/>",
                shade(c, max)
            );
        }
    }
    let _ = writeln!(out, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">width</text>", left + dim / 2, top + dim + 20);
    let _ = writeln!(
        out,
        "<text x=\"12\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 12 {})\">height</text>",
        top + dim / 2,
        top + dim / 2
    );
    out.push_str("</svg>\n");
    out
}

pub const STAGE_LABELS: [&str; 3] = ["preprocess", "inference", "postprocess"];

/// Mean time per image for each stage, one `<stage> <ms> ms` row each.
pub fn render_bench_table(s: &BenchSummary) -> String {
    let rows = [
        (STAGE_LABELS[0], s.preprocess.mean),
        (STAGE_LABELS[1], s.inference.mean),
        (STAGE_LABELS[2], s.postprocess.mean),
    ];
    let values: Vec<String> = rows.iter().map(|(_, v)| format!("{v:.1} ms")).collect();
    let vw = values.iter().map(String::len).max().unwrap_or(0);
    let mut out = String::new();
    for ((label, _), v) in rows.iter().zip(&values) {
        let _ = writeln!(out, "{label:<11}  {v:>vw$}");
    }
    out
}

/// Full statistics per stage.
pub fn render_bench_detail(s: &BenchSummary) -> String {
    let mut out = format!("images: {}\n", s.count);
    let _ = writeln!(
        out,
        "{:<11}  {:>10}  {:>10}  {:>10}  {:>10}  {:>10}",
        "stage", "mean", "median", "p95", "min", "max"
    );
    for (label, st) in STAGE_LABELS.iter().zip([&s.preprocess, &s.inference, &s.postprocess]) {
        let _ = writeln!(
            out,
            "{label:<11}  {:>10.3}  {:>10.3}  {:>10.3}  {:>10.3}  {:>10.3}",
            st.mean, st.median, st.p95, st.min, st.max
        );
    }
    out
}

pub fn render_timing_csv(records: &[TimingRecord]) -> String {
    let mut out = String::from("image_id,preprocess_ms,inference_ms,postprocess_ms\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{:.6}",
            csv_field(&r.image_id),
            r.preprocess_ms,
            r.inference_ms,
            r.postprocess_ms
        );
    }
    out
}
