//! Independent reference implementations and fixture builders shared by the
//! integration tests and the acceptance suite. Nothing here calls the
//! library's matching or AP code.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Box as (class, confidence, cx, cy, w, h); confidence unused for ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefBox {
    pub class: usize,
    pub conf: f64,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl RefBox {
    fn edges(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
    }
}

pub fn ref_iou(a: &RefBox, b: &RefBox) -> f64 {
    let (ax1, ay1, ax2, ay2) = a.edges();
    let (bx1, by1, bx2, by2) = b.edges();
    let ix = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let iy = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = ix * iy;
    let union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Lattice points `(k + 0.5) / n` inside `[lo, hi]`, counted in closed form.
fn lattice_count(lo: f64, hi: f64, n: f64) -> i64 {
    let first = (lo * n - 0.5).ceil() as i64;
    let last = (hi * n - 0.5).floor() as i64;
    (last - first + 1).max(0)
}

/// IoU by counting cell centres of an `n x n` grid over `[0,1]^2`. Axis
/// aligned boxes rasterize to products of 1-D runs, so the counts separate.
pub fn raster_iou(a: (f64, f64, f64, f64), b: (f64, f64, f64, f64), n: u32) -> f64 {
    let n = n as f64;
    let area = |r: (f64, f64, f64, f64)| lattice_count(r.0, r.2, n) * lattice_count(r.1, r.3, n);
    let inter = (a.0.max(b.0), a.1.max(b.1), a.2.min(b.2), a.3.min(b.3));
    let i = if inter.0 <= inter.2 && inter.1 <= inter.3 { area(inter) } else { 0 };
    let u = area(a) + area(b) - i;
    if u == 0 {
        0.0
    } else {
        i as f64 / u as f64
    }
}

/// Greedy matching replayed by repeated selection: pick the highest
/// confidence unprocessed detection (lowest index on ties), give it the
/// best free same-class ground truth. Returns `tp` flags by detection index.
pub fn ref_greedy(dets: &[RefBox], gts: &[RefBox], thr: f64, class_aware: bool) -> (Vec<bool>, Vec<Option<usize>>) {
    let mut done = vec![false; dets.len()];
    let mut gt_owner: Vec<Option<usize>> = vec![None; gts.len()];
    let mut tp = vec![false; dets.len()];
    for _ in 0..dets.len() {
        let mut pick: Option<usize> = None;
        for i in 0..dets.len() {
            if !done[i] && pick.is_none_or(|p| dets[i].conf > dets[p].conf) {
                pick = Some(i);
            }
        }
        let i = pick.unwrap();
        done[i] = true;
        let mut best: Option<usize> = None;
        let mut best_iou = f64::NEG_INFINITY;
        for (j, g) in gts.iter().enumerate() {
            if gt_owner[j].is_some() || (class_aware && g.class != dets[i].class) {
                continue;
            }
            let v = ref_iou(&dets[i], g);
            if v >= thr && v > best_iou {
                best = Some(j);
                best_iou = v;
            }
        }
        if let Some(j) = best {
            gt_owner[j] = Some(i);
            tp[i] = true;
        }
    }
    (tp, gt_owner)
}

/// Interpolated AP with exact rational comparisons. `flags` are TP flags in
/// ranked order; the grid has `steps + 1` recall points.
pub fn ref_ap(flags: &[bool], gt_count: usize, steps: usize) -> f64 {
    if gt_count == 0 || flags.is_empty() {
        return 0.0;
    }
    // (tp, rank) after each detection; precision tp/rank, recall tp/gt.
    let mut points = Vec::new();
    let mut tp = 0usize;
    for (k, &f) in flags.iter().enumerate() {
        tp += f as usize;
        points.push((tp, k + 1));
    }
    let mut total = 0.0;
    for i in 0..=steps {
        // recall >= i/steps  <=>  tp * steps >= i * gt
        let mut best: Option<(usize, usize)> = None;
        for &(t, n) in &points {
            if t * steps >= i * gt_count && best.is_none_or(|(bt, bn)| t * bn > bt * n) {
                best = Some((t, n));
            }
        }
        if let Some((t, n)) = best {
            total += t as f64 / n as f64;
        }
    }
    total / (steps + 1) as f64
}

/// One image: ground truth and detections.
#[derive(Debug, Clone, Default)]
pub struct RefImage {
    pub id: String,
    pub gts: Vec<RefBox>,
    pub dets: Vec<RefBox>,
}

/// Per-class AP pooled over images, `None` for classes without ground truth.
/// Ties in confidence rank by image order then detection index.
pub fn ref_class_aps(images: &[RefImage], classes: usize, thr: f64, steps: usize) -> Vec<Option<f64>> {
    let mut sorted: Vec<&RefImage> = images.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    (0..classes)
        .map(|c| {
            let gt_count: usize = sorted.iter().map(|im| im.gts.iter().filter(|g| g.class == c).count()).sum();
            if gt_count == 0 {
                return None;
            }
            let mut ranked: Vec<(f64, usize, usize, bool)> = Vec::new();
            for (rank, im) in sorted.iter().enumerate() {
                let (tp, _) = ref_greedy(&im.dets, &im.gts, thr, true);
                for (i, d) in im.dets.iter().enumerate() {
                    if d.class == c {
                        ranked.push((d.conf, rank, i, tp[i]));
                    }
                }
            }
            // Insertion sort keeps the reference free of library ordering helpers.
            for a in 1..ranked.len() {
                let mut b = a;
                while b > 0 && {
                    let (x, y) = (&ranked[b - 1], &ranked[b]);
                    y.0 > x.0 || (y.0 == x.0 && (y.1, y.2) < (x.1, x.2))
                } {
                    ranked.swap(b - 1, b);
                    b -= 1;
                }
            }
            let flags: Vec<bool> = ranked.iter().map(|r| r.3).collect();
            Some(ref_ap(&flags, gt_count, steps))
        })
        .collect()
}

pub fn ref_mean(values: &[Option<f64>]) -> f64 {
    let v: Vec<f64> = values.iter().flatten().copied().collect();
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn ref_map(images: &[RefImage], classes: usize, thr: f64, steps: usize) -> f64 {
    ref_mean(&ref_class_aps(images, classes, thr, steps))
}

pub fn ref_map_range(images: &[RefImage], classes: usize, steps: usize) -> f64 {
    let ts: Vec<f64> = (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect();
    ts.iter().map(|&t| ref_map(images, classes, t, steps)).sum::<f64>() / ts.len() as f64
}

pub fn random_box(rng: &mut ChaCha8Rng, classes: usize, min_size: f64) -> RefBox {
    let w = rng.random_range(min_size..0.6);
    let h = rng.random_range(min_size..0.6);
    RefBox {
        class: rng.random_range(0..classes),
        conf: rng.random_range(0.0..1.0),
        cx: rng.random_range(w / 2.0..=1.0 - w / 2.0),
        cy: rng.random_range(h / 2.0..=1.0 - h / 2.0),
        w,
        h,
    }
}

/// Random scene: 1..=3 images, up to 6 GT and 6 detections each, some
/// detections placed near GT so matches occur, confidences sometimes tied.
pub fn random_scene(rng: &mut ChaCha8Rng, classes: usize) -> Vec<RefImage> {
    let n_images = rng.random_range(1..=3);
    (0..n_images)
        .map(|k| {
            let gts: Vec<RefBox> = (0..rng.random_range(0..=6)).map(|_| random_box(rng, classes, 0.05)).collect();
            let dets = (0..rng.random_range(0..=6))
                .map(|_| {
                    let mut d = if !gts.is_empty() && rng.random_bool(0.7) {
                        let g = gts[rng.random_range(0..gts.len())];
                        let j = 0.15;
                        let w = (g.w * (1.0 + rng.random_range(-j..j))).min(0.99);
                        let h = (g.h * (1.0 + rng.random_range(-j..j))).min(0.99);
                        RefBox {
                            class: if rng.random_bool(0.8) { g.class } else { rng.random_range(0..classes) },
                            conf: 0.0,
                            cx: (g.cx + rng.random_range(-j..j) * g.w).clamp(w / 2.0, 1.0 - w / 2.0),
                            cy: (g.cy + rng.random_range(-j..j) * g.h).clamp(h / 2.0, 1.0 - h / 2.0),
                            w,
                            h,
                        }
                    } else {
                        random_box(rng, classes, 0.05)
                    };
                    d.conf = if rng.random_bool(0.2) { 0.5 } else { rng.random_range(0.0..1.0) };
                    d
                })
                .collect();
            RefImage {
                id: format!("scene_{k}"),
                gts,
                dets,
            }
        })
        .collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Deterministic textured RGB image.
pub fn pattern_image(w: u32, h: u32, salt: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| {
        let v = x.wrapping_mul(7).wrapping_add(y.wrapping_mul(13)).wrapping_add(salt * 31);
        Rgb([(v % 251) as u8, ((x * y + salt) % 253) as u8, ((x ^ y ^ salt) % 256) as u8])
    })
}

pub fn label_line(class: usize, cx: f64, cy: f64, w: f64, h: f64) -> String {
    format!("{class} {cx:.6} {cy:.6} {w:.6} {h:.6}\n")
}

/// Writes `n` PNG images with 6-decimal labels under `root/{images,labels}`.
pub fn write_synthetic_dataset(root: &Path, n: usize, classes: usize, seed: u64) -> (PathBuf, PathBuf) {
    let (img_dir, lbl_dir) = (root.join("images"), root.join("labels"));
    fs::create_dir_all(&img_dir).unwrap();
    fs::create_dir_all(&lbl_dir).unwrap();
    let mut r = rng(seed);
    for i in 0..n {
        let id = format!("img_{i:03}");
        let (w, h) = (r.random_range(40..72), r.random_range(32..64));
        pattern_image(w, h, i as u32).save(img_dir.join(format!("{id}.png"))).unwrap();
        let mut text = String::new();
        for _ in 0..r.random_range(1..=4) {
            let b = random_box(&mut r, classes, 0.1);
            text.push_str(&label_line(b.class, b.cx, b.cy, b.w, b.h));
        }
        fs::write(lbl_dir.join(format!("{id}.txt")), text).unwrap();
    }
    (img_dir, lbl_dir)
}

pub fn write_taxonomy(path: &Path, names: &[&str]) {
    fs::write(path, names.iter().map(|n| format!("{n}\n")).collect::<String>()).unwrap();
}

/// Relative path -> bytes for every file under `root`, excluding `skip` names.
pub fn tree(root: &Path, skip: &[&str]) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            if skip.contains(&name.as_str()) {
                continue;
            }
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures")
}

pub fn read_ref_dir(labels: &Path, predictions: &Path) -> Vec<RefImage> {
    let parse = |text: &str, with_conf: bool| -> Vec<RefBox> {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let v: Vec<f64> = l.split_whitespace().map(|t| t.parse().unwrap()).collect();
                let (conf, rest) = if with_conf { (v[1], &v[2..]) } else { (0.0, &v[1..]) };
                RefBox {
                    class: v[0] as usize,
                    conf,
                    cx: rest[0],
                    cy: rest[1],
                    w: rest[2],
                    h: rest[3],
                }
            })
            .collect()
    };
    let mut images = Vec::new();
    let mut names: Vec<PathBuf> = fs::read_dir(labels).unwrap().map(|e| e.unwrap().path()).collect();
    names.sort();
    for p in names {
        let id = p.file_stem().unwrap().to_string_lossy().into_owned();
        let gts = parse(&fs::read_to_string(&p).unwrap(), false);
        let pred = predictions.join(format!("{id}.txt"));
        let dets = if pred.exists() {
            parse(&fs::read_to_string(&pred).unwrap(), true)
        } else {
            Vec::new()
        };
        images.push(RefImage { id, gts, dets });
    }
    images
}
