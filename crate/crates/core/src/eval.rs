//! Detection counting rules, precision/recall/F1, Jaccard/Dice and
//! synthetic-count sweep reports over externally produced model outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::{Add, AddAssign};
use std::path::Path;

use image::GrayImage;
use rayon::prelude::*;

use crate::data::{png_files, read_mask, Mask};
use crate::error::{Error, Result};

pub const DETECTION_HEADER: [&str; 6] = ["frame_id", "x1", "y1", "x2", "y2", "score"];
/// Rows within this many F1 points of the best row count as saturated.
pub const SATURATION_MARGIN: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub frame_id: String,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub score: f64,
}

impl Detection {
    pub fn new(frame_id: impl Into<String>, x1: f64, y1: f64, x2: f64, y2: f64, score: f64) -> Result<Self> {
        let d = Detection {
            frame_id: frame_id.into(),
            x1,
            y1,
            x2,
            y2,
            score,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite());
        if !finite || self.x1 >= self.x2 || self.y1 >= self.y2 {
            return Err(Error::Data(format!(
                "malformed box for frame {}: ({}, {}, {}, {})",
                self.frame_id, self.x1, self.y1, self.x2, self.y2
            )));
        }
        Ok(())
    }

    /// Pixel containing the box center.
    pub fn center_pixel(&self) -> (f64, f64) {
        (((self.x1 + self.x2) / 2.0).floor(), ((self.y1 + self.y2) / 2.0).floor())
    }

    fn hits(&self, mask: &Mask) -> bool {
        let (cx, cy) = self.center_pixel();
        cx >= 0.0
            && cy >= 0.0
            && cx < mask.width() as f64
            && cy < mask.height() as f64
            && mask.get(cx as u32, cy as u32)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MetricCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl MetricCounts {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        MetricCounts { tp, tn, fp, fn_ }
    }
}

impl Add for MetricCounts {
    type Output = MetricCounts;
    fn add(self, o: MetricCounts) -> MetricCounts {
        MetricCounts {
            tp: self.tp + o.tp,
            tn: self.tn + o.tn,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl AddAssign for MetricCounts {
    fn add_assign(&mut self, o: MetricCounts) {
        *self = *self + o;
    }
}

impl std::iter::Sum for MetricCounts {
    fn sum<I: Iterator<Item = MetricCounts>>(iter: I) -> Self {
        iter.fold(MetricCounts::default(), Add::add)
    }
}

/// Counts one frame. A detection hits a polyp when its box center pixel lies
/// in that polyp's mask; the first hit on a polyp is its TP and later hits are
/// ignored. Detections hitting nothing are FPs, unhit polyps FNs, and a frame
/// with neither polyps nor detections is one TN.
pub fn match_frame(dets: &[Detection], gt_masks: &[Mask]) -> Result<MetricCounts> {
    for d in dets {
        d.validate()?;
    }
    if gt_masks.is_empty() {
        return Ok(if dets.is_empty() {
            MetricCounts::new(0, 0, 0, 1)
        } else {
            MetricCounts::new(0, dets.len() as u64, 0, 0)
        });
    }
    // highest score claims a polyp first
    let mut order: Vec<&Detection> = dets.iter().collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut matched = vec![false; gt_masks.len()];
    let mut c = MetricCounts::default();
    for d in order {
        let hit: Vec<usize> = (0..gt_masks.len()).filter(|&i| d.hits(&gt_masks[i])).collect();
        if hit.is_empty() {
            c.fp += 1;
        } else if let Some(&i) = hit.iter().find(|&&i| !matched[i]) {
            matched[i] = true;
            c.tp += 1;
        }
    }
    c.fn_ = matched.iter().filter(|m| !**m).count() as u64;
    Ok(c)
}

/// Percentages; `None` where the denominator is zero.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Metrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

pub fn prf1(c: &MetricCounts) -> Metrics {
    let ratio = |num: u64, den: u64| (den > 0).then(|| 100.0 * num as f64 / den as f64);
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };
    Metrics { precision, recall, f1 }
}

/// Predicted raster with values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMap {
    width: u32,
    height: u32,
    values: Vec<f64>,
}

impl ScoreMap {
    pub fn new(width: u32, height: u32, values: Vec<f64>) -> Result<Self> {
        if values.len() != (width * height) as usize {
            return Err(Error::shape("ScoreMap::new", format!("{} values for {width}x{height}", values.len())));
        }
        Ok(ScoreMap { width, height, values })
    }

    /// 8-bit intensities mapped to `v / 255`.
    pub fn from_gray(img: &GrayImage) -> Self {
        ScoreMap {
            width: img.width(),
            height: img.height(),
            values: img.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
        }
    }

    pub fn from_mask(m: &Mask) -> Self {
        ScoreMap {
            width: m.width(),
            height: m.height(),
            values: m.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn binarize(&self, threshold: f64) -> Mask {
        let bits = self.values.iter().map(|&v| v >= threshold).collect();
        Mask::from_bits(self.width, self.height, bits).expect("extent matches by construction")
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegScores {
    pub jaccard: f64,
    pub dice: f64,
}

/// Binarizes `pred` at `threshold` (inclusive) and scores it against `gt`.
/// Two empty masks score 1.
pub fn jaccard_dice(pred: &ScoreMap, gt: &Mask, threshold: f64) -> Result<SegScores> {
    if pred.dimensions() != gt.dimensions() {
        return Err(Error::shape(
            "jaccard_dice",
            format!("prediction {:?} vs ground truth {:?}", pred.dimensions(), gt.dimensions()),
        ));
    }
    let a = pred.binarize(threshold);
    let inter = a.intersection_count(gt)?;
    let union = a.union_count(gt)?;
    if union == 0 {
        return Ok(SegScores { jaccard: 1.0, dice: 1.0 });
    }
    Ok(SegScores {
        jaccard: inter as f64 / union as f64,
        dice: 2.0 * inter as f64 / (a.count() + gt.count()) as f64,
    })
}

/// Unweighted mean over images; `None` for no images.
pub fn mean_seg_scores(scores: &[SegScores]) -> Option<SegScores> {
    if scores.is_empty() {
        return None;
    }
    let n = scores.len() as f64;
    Some(SegScores {
        jaccard: scores.iter().map(|s| s.jaccard).sum::<f64>() / n,
        dice: scores.iter().map(|s| s.dice).sum::<f64>() / n,
    })
}

/// 8-connected components, in raster order of their first pixel.
pub fn connected_components(mask: &Mask) -> Vec<Mask> {
    let (w, h) = mask.dimensions();
    let mut seen = Mask::new(w, h);
    let mut out = Vec::new();
    for (x, y) in mask.iter_set() {
        if seen.get(x, y) {
            continue;
        }
        let mut comp = Mask::new(w, h);
        let mut stack = vec![(x, y)];
        seen.set(x, y, true);
        while let Some((px, py)) = stack.pop() {
            comp.set(px, py, true);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny) = (px as i64 + dx, py as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let (nx, ny) = (nx as u32, ny as u32);
                    if mask.get(nx, ny) && !seen.get(nx, ny) {
                        seen.set(nx, ny, true);
                        stack.push((nx, ny));
                    }
                }
            }
        }
        out.push(comp);
    }
    out
}

pub fn read_detections(path: &Path) -> Result<Vec<Detection>> {
    let mut r = csv::Reader::from_path(path)?;
    check_header(r.headers()?, &DETECTION_HEADER, path)?;
    let mut out = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row?;
        let num = |k: usize| -> Result<f64> {
            row[k].trim().parse().map_err(|_| {
                Error::Data(format!("{}: row {}: bad {} {:?}", path.display(), i + 1, DETECTION_HEADER[k], &row[k]))
            })
        };
        out.push(Detection::new(row[0].trim(), num(1)?, num(2)?, num(3)?, num(4)?, num(5)?)?);
    }
    Ok(out)
}

fn check_header(found: &csv::StringRecord, want: &[&str], path: &Path) -> Result<()> {
    if found.iter().map(str::trim).ne(want.iter().copied()) {
        return Err(Error::Data(format!(
            "{}: expected columns {}, found {}",
            path.display(),
            want.join(","),
            found.iter().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(())
}

/// Per-frame counts for a ground-truth directory of `<frame_id>.png` masks;
/// each connected component of a mask is one polyp. Detections on frames
/// without a mask file are rejected.
pub fn evaluate_detections(dets: &[Detection], gt_dir: &Path) -> Result<BTreeMap<String, MetricCounts>> {
    let mut frames: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
    for p in png_files(gt_dir)? {
        if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
            frames.insert(stem.to_string(), Vec::new());
        }
    }
    for d in dets {
        frames
            .get_mut(&d.frame_id)
            .ok_or_else(|| Error::Data(format!("detection for frame {:?} has no mask in {}", d.frame_id, gt_dir.display())))?
            .push(d.clone());
    }
    frames
        .into_par_iter()
        .map(|(id, ds)| {
            let gt = read_mask(&gt_dir.join(format!("{id}.png")))?;
            let c = match_frame(&ds, &connected_components(&gt))?;
            Ok((id, c))
        })
        .collect()
}

/// Scores every `<name>.png` in `pred_dir` against the same name in `gt_dir`.
pub fn evaluate_segmentation(pred_dir: &Path, gt_dir: &Path, threshold: f64) -> Result<Vec<(String, SegScores)>> {
    let names: Vec<String> = png_files(pred_dir)?
        .iter()
        .filter_map(|p| p.file_name().and_then(|s| s.to_str()).map(String::from))
        .collect();
    names
        .into_par_iter()
        .map(|n| {
            let pp = pred_dir.join(&n);
            let gp = gt_dir.join(&n);
            if !gp.exists() {
                return Err(Error::Data(format!("no ground truth for {n} in {}", gt_dir.display())));
            }
            let pred = image::open(&pp)
                .map_err(|source| Error::Image { path: pp, source })?
                .to_luma8();
            let s = jaccard_dice(&ScoreMap::from_gray(&pred), &read_mask(&gp)?, threshold)?;
            Ok((n, s))
        })
        .collect()
}

/// Reads `label,tp,fp,fn,tn` rows of already matched counts.
pub fn read_counts(path: &Path) -> Result<Vec<(String, MetricCounts)>> {
    let mut r = csv::Reader::from_path(path)?;
    check_header(r.headers()?, &["label", "tp", "fp", "fn", "tn"], path)?;
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        let n = |k: usize| -> Result<u64> {
            row[k]
                .trim()
                .parse()
                .map_err(|_| Error::Data(format!("{}: bad count {:?}", path.display(), &row[k])))
        };
        out.push((row[0].trim().to_string(), MetricCounts::new(n(1)?, n(2)?, n(3)?, n(4)?)));
    }
    Ok(out)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.2}"))
}

/// Aligned plain-text table; numeric-looking cells are right-aligned.
pub fn format_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, &w)| {
                if c.parse::<f64>().is_ok() {
                    format!("{c:>w$}")
                } else {
                    format!("{c:<w$}")
                }
            })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(headers.to_vec(), &mut out);
    let _ = writeln!(out, "{}", widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().join("  "));
    for r in rows {
        line(r.iter().map(String::as_str).collect(), &mut out);
    }
    out
}

/// Table of counts and metrics, one row per label.
pub fn detection_report(rows: &[(String, MetricCounts)]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(label, c)| {
            let m = prf1(c);
            vec![
                label.clone(),
                c.tp.to_string(),
                c.fp.to_string(),
                c.fn_.to_string(),
                c.tn.to_string(),
                fmt_opt(m.precision),
                fmt_opt(m.recall),
                fmt_opt(m.f1),
            ]
        })
        .collect();
    format_table(&["label", "tp", "fp", "fn", "tn", "precision", "recall", "f1"], &body)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub n_synthetic: u64,
    pub metrics: Metrics,
}

impl SweepRow {
    pub fn from_counts(n_synthetic: u64, c: &MetricCounts) -> Self {
        SweepRow {
            n_synthetic,
            metrics: prf1(c),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    /// Sorted by `n_synthetic`.
    pub rows: Vec<SweepRow>,
    /// Index of the first row whose F1 is within [`SATURATION_MARGIN`] of the best.
    pub saturation: Option<usize>,
}

pub fn sweep_report(rows: &[SweepRow]) -> Result<SweepReport> {
    let mut rows = rows.to_vec();
    rows.sort_by_key(|r| r.n_synthetic);
    if let Some(w) = rows.windows(2).find(|w| w[0].n_synthetic == w[1].n_synthetic) {
        return Err(Error::Data(format!("duplicate n_synthetic {}", w[0].n_synthetic)));
    }
    let best = rows.iter().filter_map(|r| r.metrics.f1).reduce(f64::max);
    let saturation = best.and_then(|b| {
        rows.iter()
            .position(|r| r.metrics.f1.is_some_and(|f| f >= b - SATURATION_MARGIN))
    });
    Ok(SweepReport { rows, saturation })
}

impl SweepReport {
    fn cells(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                vec![
                    r.n_synthetic.to_string(),
                    fmt_opt(r.metrics.recall),
                    fmt_opt(r.metrics.precision),
                    fmt_opt(r.metrics.f1),
                    if self.saturation == Some(i) { "yes" } else { "" }.to_string(),
                ]
            })
            .collect()
    }

    pub const COLUMNS: [&'static str; 5] = ["n_synthetic", "recall", "precision", "f1", "saturation"];

    pub fn to_table(&self) -> String {
        format_table(&Self::COLUMNS, &self.cells())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(Self::COLUMNS)?;
        for c in self.cells() {
            w.write_record(c)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(format!("csv buffer: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Reads sweep rows as `n_synthetic,tp,fp,fn,tn` or
/// `n_synthetic,precision,recall,f1`.
pub fn read_sweep(path: &Path) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let counts = header == ["n_synthetic", "tp", "fp", "fn", "tn"];
    if !counts && header != ["n_synthetic", "precision", "recall", "f1"] {
        return Err(Error::Data(format!(
            "{}: expected n_synthetic,tp,fp,fn,tn or n_synthetic,precision,recall,f1",
            path.display()
        )));
    }
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        let bad = |k: usize| Error::Data(format!("{}: bad {} {:?}", path.display(), header[k], &row[k]));
        let n: u64 = row[0].trim().parse().map_err(|_| bad(0))?;
        if counts {
            let c: Vec<u64> = (1..5)
                .map(|k| row[k].trim().parse().map_err(|_| bad(k)))
                .collect::<Result<_>>()?;
            out.push(SweepRow::from_counts(n, &MetricCounts::new(c[0], c[1], c[2], c[3])));
        } else {
            let v = |k: usize| -> Result<Option<f64>> {
                match row[k].trim() {
                    "" | "undefined" => Ok(None),
                    s => s.parse().map(Some).map_err(|_| bad(k)),
                }
            };
            out.push(SweepRow {
                n_synthetic: n,
                metrics: Metrics {
                    precision: v(1)?,
                    recall: v(2)?,
                    f1: v(3)?,
                },
            });
        }
    }
    Ok(out)
}
