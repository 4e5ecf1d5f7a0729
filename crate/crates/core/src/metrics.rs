//! Region (mIoU) and contour (boundary F-score) accuracy over a dataset of
//! predicted / ground-truth mask pairs.
//!
//! Both metrics accumulate integer counts over the whole dataset before
//! forming per-class ratios, then average over the classes that occur.

use std::io::Write;

use crate::error::{Error, Result};
use crate::raster::{Mask, VOID};

/// A prediction and its ground truth. Ground truth may contain [`VOID`].
#[derive(Clone, Debug, PartialEq)]
pub struct MaskPair {
    pub pred: Mask,
    pub gt: Mask,
}

impl MaskPair {
    pub fn new(pred: Mask, gt: Mask) -> Result<Self> {
        if (pred.width(), pred.height()) != (gt.width(), gt.height()) {
            return Err(Error::Metric(format!(
                "prediction is {}x{} but ground truth is {}x{}",
                pred.width(),
                pred.height(),
                gt.width(),
                gt.height()
            )));
        }
        Ok(Self { pred, gt })
    }

    fn check(&self, classes: usize) -> Result<()> {
        if let Some(&p) = self.pred.labels().iter().find(|&&p| p as usize >= classes) {
            return Err(Error::Metric(format!(
                "prediction label {p} outside 0..{classes}"
            )));
        }
        if let Some(&g) = self
            .gt
            .labels()
            .iter()
            .find(|&&g| g != VOID && g as usize >= classes)
        {
            return Err(Error::Metric(format!(
                "ground-truth label {g} outside 0..{classes}"
            )));
        }
        Ok(())
    }
}

/// Per-class scores; `None` marks a class absent from the whole dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassScores {
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
}

impl ClassScores {
    fn from_per_class(per_class: Vec<Option<f64>>) -> Self {
        let present: Vec<f64> = per_class.iter().flatten().copied().collect();
        let mean = if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        };
        Self { per_class, mean }
    }
}

fn check_dataset(pairs: &[MaskPair], classes: usize) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::Metric("dataset is empty".into()));
    }
    if classes == 0 || classes > VOID as usize {
        return Err(Error::Metric(format!("unsupported class count {classes}")));
    }
    pairs.iter().try_for_each(|p| p.check(classes))
}

/// Dataset-level intersection over union per class. Void pixels count for
/// neither set.
pub fn miou(pairs: &[MaskPair], classes: usize) -> Result<ClassScores> {
    check_dataset(pairs, classes)?;
    let mut inter = vec![0u64; classes];
    let mut union = vec![0u64; classes];
    for pair in pairs {
        for (&p, &g) in pair.pred.labels().iter().zip(pair.gt.labels()) {
            if g == VOID {
                continue;
            }
            if p == g {
                inter[p as usize] += 1;
                union[p as usize] += 1;
            } else {
                union[p as usize] += 1;
                union[g as usize] += 1;
            }
        }
    }
    let per_class = inter
        .iter()
        .zip(&union)
        .map(|(&i, &u)| (u > 0).then(|| i as f64 / u as f64))
        .collect();
    Ok(ClassScores::from_per_class(per_class))
}

/// Pixels of `inside` with a 4-neighbour outside the region or lying on the
/// image border.
pub fn boundary(inside: &[bool], width: usize, height: usize) -> Vec<bool> {
    let mut out = vec![false; inside.len()];
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            if !inside[i] {
                continue;
            }
            out[i] = x == 0
                || y == 0
                || x + 1 == width
                || y + 1 == height
                || !inside[i - 1]
                || !inside[i + 1]
                || !inside[i - width]
                || !inside[i + width];
        }
    }
    out
}

/// Dilation by a `(2r+1)×(2r+1)` square (Chebyshev disk of radius `r`).
pub fn dilate(bits: &[bool], width: usize, height: usize, radius: usize) -> Vec<bool> {
    if radius == 0 {
        return bits.to_vec();
    }
    let mut rows = vec![false; bits.len()];
    for y in 0..height {
        for x in 0..width {
            let lo = x.saturating_sub(radius);
            let hi = (x + radius).min(width - 1);
            rows[y * width + x] = (lo..=hi).any(|xx| bits[y * width + xx]);
        }
    }
    let mut out = vec![false; bits.len()];
    for y in 0..height {
        let lo = y.saturating_sub(radius);
        let hi = (y + radius).min(height - 1);
        for x in 0..width {
            out[y * width + x] = (lo..=hi).any(|yy| rows[yy * width + x]);
        }
    }
    out
}

/// Matched and total boundary pixel counts for one class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BoundaryCounts {
    pub pred_matched: u64,
    pub pred_total: u64,
    pub gt_matched: u64,
    pub gt_total: u64,
}

impl BoundaryCounts {
    fn merge(&mut self, o: &BoundaryCounts) {
        self.pred_matched += o.pred_matched;
        self.pred_total += o.pred_total;
        self.gt_matched += o.gt_matched;
        self.gt_total += o.gt_total;
    }

    /// `None` when neither side has any boundary pixel.
    pub fn fscore(&self) -> Option<f64> {
        if self.pred_total == 0 && self.gt_total == 0 {
            return None;
        }
        let precision = if self.pred_total == 0 {
            0.0
        } else {
            self.pred_matched as f64 / self.pred_total as f64
        };
        let recall = if self.gt_total == 0 {
            0.0
        } else {
            self.gt_matched as f64 / self.gt_total as f64
        };
        Some(if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        })
    }
}

/// Boundary match counts of every class for one mask pair. Void ground
/// truth is treated as background.
pub fn boundary_counts(pair: &MaskPair, classes: usize, tol: usize) -> Vec<BoundaryCounts> {
    let (w, h) = (pair.pred.width(), pair.pred.height());
    let gt: Vec<u8> = pair
        .gt
        .labels()
        .iter()
        .map(|&g| if g == VOID { 0 } else { g })
        .collect();
    (0..classes)
        .map(|k| {
            let k = k as u8;
            let pred_in: Vec<bool> = pair.pred.labels().iter().map(|&p| p == k).collect();
            let gt_in: Vec<bool> = gt.iter().map(|&g| g == k).collect();
            let pb = boundary(&pred_in, w, h);
            let gb = boundary(&gt_in, w, h);
            let pd = dilate(&pb, w, h, tol);
            let gd = dilate(&gb, w, h, tol);
            let count = |v: &[bool]| v.iter().filter(|&&b| b).count() as u64;
            let both =
                |a: &[bool], b: &[bool]| a.iter().zip(b).filter(|(x, y)| **x && **y).count() as u64;
            BoundaryCounts {
                pred_matched: both(&pb, &gd),
                pred_total: count(&pb),
                gt_matched: both(&gb, &pd),
                gt_total: count(&gb),
            }
        })
        .collect()
}

/// Dataset-level contour F-score per class with matching tolerance `tol`
/// pixels (Chebyshev).
pub fn boundary_fscore(pairs: &[MaskPair], classes: usize, tol: usize) -> Result<ClassScores> {
    check_dataset(pairs, classes)?;
    let mut totals = vec![BoundaryCounts::default(); classes];
    for pair in pairs {
        for (t, c) in totals.iter_mut().zip(boundary_counts(pair, classes, tol)) {
            t.merge(&c);
        }
    }
    Ok(ClassScores::from_per_class(
        totals.iter().map(BoundaryCounts::fscore).collect(),
    ))
}

/// 1% of the image diagonal, rounded up.
pub fn default_tolerance(width: usize, height: usize) -> usize {
    let diag = ((width * width + height * height) as f64).sqrt();
    (0.01 * diag).ceil() as usize
}

/// Region and contour scores of one evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub classes: usize,
    pub tolerance: usize,
    pub iou: Vec<Option<f64>>,
    pub mean_iou: f64,
    pub fscore: Vec<Option<f64>>,
    pub mean_fscore: f64,
}

impl EvalReport {
    pub fn compute(pairs: &[MaskPair], classes: usize, tolerance: usize) -> Result<Self> {
        let iou = miou(pairs, classes)?;
        let f = boundary_fscore(pairs, classes, tolerance)?;
        Ok(Self {
            classes,
            tolerance,
            iou: iou.per_class,
            mean_iou: iou.mean,
            fscore: f.per_class,
            mean_fscore: f.mean,
        })
    }

    /// `class_id,iou,fscore` rows followed by a `mean` row. Absent classes
    /// leave their cell empty.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(["class_id", "iou", "fscore"])?;
        for k in 0..self.classes {
            w.write_record([k.to_string(), fmt_opt(self.iou[k]), fmt_opt(self.fscore[k])])?;
        }
        w.write_record([
            "mean".to_string(),
            fmt_score(self.mean_iou),
            fmt_score(self.mean_fscore),
        ])?;
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn fmt_score(v: f64) -> String {
    format!("{v:.6}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_score).unwrap_or_default()
}

/// Differences `a − b`, per class and for the means.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportDelta {
    pub iou: Vec<Option<f64>>,
    pub mean_iou: f64,
    pub fscore: Vec<Option<f64>>,
    pub mean_fscore: f64,
}

impl ReportDelta {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(["class_id", "delta_iou", "delta_fscore"])?;
        for k in 0..self.iou.len() {
            w.write_record([k.to_string(), fmt_opt(self.iou[k]), fmt_opt(self.fscore[k])])?;
        }
        w.write_record([
            "mean".to_string(),
            fmt_score(self.mean_iou),
            fmt_score(self.mean_fscore),
        ])?;
        w.flush()?;
        Ok(())
    }
}

/// Per-class and mean differences between two reports of the same setup.
pub fn compare_reports(a: &EvalReport, b: &EvalReport) -> Result<ReportDelta> {
    if a.classes != b.classes || a.tolerance != b.tolerance {
        return Err(Error::Metric(format!(
            "reports differ in setup: {} classes / tol {} vs {} classes / tol {}",
            a.classes, a.tolerance, b.classes, b.tolerance
        )));
    }
    let diff = |x: &[Option<f64>], y: &[Option<f64>]| -> Vec<Option<f64>> {
        x.iter()
            .zip(y)
            .map(|(p, q)| match (p, q) {
                (Some(p), Some(q)) => Some(p - q),
                _ => None,
            })
            .collect()
    };
    Ok(ReportDelta {
        iou: diff(&a.iou, &b.iou),
        mean_iou: a.mean_iou - b.mean_iou,
        fscore: diff(&a.fscore, &b.fscore),
        mean_fscore: a.mean_fscore - b.mean_fscore,
    })
}
