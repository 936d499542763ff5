//! Class-agnostic detection and segmentation metrics.
//!
//! AP follows the COCO recipe: detections sorted by confidence, each greedily
//! matched to the unmatched ground-truth box of highest IoU at or above the
//! threshold, and the precision envelope read at 101 evenly spaced recall
//! levels. Every metric averages over instances, never over classes.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::depth::LabelMap;
use crate::detection::{confidence_order, Detection, InstanceId};
use crate::error::{Error, Result};
use crate::io::AnnotationDoc;
use crate::raster::{InkMask, Mask};
use crate::rect::Rect;

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_thresholds() -> [f64; 10] {
    std::array::from_fn(|k| (50 + 5 * k) as f64 / 100.0)
}

pub fn box_iou(a: &Rect, b: &Rect) -> f64 {
    let inter = a.intersection(b).map_or(0, |r| r.area());
    let union = a.area() + b.area() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionMatch {
    pub det: InstanceId,
    /// Index into the ground-truth list.
    pub gt: Option<usize>,
    pub iou: f64,
    pub tp: bool,
}

/// Matching at one threshold, in descending-confidence order.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub threshold: f64,
    pub matches: Vec<DetectionMatch>,
    pub gt_count: usize,
}

impl MatchResult {
    pub fn matched_gt(&self) -> usize {
        self.matches.iter().filter(|m| m.tp).count()
    }
}

pub fn match_detections(dets: &[Detection], gts: &[Rect], iou_thr: f64) -> MatchResult {
    let mut taken = vec![false; gts.len()];
    let matches = confidence_order(dets)
        .into_iter()
        .map(|k| {
            let d = &dets[k];
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if taken[g] {
                    continue;
                }
                let iou = box_iou(&d.bbox, gt);
                if iou >= iou_thr && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
            if let Some((g, _)) = best {
                taken[g] = true;
            }
            DetectionMatch {
                det: d.id,
                gt: best.map(|b| b.0),
                iou: best.map_or(0.0, |b| b.1),
                tp: best.is_some(),
            }
        })
        .collect();
    MatchResult {
        threshold: iou_thr,
        matches,
        gt_count: gts.len(),
    }
}

/// 101-point interpolated AP from a matching.
pub fn interpolated_ap(m: &MatchResult) -> f64 {
    if m.gt_count == 0 {
        return if m.matches.is_empty() { 1.0 } else { 0.0 };
    }
    let n = m.matches.len();
    let mut precision = Vec::with_capacity(n);
    let mut recall = Vec::with_capacity(n);
    let mut tp = 0usize;
    for (k, mm) in m.matches.iter().enumerate() {
        tp += usize::from(mm.tp);
        precision.push(tp as f64 / (k + 1) as f64);
        recall.push(tp as f64 / m.gt_count as f64);
    }
    for k in (0..n.saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut sum = 0.0;
    let mut k = 0;
    for r in 0..=100 {
        let level = r as f64 / 100.0;
        while k < n && recall[k] < level {
            k += 1;
        }
        if k < n {
            sum += precision[k];
        }
    }
    sum / 101.0
}

pub fn average_precision(dets: &[Detection], gts: &[Rect], iou_thr: f64) -> f64 {
    interpolated_ap(&match_detections(dets, gts, iou_thr))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApSuite {
    /// Mean over 0.50:0.05:0.95.
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    /// Mean over the same thresholds of matched / total ground truth.
    pub ar: f64,
}

pub fn ap_suite(dets: &[Detection], gts: &[Rect]) -> ApSuite {
    let thresholds = coco_thresholds();
    let mut aps = [0.0; 10];
    let mut ars = [0.0; 10];
    for (k, &t) in thresholds.iter().enumerate() {
        let m = match_detections(dets, gts, t);
        aps[k] = interpolated_ap(&m);
        ars[k] = if gts.is_empty() {
            1.0
        } else {
            m.matched_gt() as f64 / gts.len() as f64
        };
    }
    ApSuite {
        ap: aps.iter().sum::<f64>() / 10.0,
        ap50: aps[0],
        ap75: aps[5],
        ar: ars.iter().sum::<f64>() / 10.0,
    }
}

/// Mean over ground-truth boxes of the best IoU any detection reaches.
pub fn mean_best_iou(dets: &[Detection], gts: &[Rect]) -> f64 {
    if gts.is_empty() {
        return if dets.is_empty() { 1.0 } else { 0.0 };
    }
    let total: f64 = gts
        .iter()
        .map(|g| dets.iter().map(|d| box_iou(&d.bbox, g)).fold(0.0, f64::max))
        .sum();
    total / gts.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegMetrics {
    pub pixel_acc: f64,
    pub seg_iou: f64,
    /// (ground-truth id, predicted id, IoU).
    pub matches: Vec<(InstanceId, InstanceId, f64)>,
}

/// Pixel accuracy and mean instance IoU over ink, with predicted instances
/// matched one-to-one to ground truth greedily by descending IoU.
///
/// Ties go to the smaller ground-truth id, then to the prediction whose
/// first pixel comes first in row-major order, so renaming predicted ids
/// never changes the result.
pub fn segmentation_metrics(pred: &LabelMap, gt: &LabelMap, ink: &InkMask) -> Result<SegMetrics> {
    if pred.dims() != gt.dims() {
        return Err(Error::DimensionMismatch {
            expected: gt.dims(),
            actual: pred.dims(),
        });
    }
    if ink.dims() != gt.dims() {
        return Err(Error::DimensionMismatch {
            expected: gt.dims(),
            actual: ink.dims(),
        });
    }
    let mut gt_area: HashMap<u32, usize> = HashMap::new();
    let mut pred_area: HashMap<u32, usize> = HashMap::new();
    let mut pred_first: HashMap<u32, usize> = HashMap::new();
    let mut inter: HashMap<(u32, u32), usize> = HashMap::new();
    let mut ink_count = 0usize;
    for (i, (&p, &g)) in pred.labels().iter().zip(gt.labels()).enumerate() {
        if !ink.get_index(i) {
            continue;
        }
        ink_count += 1;
        if g != 0 {
            *gt_area.entry(g).or_default() += 1;
        }
        if p != 0 {
            *pred_area.entry(p).or_default() += 1;
            pred_first.entry(p).or_insert(i);
        }
        if g != 0 && p != 0 {
            *inter.entry((g, p)).or_default() += 1;
        }
    }

    let mut pairs: Vec<(u32, u32, f64)> = inter
        .iter()
        .map(|(&(g, p), &n)| (g, p, n as f64 / (gt_area[&g] + pred_area[&p] - n) as f64))
        .collect();
    pairs.sort_by(|a, b| {
        b.2.total_cmp(&a.2)
            .then(a.0.cmp(&b.0))
            .then(pred_first[&a.1].cmp(&pred_first[&b.1]))
    });
    let mut gt_to_pred: HashMap<u32, (u32, f64)> = HashMap::new();
    let mut pred_used: HashMap<u32, u32> = HashMap::new();
    let mut matches = Vec::new();
    for (g, p, iou) in pairs {
        if gt_to_pred.contains_key(&g) || pred_used.contains_key(&p) {
            continue;
        }
        gt_to_pred.insert(g, (p, iou));
        pred_used.insert(p, g);
        matches.push((g, p, iou));
    }
    matches.sort_by_key(|m| m.0);

    let correct = pred
        .labels()
        .iter()
        .zip(gt.labels())
        .enumerate()
        .filter(|&(i, (&p, &g))| {
            ink.get_index(i)
                && if g == 0 {
                    p == 0
                } else {
                    p != 0 && pred_used.get(&p) == Some(&g)
                }
        })
        .count();
    let pixel_acc = if ink_count == 0 {
        1.0
    } else {
        correct as f64 / ink_count as f64
    };
    let seg_iou = if gt_area.is_empty() {
        if pred_area.is_empty() {
            1.0
        } else {
            0.0
        }
    } else {
        let mut ids: Vec<u32> = gt_area.keys().copied().collect();
        ids.sort_unstable();
        ids.iter()
            .map(|g| gt_to_pred.get(g).map_or(0.0, |m| m.1))
            .sum::<f64>()
            / ids.len() as f64
    };
    Ok(SegMetrics {
        pixel_acc,
        seg_iou,
        matches,
    })
}

/// Kendall's tau-b between two scorings of the same ids (ties allowed).
///
/// Knight's O(n log n) method: sort by the first score, then count the
/// swaps a merge sort needs to order the second. Fails when the id sets
/// differ or either side is constant.
pub fn kendall_tau(pred: &[(InstanceId, f64)], gt: &[(InstanceId, f64)]) -> Result<f64> {
    let gt_by_id: HashMap<InstanceId, f64> = gt.iter().copied().collect();
    if pred.len() != gt.len() || gt_by_id.len() != gt.len() {
        return Err(Error::IdSetMismatch);
    }
    let mut pairs = Vec::with_capacity(pred.len());
    for &(id, x) in pred {
        pairs.push((x, *gt_by_id.get(&id).ok_or(Error::IdSetMismatch)?));
    }
    let n = pairs.len() as u64;
    let n0 = n * n.saturating_sub(1) / 2;
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let tie_pairs = |run: u64| run * run.saturating_sub(1) / 2;
    let count_ties = |eq: &dyn Fn(usize, usize) -> bool| -> u64 {
        let mut total = 0;
        let mut run = 1u64;
        for k in 1..pairs.len() {
            if eq(k - 1, k) {
                run += 1;
            } else {
                total += tie_pairs(run);
                run = 1;
            }
        }
        total + tie_pairs(run)
    };
    let n1 = count_ties(&|a, b| pairs[a].0 == pairs[b].0);
    let n3 = count_ties(&|a, b| pairs[a].0 == pairs[b].0 && pairs[a].1 == pairs[b].1);

    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let swaps = merge_count(&mut ys);
    let mut n2 = 0;
    let mut run = 1u64;
    for k in 1..ys.len() {
        if ys[k - 1] == ys[k] {
            run += 1;
        } else {
            n2 += tie_pairs(run);
            run = 1;
        }
    }
    n2 += tie_pairs(run);

    let denom = ((n0 - n1) as f64 * (n0 - n2) as f64).sqrt();
    if denom == 0.0 {
        return Err(Error::InvalidArgument(
            "Kendall's tau is undefined for constant rankings".into(),
        ));
    }
    let numer = n0 as i64 - n1 as i64 - n2 as i64 + n3 as i64 - 2 * swaps as i64;
    Ok(numer as f64 / denom)
}

/// Sort ascending, returning the number of strict inversions.
fn merge_count(v: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid]) + merge_count(&mut v[mid..]);
    let mut merged = Vec::with_capacity(n);
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[i] <= v[j] {
            merged.push(v[i]);
            i += 1;
        } else {
            merged.push(v[j]);
            swaps += (mid - i) as u64;
            j += 1;
        }
    }
    merged.extend_from_slice(&v[i..mid]);
    merged.extend_from_slice(&v[j..n]);
    v.copy_from_slice(&merged);
    swaps
}

/// Tau between two orderings listed back to front.
pub fn kendall_tau_orders(pred_order: &[InstanceId], gt_order: &[InstanceId]) -> Result<f64> {
    let rank = |order: &[InstanceId]| {
        order
            .iter()
            .enumerate()
            .map(|(k, &id)| (id, k as f64))
            .collect::<Vec<_>>()
    };
    kendall_tau(&rank(pred_order), &rank(gt_order))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub iou_mean: f64,
    pub ar: f64,
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub pixel_acc: f64,
    pub seg_iou: f64,
    /// Undefined with fewer than two matched instances or constant depths.
    pub kendall_tau: Option<f64>,
}

fn detections_of(doc: &AnnotationDoc) -> Vec<Detection> {
    doc.instances
        .iter()
        .map(|i| Detection {
            id: i.id,
            bbox: i.bbox,
            confidence: i.confidence.unwrap_or(1.0),
        })
        .collect()
}

/// Score one predicted scene against its ground truth. The ink domain is
/// the union of the ground-truth masks.
pub fn evaluate_scene(pred: &AnnotationDoc, gt: &AnnotationDoc) -> Result<MetricsReport> {
    if (pred.width, pred.height) != (gt.width, gt.height) {
        return Err(Error::DimensionMismatch {
            expected: (gt.width, gt.height),
            actual: (pred.width, pred.height),
        });
    }
    let dets = detections_of(pred);
    let gt_boxes: Vec<Rect> = gt.instances.iter().map(|i| i.bbox).collect();
    let suite = ap_suite(&dets, &gt_boxes);

    let gt_masks = gt.masks()?;
    let mut ink = Mask::new(gt.width, gt.height);
    for m in &gt_masks {
        ink = ink.or(m)?;
    }
    let seg = segmentation_metrics(&pred.label_map()?, &gt.label_map()?, &ink)?;

    let depth_of = |doc: &AnnotationDoc, id: InstanceId| {
        doc.instances
            .iter()
            .find(|i| i.id == id)
            .and_then(|i| i.depth)
    };
    let (mut p, mut g) = (Vec::new(), Vec::new());
    for &(gid, pid, _) in &seg.matches {
        if let (Some(pd), Some(gd)) = (depth_of(pred, pid), depth_of(gt, gid)) {
            p.push((gid, pd));
            g.push((gid, gd));
        }
    }
    let tau = if p.len() >= 2 {
        kendall_tau(&p, &g).ok()
    } else {
        None
    };

    Ok(MetricsReport {
        iou_mean: mean_best_iou(&dets, &gt_boxes),
        ar: suite.ar,
        ap: suite.ap,
        ap50: suite.ap50,
        ap75: suite.ap75,
        pixel_acc: seg.pixel_acc,
        seg_iou: seg.seg_iou,
        kendall_tau: tau,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    fn of(values: &[f64]) -> Option<MeanStd> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(MeanStd {
            mean,
            std: var.sqrt(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub name: String,
    pub scenes: usize,
    pub iou_mean: MeanStd,
    pub ar: MeanStd,
    pub ap: MeanStd,
    pub ap50: MeanStd,
    pub ap75: MeanStd,
    pub pixel_acc: MeanStd,
    pub seg_iou: MeanStd,
    pub kendall_tau: Option<MeanStd>,
}

pub fn summarize(name: &str, reports: &[MetricsReport]) -> Option<DatasetSummary> {
    let col =
        |f: fn(&MetricsReport) -> f64| MeanStd::of(&reports.iter().map(f).collect::<Vec<_>>());
    let taus: Vec<f64> = reports.iter().filter_map(|r| r.kendall_tau).collect();
    Some(DatasetSummary {
        name: name.to_owned(),
        scenes: reports.len(),
        iou_mean: col(|r| r.iou_mean)?,
        ar: col(|r| r.ar)?,
        ap: col(|r| r.ap)?,
        ap50: col(|r| r.ap50)?,
        ap75: col(|r| r.ap75)?,
        pixel_acc: col(|r| r.pixel_acc)?,
        seg_iou: col(|r| r.seg_iou)?,
        kendall_tau: MeanStd::of(&taus),
    })
}

/// Plain-text table, one row per dataset.
pub fn format_table(rows: &[DatasetSummary]) -> String {
    let cell = |m: &MeanStd| format!("{:.2}±{:.2}", m.mean, m.std);
    let mut out = format!(
        "{:<16} {:>6} {:>11} {:>11} {:>11} {:>11} {:>11} {:>11} {:>11} {:>11}\n",
        "dataset", "scenes", "IoU", "AR", "AP", "AP@50", "AP@75", "Acc", "SegIoU", "Tau"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<16} {:>6} {:>11} {:>11} {:>11} {:>11} {:>11} {:>11} {:>11} {:>11}\n",
            r.name,
            r.scenes,
            cell(&r.iou_mean),
            cell(&r.ar),
            cell(&r.ap),
            cell(&r.ap50),
            cell(&r.ap75),
            cell(&r.pixel_acc),
            cell(&r.seg_iou),
            r.kendall_tau.as_ref().map_or("-".to_owned(), cell),
        ));
    }
    out
}
