//! Candidate mask cleanup and mask-aware suppression of redundant detections.
//!
//! Two detections whose boxes overlap are scored by the IoU of their masks
//! restricted to ink pixels. When that score exceeds the threshold the
//! lower-confidence detection is dropped. Suppression is greedy in
//! descending confidence, ties going to the smaller id, and a detection is
//! only ever compared against detections that already survived.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{fill_holes, morphological_close, InkMask, InstanceMask};
use crate::rect::Rect;

pub type InstanceId = u32;

pub const DEFAULT_OVERLAP_THRESHOLD: f64 = 0.5;
pub const DEFAULT_CLEANUP_RADIUS: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub id: InstanceId,
    pub bbox: Rect,
    pub confidence: f64,
}

/// Detections paired one-to-one with their candidate masks.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    width: usize,
    height: usize,
    detections: Vec<Detection>,
    masks: Vec<InstanceMask>,
}

impl CandidateSet {
    pub fn new(
        width: usize,
        height: usize,
        detections: Vec<Detection>,
        masks: Vec<InstanceMask>,
    ) -> Result<Self> {
        if detections.len() != masks.len() {
            return Err(Error::InvalidArgument(format!(
                "{} detections but {} masks",
                detections.len(),
                masks.len()
            )));
        }
        let mut seen = HashSet::new();
        for (d, m) in detections.iter().zip(&masks) {
            if !seen.insert(d.id) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate detection id {}",
                    d.id
                )));
            }
            if m.dims() != (width, height) {
                return Err(Error::DimensionMismatch {
                    expected: (width, height),
                    actual: m.dims(),
                });
            }
            if d.bbox.is_empty() {
                return Err(Error::DegenerateBox {
                    w: d.bbox.w,
                    h: d.bbox.h,
                });
            }
            if !d.bbox.within(width, height) {
                return Err(Error::InvalidArgument(format!(
                    "box of detection {} leaves the canvas",
                    d.id
                )));
            }
            if !(0.0..=1.0).contains(&d.confidence) {
                return Err(Error::InvalidArgument(format!(
                    "confidence {} of detection {} outside [0, 1]",
                    d.confidence, d.id
                )));
            }
        }
        Ok(CandidateSet {
            width,
            height,
            detections,
            masks,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        CandidateSet {
            width,
            height,
            detections: Vec::new(),
            masks: Vec::new(),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }

    pub fn detections(&self) -> &[Detection] {
        &self.detections
    }

    pub fn masks(&self) -> &[InstanceMask] {
        &self.masks
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Detection, &InstanceMask)> {
        self.detections.iter().zip(&self.masks)
    }

    pub fn index_of(&self, id: InstanceId) -> Option<usize> {
        self.detections.iter().position(|d| d.id == id)
    }

    pub fn with_masks(&self, masks: Vec<InstanceMask>) -> Result<Self> {
        CandidateSet::new(self.width, self.height, self.detections.clone(), masks)
    }

    fn select(&self, keep: &[bool]) -> CandidateSet {
        let pick = |i: &usize| keep[*i];
        let idx: Vec<usize> = (0..self.len()).filter(pick).collect();
        CandidateSet {
            width: self.width,
            height: self.height,
            detections: idx.iter().map(|&i| self.detections[i].clone()).collect(),
            masks: idx.iter().map(|&i| self.masks[i].clone()).collect(),
        }
    }
}

/// Closing followed by hole filling.
pub fn clean_mask(mask: &InstanceMask, radius: usize) -> InstanceMask {
    fill_holes(&morphological_close(mask, radius))
}

fn ink_iou(a: &InstanceMask, b: &InstanceMask, ink: &InkMask) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for ((&x, &y), &s) in a.bits().iter().zip(b.bits()).zip(ink.bits()) {
        if s {
            inter += usize::from(x && y);
            union += usize::from(x || y);
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// IoU of masks `i` and `j` after restricting both to ink pixels.
pub fn overlap_score(i: usize, j: usize, set: &CandidateSet, ink: &InkMask) -> Result<f64> {
    if i == j {
        return Err(Error::InvalidArgument(
            "overlap score needs two distinct detections".into(),
        ));
    }
    let (a, b) = match (set.masks.get(i), set.masks.get(j)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::InvalidArgument(format!(
                "index out of range: ({i}, {j})"
            )))
        }
    };
    a.ensure_same_dims(ink)?;
    Ok(ink_iou(a, b, ink))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suppression {
    pub id: InstanceId,
    pub by: InstanceId,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct FilterOutcome {
    pub kept: CandidateSet,
    /// In suppression order.
    pub suppressed: Vec<Suppression>,
}

/// Descending confidence, then ascending id.
pub(crate) fn confidence_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .confidence
            .total_cmp(&dets[a].confidence)
            .then(dets[a].id.cmp(&dets[b].id))
    });
    order
}

pub fn filter_detections(
    set: &CandidateSet,
    ink: &InkMask,
    threshold: f64,
) -> Result<FilterOutcome> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "overlap threshold {threshold} outside (0, 1]"
        )));
    }
    if ink.dims() != set.dims() {
        return Err(Error::DimensionMismatch {
            expected: set.dims(),
            actual: ink.dims(),
        });
    }
    let n = set.len();
    let dets = &set.detections;

    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .filter(|&(i, j)| dets[i].bbox.intersects(&dets[j].bbox))
        .collect();
    let scored: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| ink_iou(&set.masks[i], &set.masks[j], ink))
        .collect();
    let mut scores = vec![None; n * n];
    for (&(i, j), &s) in pairs.iter().zip(&scored) {
        scores[i * n + j] = Some(s);
        scores[j * n + i] = Some(s);
    }

    let mut keep = vec![false; n];
    let mut survivors: Vec<usize> = Vec::new();
    let mut suppressed = Vec::new();
    for i in confidence_order(dets) {
        let hit = survivors
            .iter()
            .find_map(|&k| scores[i * n + k].filter(|&s| s > threshold).map(|s| (k, s)));
        match hit {
            Some((k, score)) => suppressed.push(Suppression {
                id: dets[i].id,
                by: dets[k].id,
                score,
            }),
            None => {
                keep[i] = true;
                survivors.push(i);
            }
        }
    }
    Ok(FilterOutcome {
        kept: set.select(&keep),
        suppressed,
    })
}
