//! Depth-guided resolution of overlapping masks and watershed completion.
//!
//! The depth map is sampled at evenly strided ink pixels. Each instance gets
//! the modal quantized depth of the samples inside its mask; ambiguous pixels
//! go to the nearest instance. A priority flood from the resulting labels
//! then assigns the ink no mask covered.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeSet, BinaryHeap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::{confidence_order, CandidateSet, InstanceId};
use crate::error::{Error, Result};
use crate::raster::{
    connected_components, distance_transform, neighbors, Connectivity, InkMask, InstanceMask, Mask,
    ScalarField,
};
use crate::rect::Rect;

pub const DEFAULT_DEPTH_BINS: usize = 10;
/// Non-ink pixels within this distance of ink may carry the flood across gaps.
pub const DEFAULT_WATERSHED_BRIDGE: f64 = 2.0;

/// Relative depth in [0, 1]; larger values are nearer the viewer.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    depth: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, depth: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || depth.len() != width * height {
            return Err(Error::InvalidRaster(format!(
                "depth map {width}x{height} with {} values",
                depth.len()
            )));
        }
        if let Some(v) = depth.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidRaster(format!(
                "depth value {v} outside [0, 1]"
            )));
        }
        Ok(DepthMap {
            width,
            height,
            depth,
        })
    }

    pub fn uniform(width: usize, height: usize, v: f64) -> Result<Self> {
        DepthMap::new(width, height, vec![v; width * height])
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.depth[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        assert!((0.0..=1.0).contains(&v));
        self.depth[y * self.width + x] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.depth
    }

    /// Apply `f` to every value; the result must stay in [0, 1].
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<DepthMap> {
        DepthMap::new(
            self.width,
            self.height,
            self.depth.iter().map(|&v| f(v)).collect(),
        )
    }
}

/// Ink pixels at which the depth map is read, in row-major order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplePointSet {
    points: Vec<(usize, usize)>,
}

impl SamplePointSet {
    pub fn points(&self) -> &[(usize, usize)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Modal depth bin of one instance. `score` is the bin midpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthScore {
    pub id: InstanceId,
    pub bin: usize,
    pub score: f64,
}

/// Per-pixel instance id, 0 = unassigned.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelMap {
    width: usize,
    height: usize,
    labels: Vec<u32>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0);
        LabelMap {
            width,
            height,
            labels: vec![0; width * height],
        }
    }

    pub fn from_raw(width: usize, height: usize, labels: Vec<u32>) -> Result<Self> {
        if width == 0 || height == 0 || labels.len() != width * height {
            return Err(Error::InvalidRaster(format!(
                "label map {width}x{height} with {} values",
                labels.len()
            )));
        }
        Ok(LabelMap {
            width,
            height,
            labels,
        })
    }

    /// Paint disjoint masks; later masks win where they overlap.
    pub fn from_masks<'a>(
        width: usize,
        height: usize,
        masks: impl IntoIterator<Item = (InstanceId, &'a Mask)>,
    ) -> Self {
        let mut out = LabelMap::new(width, height);
        for (id, m) in masks {
            for (i, &b) in m.bits().iter().enumerate() {
                if b {
                    out.labels[i] = id;
                }
            }
        }
        out
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, id: u32) {
        self.labels[y * self.width + x] = id;
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Distinct nonzero ids, ascending.
    pub fn ids(&self) -> Vec<InstanceId> {
        self.labels
            .iter()
            .copied()
            .filter(|&l| l != 0)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn mask_of(&self, id: InstanceId) -> Mask {
        let bits = self.labels.iter().map(|&l| l == id && id != 0).collect();
        Mask::from_bits(self.width, self.height, bits).expect("label map dims are valid")
    }

    pub fn labeled(&self) -> Mask {
        let bits = self.labels.iter().map(|&l| l != 0).collect();
        Mask::from_bits(self.width, self.height, bits).expect("label map dims are valid")
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }
}

/// Default sample budget: at least 1024 points, or one per 16 ink pixels.
pub fn default_sample_count(ink_count: usize) -> usize {
    (ink_count / 16).max(1024)
}

/// Take every `ceil(total / n)`-th ink pixel in row-major order.
pub fn sample_ink_points(ink: &InkMask, n: usize) -> Result<SamplePointSet> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "sample count must be at least 1".into(),
        ));
    }
    let total = ink.count();
    if total == 0 {
        return Err(Error::EmptyInk);
    }
    let stride = total.div_ceil(n);
    let points = ink.iter_set().step_by(stride).collect();
    Ok(SamplePointSet { points })
}

/// Uniform bin index of a depth value over [0, 1].
pub fn depth_bin(v: f64, bins: usize) -> usize {
    ((v * bins as f64).floor() as usize).min(bins - 1)
}

pub fn bin_midpoint(bin: usize, bins: usize) -> f64 {
    (bin as f64 + 0.5) / bins as f64
}

fn modal_bin(values: impl Iterator<Item = f64>, bins: usize) -> Option<usize> {
    let mut counts = vec![0usize; bins];
    let mut any = false;
    for v in values {
        counts[depth_bin(v, bins)] += 1;
        any = true;
    }
    if !any {
        return None;
    }
    // Ties go to the nearer (larger) bin.
    let mut best = 0;
    for (b, &c) in counts.iter().enumerate() {
        if c >= counts[best] {
            best = b;
        }
    }
    Some(best)
}

pub fn depth_score(
    id: InstanceId,
    mask: &InstanceMask,
    points: &SamplePointSet,
    depth: &DepthMap,
    bins: usize,
) -> Result<DepthScore> {
    if bins < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 depth bins, got {bins}"
        )));
    }
    if mask.dims() != depth.dims() {
        return Err(Error::DimensionMismatch {
            expected: depth.dims(),
            actual: mask.dims(),
        });
    }
    let inside = points
        .points
        .iter()
        .filter(|&&(x, y)| mask.get(x, y))
        .map(|&(x, y)| depth.get(x, y));
    let bin = modal_bin(inside, bins).ok_or(Error::Undersampled(id))?;
    Ok(DepthScore {
        id,
        bin,
        score: bin_midpoint(bin, bins),
    })
}

/// Strict priority used whenever two masks claim a pixel: nearer depth bin,
/// then larger mask area, then smaller id. `Less` means `a` wins.
pub(crate) fn claim_order(
    a: (usize, usize, InstanceId),
    b: (usize, usize, InstanceId),
) -> Ordering {
    b.0.cmp(&a.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2))
}

fn paint_by_priority(set: &CandidateSet, ink: &InkMask, order: &[usize]) -> LabelMap {
    let (w, h) = set.dims();
    let mut out = LabelMap::new(w, h);
    // Lowest priority first so winners overwrite.
    for &k in order.iter().rev() {
        let id = set.detections()[k].id;
        for (i, (&b, &s)) in set.masks()[k].bits().iter().zip(ink.bits()).enumerate() {
            if b && s {
                out.labels[i] = id;
            }
        }
    }
    out
}

/// Assign every covered ink pixel to its nearest covering instance.
pub fn resolve_overlaps(
    set: &CandidateSet,
    scores: &[DepthScore],
    ink: &InkMask,
) -> Result<LabelMap> {
    if ink.dims() != set.dims() {
        return Err(Error::DimensionMismatch {
            expected: set.dims(),
            actual: ink.dims(),
        });
    }
    let by_id: HashMap<InstanceId, &DepthScore> = scores.iter().map(|s| (s.id, s)).collect();
    let mut keys = Vec::with_capacity(set.len());
    for (k, (d, m)) in set.iter().enumerate() {
        let s = by_id.get(&d.id).ok_or(Error::UnknownId(d.id))?;
        keys.push((k, (s.bin, m.count(), d.id)));
    }
    keys.sort_by(|a, b| claim_order(a.1, b.1));
    let order: Vec<usize> = keys.into_iter().map(|(k, _)| k).collect();
    Ok(paint_by_priority(set, ink, &order))
}

/// Ablation baseline: ambiguous pixels go to the most confident detection
/// and no depth is consulted.
pub fn resolve_by_confidence(set: &CandidateSet, ink: &InkMask) -> Result<LabelMap> {
    if ink.dims() != set.dims() {
        return Err(Error::DimensionMismatch {
            expected: set.dims(),
            actual: ink.dims(),
        });
    }
    Ok(paint_by_priority(
        set,
        ink,
        &confidence_order(set.detections()),
    ))
}

/// A connected group of ink pixels no marker could reach.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnreachableComponent {
    pub pixels: usize,
    pub bbox: Rect,
}

#[derive(Debug, Clone)]
pub struct Propagation {
    pub labels: LabelMap,
    pub unreachable: Vec<UnreachableComponent>,
}

impl Propagation {
    pub fn unreachable_pixels(&self) -> usize {
        self.unreachable.iter().map(|c| c.pixels).sum()
    }
}

#[derive(PartialEq)]
struct Level(f64);

impl Eq for Level {}

impl PartialOrd for Level {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Level {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Ordered flood of existing labels into unlabeled ink.
///
/// The flood moves over 8-connected terrain made of ink pixels plus non-ink
/// pixels whose `field` value is at most `bridge`, and is keyed by
/// (field value, insertion order). Markers enter in ascending id order, so a
/// pixel equidistant from two markers goes to the smaller id. Only ink pixels
/// are written; existing labels never change.
pub fn watershed_propagate(
    labels: &LabelMap,
    ink: &InkMask,
    field: &ScalarField,
    bridge: f64,
) -> Result<Propagation> {
    if ink.dims() != labels.dims() {
        return Err(Error::DimensionMismatch {
            expected: labels.dims(),
            actual: ink.dims(),
        });
    }
    if field.dims() != labels.dims() {
        return Err(Error::DimensionMismatch {
            expected: labels.dims(),
            actual: field.dims(),
        });
    }
    let (w, h) = labels.dims();
    let values = field.values();
    let terrain = |i: usize| ink.get_index(i) || values[i] <= bridge;

    let mut seeds: Vec<usize> = (0..labels.labels.len())
        .filter(|&i| labels.labels[i] != 0)
        .collect();
    if seeds.is_empty() {
        return Err(Error::NoMarkers);
    }
    seeds.sort_by_key(|&i| (labels.labels[i], i));

    let mut work = labels.labels.clone();
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    for i in seeds {
        heap.push(Reverse((Level(values[i]), seq, i)));
        seq += 1;
    }
    while let Some(Reverse((_, _, i))) = heap.pop() {
        let lab = work[i];
        for n in neighbors(i, w, h, Connectivity::Eight) {
            if work[n] == 0 && terrain(n) {
                work[n] = lab;
                heap.push(Reverse((Level(values[n]), seq, n)));
                seq += 1;
            }
        }
    }

    let out: Vec<u32> = (0..work.len())
        .map(|i| {
            if labels.labels[i] != 0 {
                labels.labels[i]
            } else if ink.get_index(i) {
                work[i]
            } else {
                0
            }
        })
        .collect();
    let out = LabelMap {
        width: w,
        height: h,
        labels: out,
    };

    let stray = Mask::from_bits(
        w,
        h,
        (0..out.labels.len())
            .map(|i| ink.get_index(i) && out.labels[i] == 0)
            .collect(),
    )?;
    let comps = connected_components(&stray, Connectivity::Eight);
    let unreachable = (1..=comps.count)
        .map(|c| {
            let members = comps.members(c);
            let m = Mask::from_bits(w, h, {
                let mut bits = vec![false; w * h];
                for &i in &members {
                    bits[i] = true;
                }
                bits
            })
            .expect("dims valid");
            UnreachableComponent {
                pixels: members.len(),
                bbox: m.bounding_box().expect("component is nonempty"),
            }
        })
        .collect();
    Ok(Propagation {
        labels: out,
        unreachable,
    })
}

#[derive(Debug, Clone)]
pub struct Segmentation {
    pub labels: LabelMap,
    pub scores: Vec<DepthScore>,
    pub unreachable: Vec<UnreachableComponent>,
    /// Instances whose mask contained no sample point and were scored from
    /// every ink pixel they cover instead (or placed farthest if they cover none).
    pub undersampled: Vec<InstanceId>,
}

#[derive(Debug, Clone, Copy)]
pub struct RefineParams {
    /// `None` picks [`default_sample_count`].
    pub sample_points: Option<usize>,
    pub bins: usize,
    pub bridge: f64,
}

impl Default for RefineParams {
    fn default() -> Self {
        RefineParams {
            sample_points: None,
            bins: DEFAULT_DEPTH_BINS,
            bridge: DEFAULT_WATERSHED_BRIDGE,
        }
    }
}

/// Sample, score, resolve overlaps, then flood the remaining ink.
pub fn finalize_segmentation(
    set: &CandidateSet,
    depth: &DepthMap,
    ink: &InkMask,
    params: &RefineParams,
) -> Result<Segmentation> {
    if set.is_empty() {
        return Err(Error::NoMarkers);
    }
    if depth.dims() != set.dims() {
        return Err(Error::DimensionMismatch {
            expected: set.dims(),
            actual: depth.dims(),
        });
    }
    if ink.dims() != set.dims() {
        return Err(Error::DimensionMismatch {
            expected: set.dims(),
            actual: ink.dims(),
        });
    }
    let n = params
        .sample_points
        .unwrap_or_else(|| default_sample_count(ink.count()));
    let points = sample_ink_points(ink, n)?;

    let scored: Vec<(DepthScore, bool)> = set
        .iter()
        .collect::<Vec<_>>()
        .par_iter()
        .map(
            |(d, m)| match depth_score(d.id, m, &points, depth, params.bins) {
                Ok(s) => Ok((s, false)),
                Err(Error::Undersampled(_)) => {
                    let dense = m.and(ink)?;
                    let bin =
                        modal_bin(dense.iter_set().map(|(x, y)| depth.get(x, y)), params.bins)
                            .unwrap_or(0);
                    Ok((
                        DepthScore {
                            id: d.id,
                            bin,
                            score: bin_midpoint(bin, params.bins),
                        },
                        true,
                    ))
                }
                Err(e) => Err(e),
            },
        )
        .collect::<Result<_>>()?;
    let undersampled = scored
        .iter()
        .filter(|(_, f)| *f)
        .map(|(s, _)| s.id)
        .collect();
    let scores: Vec<DepthScore> = scored.into_iter().map(|(s, _)| s).collect();

    let resolved = resolve_overlaps(set, &scores, ink)?;
    let field = distance_transform(ink);
    let prop = watershed_propagate(&resolved, ink, &field, params.bridge)?;
    Ok(Segmentation {
        labels: prop.labels,
        scores,
        unreachable: prop.unreachable,
        undersampled,
    })
}

/// Confidence-ordered assignment without depth scores or watershed.
pub fn segment_without_refinement(set: &CandidateSet, ink: &InkMask) -> Result<Segmentation> {
    if set.is_empty() {
        return Err(Error::NoMarkers);
    }
    let labels = resolve_by_confidence(set, ink)?;
    let stray = ink.and_not(&labels.labeled())?;
    let comps = connected_components(&stray, Connectivity::Eight);
    let unreachable = (1..=comps.count)
        .map(|c| {
            let members = comps.members(c);
            let mut m = Mask::new(ink.width(), ink.height());
            for &i in &members {
                m.set_index(i, true);
            }
            UnreachableComponent {
                pixels: members.len(),
                bbox: m.bounding_box().expect("nonempty"),
            }
        })
        .collect();
    let scores = set
        .detections()
        .iter()
        .map(|d| DepthScore {
            id: d.id,
            bin: 0,
            score: 0.0,
        })
        .collect();
    Ok(Segmentation {
        labels,
        scores,
        unreachable,
        undersampled: Vec::new(),
    })
}
