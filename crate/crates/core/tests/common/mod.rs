//! Scene generators and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::VecDeque;

use inklayer::depth::LabelMap;
use inklayer::detection::{CandidateSet, Detection};
use inklayer::raster::{
    binarize, InkMask, Mask, ScalarField, SketchRaster, DEFAULT_BINARIZE_THRESHOLD,
};
use inklayer::rect::Rect;
use inklayer::scene::{builtin_library, compose_scene, Layout, LayoutEntry, SceneAnnotation};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub struct Scene {
    pub sketch: SketchRaster,
    pub ink: InkMask,
    pub ann: SceneAnnotation,
}

/// `n` builtin objects at random boxes and ranks. Pairs of boxes keep an
/// IoU of at most `max_iou` so whole-object duplicates never arise by chance.
pub fn random_layout(rng: &mut impl Rng, size: usize, n: usize, max_iou: f64) -> Layout {
    let keys: Vec<String> = builtin_library().keys().cloned().collect();
    let mut ranks: Vec<i64> = (0..n as i64).collect();
    ranks.shuffle(rng);
    let (lo, hi) = (size / 10, size / 3);
    let mut boxes: Vec<Rect> = Vec::new();
    while boxes.len() < n {
        let w = rng.random_range(lo..=hi);
        let h = rng.random_range(lo..=hi);
        let r = Rect::new(
            rng.random_range(0..=size - w),
            rng.random_range(0..=size - h),
            w,
            h,
        );
        if boxes.iter().all(|b| iou(b, &r) <= max_iou) {
            boxes.push(r);
        }
    }
    let entries = boxes
        .iter()
        .zip(&ranks)
        .map(|(b, &rank)| LayoutEntry {
            key: keys[rng.random_range(0..keys.len())].clone(),
            x: b.x,
            y: b.y,
            w: b.w,
            h: b.h,
            rank,
        })
        .collect();
    Layout {
        width: size,
        height: size,
        entries,
    }
}

pub fn iou(a: &Rect, b: &Rect) -> f64 {
    let inter = a.intersection(b).map_or(0, |r| r.area()) as f64;
    inter / ((a.area() + b.area()) as f64 - inter)
}

pub fn compose(layout: &Layout) -> Scene {
    let (sketch, ann) = compose_scene(layout, &builtin_library()).expect("layout composes");
    let ink = binarize(&sketch, DEFAULT_BINARIZE_THRESHOLD);
    Scene { sketch, ink, ann }
}

pub fn random_scene(rng: &mut impl Rng, size: usize, n: usize, max_iou: f64) -> Scene {
    compose(&random_layout(rng, size, n, max_iou))
}

/// Ground-truth boxes around the masks a perfect amodal segmenter would
/// return: each object's ink as placed, before occlusion.
pub fn placed_candidates(ann: &SceneAnnotation) -> CandidateSet {
    let dets = ann
        .instances
        .iter()
        .map(|i| Detection {
            id: i.id,
            bbox: i.placed.bounding_box().expect("placed ink"),
            confidence: 1.0,
        })
        .collect();
    let masks = ann.instances.iter().map(|i| i.placed.clone()).collect();
    CandidateSet::new(ann.width, ann.height, dets, masks).expect("valid candidates")
}

pub fn random_mask(rng: &mut impl Rng, w: usize, h: usize, density: f64) -> Mask {
    Mask::from_fn(w, h, |_, _| rng.random_bool(density))
}

/// Exact Euclidean distance to the nearest set pixel by exhaustive search.
pub fn brute_distance(m: &Mask) -> Vec<f64> {
    let (w, h) = m.dims();
    let set: Vec<(usize, usize)> = m.iter_set().collect();
    (0..w * h)
        .map(|i| {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            set.iter()
                .map(|&(sx, sy)| ((sx as f64 - x).powi(2) + (sy as f64 - y).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// Holes are background pixels with no 4-connected background path to the
/// border; found by relaxing an "open" flag to a fixed point.
pub fn brute_fill_holes(m: &Mask) -> Mask {
    let (w, h) = m.dims();
    let mut open = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            open[y * w + x] = !m.get(x, y) && (x == 0 || y == 0 || x + 1 == w || y + 1 == h);
        }
    }
    loop {
        let mut changed = false;
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if open[i] || m.get(x, y) {
                    continue;
                }
                let near = (x > 0 && open[i - 1])
                    || (x + 1 < w && open[i + 1])
                    || (y > 0 && open[i - w])
                    || (y + 1 < h && open[i + w]);
                if near {
                    open[i] = true;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    Mask::from_fn(w, h, |x, y| !open[y * w + x])
}

/// Closing by a (2r+1)-square on the unbounded plane with the mask embedded
/// in false: p is set iff every q in the window of p has a set pixel in its
/// own window.
pub fn brute_close(m: &Mask, r: usize) -> Mask {
    let (w, h) = m.dims();
    let r = r as i64;
    let set_at = |x: i64, y: i64| {
        x >= 0 && y >= 0 && x < w as i64 && y < h as i64 && m.get(x as usize, y as usize)
    };
    let dilated_at = |x: i64, y: i64| (-r..=r).any(|dy| (-r..=r).any(|dx| set_at(x + dx, y + dy)));
    Mask::from_fn(w, h, |x, y| {
        let (x, y) = (x as i64, y as i64);
        (-r..=r).all(|dy| (-r..=r).all(|dx| dilated_at(x + dx, y + dy)))
    })
}

/// Ink pixels an 8-connected flood from labeled pixels cannot reach over
/// ink plus non-ink pixels with `field <= bridge`.
pub fn unreachable_ink(labels: &LabelMap, ink: &InkMask, field: &ScalarField, bridge: f64) -> Mask {
    let (w, h) = ink.dims();
    let passable = |i: usize| ink.get_index(i) || field.values()[i] <= bridge;
    let mut seen = vec![false; w * h];
    let mut queue: VecDeque<usize> = labels
        .labels()
        .iter()
        .enumerate()
        .filter(|(_, &l)| l != 0)
        .map(|(i, _)| i)
        .collect();
    for &i in &queue {
        seen[i] = true;
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % w) as i64, (i / w) as i64);
        for dy in -1..=1i64 {
            for dx in -1..=1i64 {
                let (nx, ny) = (x + dx, y + dy);
                if (dx, dy) == (0, 0) || nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !seen[j] && passable(j) {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    Mask::from_fn(w, h, |x, y| ink.get(x, y) && !seen[y * w + x])
}

/// Tau-b by counting every pair.
pub fn kendall_pairs(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let (mut conc, mut disc, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let a = (x[i] - x[j]).signum() as i64 * i64::from(x[i] != x[j]);
            let b = (y[i] - y[j]).signum() as i64 * i64::from(y[i] != y[j]);
            match (a, b) {
                (0, 0) => {}
                (0, _) => tx += 1,
                (_, 0) => ty += 1,
                _ if a == b => conc += 1,
                _ => disc += 1,
            }
        }
    }
    let denom = (((conc + disc + tx) * (conc + disc + ty)) as f64).sqrt();
    (conc - disc) as f64 / denom
}

/// AP by enumerating every confidence-ordered prefix, re-matching each
/// prefix from scratch, and taking at each of the 101 recall levels the
/// best precision of any prefix reaching it.
pub fn brute_ap(dets: &[Detection], gts: &[Rect], thr: f64) -> f64 {
    if gts.is_empty() {
        return if dets.is_empty() { 1.0 } else { 0.0 };
    }
    let mut order: Vec<&Detection> = dets.iter().collect();
    order.sort_by(|a, b| {
        b.confidence
            .partial_cmp(&a.confidence)
            .unwrap()
            .then(a.id.cmp(&b.id))
    });
    let mut curve = Vec::new();
    for k in 1..=order.len() {
        let mut taken = vec![false; gts.len()];
        let mut tp = 0;
        for d in &order[..k] {
            let mut best: Option<usize> = None;
            for g in 0..gts.len() {
                let v = iou(&d.bbox, &gts[g]);
                if !taken[g] && v >= thr && best.is_none_or(|b| v > iou(&d.bbox, &gts[b])) {
                    best = Some(g);
                }
            }
            if let Some(g) = best {
                taken[g] = true;
                tp += 1;
            }
        }
        curve.push((tp as f64 / gts.len() as f64, tp as f64 / k as f64));
    }
    (0..=100)
        .map(|r| {
            let level = r as f64 / 100.0;
            curve
                .iter()
                .filter(|(rec, _)| *rec >= level)
                .map(|c| c.1)
                .fold(0.0, f64::max)
        })
        .sum::<f64>()
        / 101.0
}

pub fn brute_ap_suite(dets: &[Detection], gts: &[Rect]) -> (f64, f64, f64) {
    let thr: Vec<f64> = (0..10).map(|k| 0.5 + 0.05 * k as f64).collect();
    let aps: Vec<f64> = thr.iter().map(|&t| brute_ap(dets, gts, t)).collect();
    (aps.iter().sum::<f64>() / 10.0, aps[0], aps[5])
}

pub fn random_boxes(rng: &mut impl Rng, n: usize, size: usize) -> Vec<Rect> {
    (0..n)
        .map(|_| {
            let w = rng.random_range(2..=size / 2);
            let h = rng.random_range(2..=size / 2);
            Rect::new(
                rng.random_range(0..=size - w),
                rng.random_range(0..=size - h),
                w,
                h,
            )
        })
        .collect()
}

/// Detections that jitter some ground-truth boxes and add false positives.
pub fn random_detections(
    rng: &mut impl Rng,
    gts: &[Rect],
    max: usize,
    size: usize,
) -> Vec<Detection> {
    let n = rng.random_range(0..=max);
    (0..n)
        .map(|k| {
            let bbox = if !gts.is_empty() && rng.random_bool(0.7) {
                let g = gts[rng.random_range(0..gts.len())];
                let dx = rng.random_range(-3i64..=3);
                let dy = rng.random_range(-3i64..=3);
                let x = (g.x as i64 + dx).clamp(0, (size - g.w) as i64) as usize;
                let y = (g.y as i64 + dy).clamp(0, (size - g.h) as i64) as usize;
                Rect::new(x, y, g.w, g.h)
            } else {
                random_boxes(rng, 1, size)[0]
            };
            // Coarse confidences so ties occur.
            let confidence = rng.random_range(1..=10) as f64 / 10.0;
            Detection {
                id: k as u32 + 1,
                bbox,
                confidence,
            }
        })
        .collect()
}
