mod common;

use std::collections::HashMap;

use inklayer::depth::{
    depth_bin, finalize_segmentation, resolve_overlaps, sample_ink_points, watershed_propagate,
    DepthMap, DepthScore, LabelMap, RefineParams,
};
use inklayer::detection::{clean_mask, filter_detections, overlap_score, CandidateSet, Detection};
use inklayer::eval::{
    ap_suite, average_precision, coco_thresholds, kendall_tau, segmentation_metrics,
};
use inklayer::inpaint::NullBackend;
use inklayer::layering::{build_inpaint_region, complete_stack, composite, decompose};
use inklayer::raster::{
    distance_transform, fill_holes, morphological_close, InkMask, Mask, SketchRaster,
};
use inklayer::rect::Rect;
use inklayer::rle::{rle_decode, rle_encode};
use inklayer::scene::{builtin_library, place_object};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

use common::*;

/// Random ink plus 1..=5 blob masks with boxes around them.
fn random_set(rng: &mut impl Rng) -> (CandidateSet, InkMask) {
    let w = rng.random_range(6..=20);
    let h = rng.random_range(6..=20);
    let ink = random_mask(rng, w, h, 0.4);
    let k = rng.random_range(1..=5);
    let mut dets = Vec::new();
    let mut masks = Vec::new();
    while dets.len() < k {
        let r = random_boxes(rng, 1, w.min(h))[0];
        let m = Mask::from_fn(w, h, |x, y| r.contains(x, y) && rng.random_bool(0.85));
        let Some(bbox) = m.bounding_box() else {
            continue;
        };
        dets.push(Detection {
            id: dets.len() as u32 + 1,
            bbox,
            confidence: rng.random_range(1..=10) as f64 / 10.0,
        });
        masks.push(m);
    }
    (CandidateSet::new(w, h, dets, masks).unwrap(), ink)
}

fn random_depth(rng: &mut impl Rng, w: usize, h: usize) -> DepthMap {
    DepthMap::new(
        w,
        h,
        (0..w * h).map(|_| rng.random_range(0.0..=1.0)).collect(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn rle_round_trips(w in 1usize..30, h in 1usize..30, seed: u64) {
        let m = random_mask(&mut rng(seed), w, h, 0.5);
        prop_assert_eq!(rle_decode(&rle_encode(&m)).unwrap(), m);
    }

    #[test]
    fn distance_matches_exhaustive_search(w in 1usize..14, h in 1usize..14, seed: u64) {
        let m = random_mask(&mut rng(seed), w, h, 0.2);
        let dt = distance_transform(&m);
        prop_assert_eq!(dt.values().to_vec(), brute_distance(&m));
    }

    #[test]
    fn close_is_extensive_and_idempotent(w in 1usize..16, h in 1usize..16, r in 0usize..4, seed: u64) {
        let m = random_mask(&mut rng(seed), w, h, 0.4);
        let c = morphological_close(&m, r);
        prop_assert!(m.is_subset_of(&c));
        prop_assert_eq!(morphological_close(&c, r), c.clone());
        prop_assert_eq!(c, brute_close(&m, r));
    }

    #[test]
    fn fill_holes_matches_oracle(w in 1usize..16, h in 1usize..16, seed: u64) {
        let m = random_mask(&mut rng(seed), w, h, 0.5);
        let f = fill_holes(&m);
        prop_assert!(m.is_subset_of(&f));
        prop_assert_eq!(f, brute_fill_holes(&m));
    }

    #[test]
    fn clean_mask_contains_input(w in 1usize..16, h in 1usize..16, seed: u64) {
        let m = random_mask(&mut rng(seed), w, h, 0.3);
        prop_assert!(m.is_subset_of(&clean_mask(&m, 1)));
    }

    #[test]
    fn filter_output_is_a_fixed_point(seed: u64, thr in 0.1f64..=1.0) {
        let (set, ink) = random_set(&mut rng(seed));
        let once = filter_detections(&set, &ink, thr).unwrap();
        let twice = filter_detections(&once.kept, &ink, thr).unwrap();
        prop_assert!(twice.suppressed.is_empty());
        prop_assert_eq!(&twice.kept, &once.kept);

        // Subset of the input, order and pairing preserved.
        let ids: Vec<u32> = set.detections().iter().map(|d| d.id).collect();
        let kept: Vec<u32> = once.kept.detections().iter().map(|d| d.id).collect();
        let mut pos = ids.iter().map(|id| kept.contains(id));
        prop_assert!(kept.iter().all(|id| ids.contains(id)));
        prop_assert!(kept.windows(2).all(|p| ids.iter().position(|i| *i == p[0]) < ids.iter().position(|i| *i == p[1])));
        prop_assert_eq!(pos.by_ref().filter(|k| *k).count(), kept.len());
        for (d, m) in once.kept.iter() {
            let k = set.index_of(d.id).unwrap();
            prop_assert_eq!(m, &set.masks()[k]);
        }
        // No surviving pair with intersecting boxes scores above the threshold.
        for i in 0..once.kept.len() {
            for j in i + 1..once.kept.len() {
                let (a, b) = (&once.kept.detections()[i], &once.kept.detections()[j]);
                if a.bbox.intersects(&b.bbox) {
                    prop_assert!(overlap_score(i, j, &once.kept, &ink).unwrap() <= thr);
                }
            }
        }
    }

    #[test]
    fn overlap_is_symmetric_and_ignores_non_ink(seed: u64) {
        let mut rng = rng(seed);
        let (set, ink) = random_set(&mut rng);
        prop_assume!(set.len() >= 2);
        let s = overlap_score(0, 1, &set, &ink).unwrap();
        prop_assert_eq!(s, overlap_score(1, 0, &set, &ink).unwrap());
        let (w, h) = set.dims();
        let noisy: Vec<Mask> = set
            .masks()
            .iter()
            .map(|m| Mask::from_fn(w, h, |x, y| if ink.get(x, y) { m.get(x, y) } else { rng.random_bool(0.5) }))
            .collect();
        let mutated = set.with_masks(noisy).unwrap();
        prop_assert_eq!(s, overlap_score(0, 1, &mutated, &ink).unwrap());
    }

    #[test]
    fn samples_lie_on_ink_without_repeats(w in 1usize..20, h in 1usize..20, n in 1usize..50, seed: u64) {
        let ink = random_mask(&mut rng(seed), w, h, 0.5);
        prop_assume!(!ink.is_empty());
        let pts = sample_ink_points(&ink, n).unwrap();
        let mut seen = std::collections::HashSet::new();
        for &(x, y) in pts.points() {
            prop_assert!(ink.get(x, y));
            prop_assert!(seen.insert((x, y)));
        }
        prop_assert_eq!(pts.len(), ink.count().div_ceil(ink.count().div_ceil(n)));
    }

    #[test]
    fn resolve_ignores_mask_order(seed: u64) {
        let mut rng = rng(seed);
        let (set, ink) = random_set(&mut rng);
        let scores: Vec<DepthScore> = set
            .detections()
            .iter()
            .map(|d| {
                let bin = rng.random_range(0..3);
                DepthScore { id: d.id, bin, score: (bin as f64 + 0.5) / 10.0 }
            })
            .collect();
        let mut perm: Vec<usize> = (0..set.len()).collect();
        perm.shuffle(&mut rng);
        let (w, h) = set.dims();
        let shuffled = CandidateSet::new(
            w,
            h,
            perm.iter().map(|&k| set.detections()[k].clone()).collect(),
            perm.iter().map(|&k| set.masks()[k].clone()).collect(),
        )
        .unwrap();
        prop_assert_eq!(resolve_overlaps(&set, &scores, &ink).unwrap(), resolve_overlaps(&shuffled, &scores, &ink).unwrap());
    }

    #[test]
    fn watershed_keeps_labels_and_fills_reachable_ink(seed: u64, bridge in 0.0f64..3.0) {
        let mut rng = rng(seed);
        let (set, ink) = random_set(&mut rng);
        let scores: Vec<DepthScore> = set.detections().iter().map(|d| DepthScore { id: d.id, bin: 0, score: 0.05 }).collect();
        let markers = resolve_overlaps(&set, &scores, &ink).unwrap();
        prop_assume!(markers.labeled_count() > 0);
        let field = distance_transform(&ink);
        let out = watershed_propagate(&markers, &ink, &field, bridge).unwrap();
        for (a, b) in markers.labels().iter().zip(out.labels.labels()) {
            if *a != 0 {
                prop_assert_eq!(a, b);
            }
        }
        let stranded = unreachable_ink(&markers, &ink, &field, bridge);
        prop_assert_eq!(out.labels.labeled(), ink.and_not(&stranded).unwrap());
        prop_assert_eq!(out.unreachable_pixels(), stranded.count());
    }

    #[test]
    fn bin_preserving_monotone_maps_keep_the_segmentation(seed: u64, gamma in 0.3f64..3.0) {
        let mut rng = rng(seed);
        let (set, ink) = random_set(&mut rng);
        let (w, h) = set.dims();
        let depth = random_depth(&mut rng, w, h);
        // Strictly increasing inside every bin and fixing every bin edge.
        let bins = 10;
        let warped = depth
            .map(|v| {
                let b = depth_bin(v, bins) as f64;
                let t = (v * bins as f64 - b).clamp(0.0, 1.0);
                ((b + t.powf(gamma)) / bins as f64).min(1.0)
            })
            .unwrap();
        let params = RefineParams { sample_points: Some(64), bins, ..Default::default() };
        let a = finalize_segmentation(&set, &depth, &ink, &params);
        let b = finalize_segmentation(&set, &warped, &ink, &params);
        match (a, b) {
            (Ok(a), Ok(b)) => {
                prop_assert_eq!(a.labels, b.labels);
                prop_assert_eq!(a.scores, b.scores);
            }
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "only one run failed"),
        }
    }

    #[test]
    fn ap_does_not_increase_with_threshold(seed: u64) {
        let mut rng = rng(seed);
        let n = rng.random_range(0..=6);
        let gts = random_boxes(&mut rng, n, 48);
        let dets = random_detections(&mut rng, &gts, 6, 48);
        let aps: Vec<f64> = coco_thresholds().iter().map(|&t| average_precision(&dets, &gts, t)).collect();
        prop_assert!(aps.windows(2).all(|p| p[0] >= p[1]));
        let s = ap_suite(&dets, &gts);
        prop_assert!(s.ap50 >= s.ap75);
        prop_assert!((0.0..=1.0).contains(&s.ar));
    }

    #[test]
    fn kendall_is_symmetric_and_reflexive(seed: u64, n in 2usize..12) {
        let mut rng = rng(seed);
        let ids: Vec<u32> = (1..=n as u32).collect();
        let x: Vec<(u32, f64)> = ids.iter().map(|&i| (i, rng.random_range(0..4) as f64)).collect();
        let y: Vec<(u32, f64)> = ids.iter().map(|&i| (i, rng.random_range(0..4) as f64)).collect();
        let mut perm: Vec<f64> = (0..n).map(|k| k as f64).collect();
        perm.shuffle(&mut rng);
        let p: Vec<(u32, f64)> = ids.iter().zip(&perm).map(|(&i, &v)| (i, v)).collect();
        prop_assert_eq!(kendall_tau(&p, &p).unwrap(), 1.0);
        match (kendall_tau(&x, &y), kendall_tau(&y, &x)) {
            (Ok(a), Ok(b)) => {
                prop_assert_eq!(a, b);
                let xs: Vec<f64> = x.iter().map(|v| v.1).collect();
                let ys: Vec<f64> = y.iter().map(|v| v.1).collect();
                prop_assert!((a - kendall_pairs(&xs, &ys)).abs() < 1e-12);
            }
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "asymmetric failure"),
        }
    }

    #[test]
    fn segmentation_metrics_ignore_prediction_ids(seed: u64) {
        let mut rng = rng(seed);
        let (w, h) = (rng.random_range(3..16), rng.random_range(3..16));
        let ink = random_mask(&mut rng, w, h, 0.6);
        let gt = LabelMap::from_raw(w, h, (0..w * h).map(|_| rng.random_range(0..4)).collect()).unwrap();
        let pred = LabelMap::from_raw(w, h, (0..w * h).map(|_| rng.random_range(0..5)).collect()).unwrap();
        let mut names: Vec<u32> = (10..15).collect();
        names.shuffle(&mut rng);
        let renamed = LabelMap::from_raw(
            w,
            h,
            pred.labels().iter().map(|&l| if l == 0 { 0 } else { names[l as usize] }).collect(),
        )
        .unwrap();
        let a = segmentation_metrics(&pred, &gt, &ink).unwrap();
        let b = segmentation_metrics(&renamed, &gt, &ink).unwrap();
        prop_assert_eq!(a.pixel_acc, b.pixel_acc);
        prop_assert_eq!(a.seg_iou, b.seg_iou);
        prop_assert!((0.0..=1.0).contains(&a.pixel_acc) && (0.0..=1.0).contains(&a.seg_iou));
    }

    #[test]
    fn layers_partition_ink_and_composite_round_trips(seed: u64) {
        let mut rng = rng(seed);
        let (set, ink) = random_set(&mut rng);
        let (w, h) = set.dims();
        let depth = random_depth(&mut rng, w, h);
        let Ok(seg) = finalize_segmentation(&set, &depth, &ink, &RefineParams::default()) else {
            return Ok(());
        };
        let (stack, empty) = decompose(&set, &seg, &ink).unwrap();
        prop_assert_eq!(stack.layers.len() + empty.len(), set.len());
        let mut owner = vec![0u32; w * h];
        for l in &stack.layers {
            prop_assert!(l.inpaint_region.is_subset_of(&Mask::from_rect(w, h, l.bbox)));
            for (i, &b) in l.ink.bits().iter().enumerate() {
                if b {
                    prop_assert_eq!(owner[i], 0);
                    owner[i] = l.id;
                }
            }
        }
        prop_assert_eq!(owner, seg.labels.labels().to_vec());
        for pair in stack.layers.windows(2) {
            prop_assert!((pair[0].depth.bin, pair[0].area, std::cmp::Reverse(pair[0].id))
                < (pair[1].depth.bin, pair[1].area, std::cmp::Reverse(pair[1].id)));
        }
        let done = complete_stack(stack, &NullBackend, 4);
        prop_assert_eq!(composite(&done), SketchRaster::from_ink(&seg.labels.labeled()));
    }

    #[test]
    fn inpaint_region_stays_in_box(seed: u64) {
        let (set, _) = random_set(&mut rng(seed));
        let pairs: Vec<(u32, &Mask)> = set.iter().map(|(d, m)| (d.id, m)).collect();
        let (w, h) = set.dims();
        for d in set.detections() {
            let region = build_inpaint_region(d.id, &pairs, d.bbox).unwrap();
            prop_assert!(region.is_subset_of(&Mask::from_rect(w, h, d.bbox)));
        }
    }

    #[test]
    fn placement_keeps_aspect_ratio(bw in 4usize..80, bh in 4usize..80, key in 0usize..6) {
        let lib = builtin_library();
        let obj = lib.values().nth(key).unwrap();
        let tight = obj.bounding_box().unwrap();
        let (ow, oh) = (tight.w, tight.h);
        let p = place_object((100, 100), obj, Rect::new(5, 5, bw, bh)).unwrap();
        let s = (bw as f64 / ow as f64).min(bh as f64 / oh as f64);
        prop_assert!((p.frame.w as f64 - ow as f64 * s).abs() <= 1.0);
        prop_assert!((p.frame.h as f64 - oh as f64 * s).abs() <= 1.0);
        prop_assert!(p.mask.is_subset_of(&Mask::from_rect(100, 100, Rect::new(5, 5, bw, bh))));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn composed_masks_partition_the_ink(seed: u64, n in 1usize..8) {
        let scene = random_scene(&mut rng(seed), 256, n, 0.7);
        let mut owner: HashMap<usize, u32> = HashMap::new();
        for inst in &scene.ann.instances {
            prop_assert!(inst.mask.is_subset_of(&inst.placed));
            prop_assert_eq!(inst.mask.bounding_box(), Some(inst.bbox));
            for (x, y) in inst.mask.iter_set() {
                prop_assert!(owner.insert(y * 256 + x, inst.id).is_none());
            }
        }
        prop_assert_eq!(owner.len(), scene.ink.count());
        prop_assert!(scene.ann.label_map().labeled() == scene.ink);
    }
}
