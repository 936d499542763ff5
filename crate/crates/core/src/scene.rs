//! Synthetic annotated scenes assembled from an object-sketch library.
//!
//! Objects are scaled into their layout boxes (aspect preserved, nearest
//! neighbour), drawn back to front by depth rank, and a nearer object's ink
//! removes the shared pixels from every farther object's ground-truth mask.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::depth::{DepthMap, LabelMap};
use crate::detection::{CandidateSet, Detection, InstanceId};
use crate::error::{Error, Result};
use crate::io::{self, AnnotatedInstance, AnnotationDoc};
use crate::raster::{InstanceMask, Mask, SketchRaster};
use crate::rect::Rect;
use crate::rle::rle_encode;

/// Object ink masks keyed by name.
pub type ObjectLibrary = BTreeMap<String, Mask>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub key: String,
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
    /// Smaller = farther.
    pub rank: i64,
}

impl LayoutEntry {
    pub fn bbox(&self) -> Rect {
        Rect::new(self.x, self.y, self.w, self.h)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub width: usize,
    pub height: usize,
    pub entries: Vec<LayoutEntry>,
}

impl Layout {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        Ok(serde_json::from_slice(bytes)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlacedObject {
    pub mask: InstanceMask,
    /// Scaled object frame inside the target box.
    pub frame: Rect,
}

/// Scale `object_ink` by `min(box_w / obj_w, box_h / obj_h)` into `bbox`,
/// centered, where the object size is the tight box of its ink.
pub fn place_object(canvas: (usize, usize), object_ink: &Mask, bbox: Rect) -> Result<PlacedObject> {
    let (cw, ch) = canvas;
    if bbox.is_empty() {
        return Err(Error::DegenerateBox {
            w: bbox.w,
            h: bbox.h,
        });
    }
    if !bbox.within(cw, ch) {
        return Err(Error::InvalidArgument(format!(
            "box {bbox:?} leaves the {cw}x{ch} canvas"
        )));
    }
    let src = object_ink
        .bounding_box()
        .ok_or_else(|| Error::InvalidArgument("object sketch has no ink".into()))?;
    let scale = (bbox.w as f64 / src.w as f64).min(bbox.h as f64 / src.h as f64);
    let sw = ((src.w as f64 * scale).round() as usize).clamp(1, bbox.w);
    let sh = ((src.h as f64 * scale).round() as usize).clamp(1, bbox.h);
    let frame = Rect::new(
        bbox.x + (bbox.w - sw) / 2,
        bbox.y + (bbox.h - sh) / 2,
        sw,
        sh,
    );

    let mut mask = Mask::new(cw, ch);
    for ty in 0..sh {
        let sy = (((ty as f64 + 0.5) * src.h as f64 / sh as f64) as usize).min(src.h - 1);
        for tx in 0..sw {
            let sx = (((tx as f64 + 0.5) * src.w as f64 / sw as f64) as usize).min(src.w - 1);
            if object_ink.get(src.x + sx, src.y + sy) {
                mask.set(frame.x + tx, frame.y + ty, true);
            }
        }
    }
    Ok(PlacedObject { mask, frame })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtInstance {
    pub id: InstanceId,
    pub key: String,
    /// Tight around `mask`.
    pub bbox: Rect,
    /// Visible ink after occlusion.
    pub mask: InstanceMask,
    /// Ink as placed, before nearer objects removed anything.
    pub placed: InstanceMask,
    pub rank: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneAnnotation {
    pub width: usize,
    pub height: usize,
    /// In layout order; fully hidden objects are omitted.
    pub instances: Vec<GtInstance>,
}

impl SceneAnnotation {
    pub fn label_map(&self) -> LabelMap {
        LabelMap::from_masks(
            self.width,
            self.height,
            self.instances.iter().map(|i| (i.id, &i.mask)),
        )
    }

    /// No object lost any ink to a nearer one.
    pub fn is_occlusion_free(&self) -> bool {
        self.instances.iter().all(|i| i.mask == i.placed)
    }

    /// Uniform `rank / (max_rank + 1)` over each instance's pixels, 0 elsewhere.
    pub fn synthetic_depth(&self) -> DepthMap {
        let max_rank = self.instances.iter().map(|i| i.rank).max().unwrap_or(0);
        let mut depth =
            DepthMap::uniform(self.width, self.height, 0.0).expect("canvas is nonempty");
        for inst in &self.instances {
            let v = (inst.rank as f64 / (max_rank as f64 + 1.0)).clamp(0.0, 1.0);
            for (x, y) in inst.mask.iter_set() {
                depth.set(x, y, v);
            }
        }
        depth
    }

    /// Ground-truth boxes and masks as detections of confidence 1.
    pub fn oracle_candidates(&self) -> CandidateSet {
        let dets = self
            .instances
            .iter()
            .map(|i| Detection {
                id: i.id,
                bbox: i.bbox,
                confidence: 1.0,
            })
            .collect();
        let masks = self.instances.iter().map(|i| i.mask.clone()).collect();
        CandidateSet::new(self.width, self.height, dets, masks).expect("annotation is consistent")
    }

    /// Ids ordered back to front.
    pub fn depth_order(&self) -> Vec<InstanceId> {
        let mut v: Vec<&GtInstance> = self.instances.iter().collect();
        v.sort_by_key(|i| i.rank);
        v.into_iter().map(|i| i.id).collect()
    }

    pub fn to_doc(&self) -> AnnotationDoc {
        AnnotationDoc {
            width: self.width,
            height: self.height,
            instances: self
                .instances
                .iter()
                .map(|i| AnnotatedInstance {
                    id: i.id,
                    key: Some(i.key.clone()),
                    bbox: i.bbox,
                    confidence: None,
                    depth: Some(i.rank as f64),
                    mask_rle: rle_encode(&i.mask).to_string(),
                })
                .collect(),
        }
    }
}

/// Render the layout and derive its ground truth. Instance ids are layout
/// positions starting at 1.
pub fn compose_scene(
    layout: &Layout,
    library: &ObjectLibrary,
) -> Result<(SketchRaster, SceneAnnotation)> {
    let (w, h) = (layout.width, layout.height);
    let mut sketch = SketchRaster::white(w, h)?;
    let mut ranks = HashSet::new();
    for e in &layout.entries {
        if !ranks.insert(e.rank) {
            return Err(Error::DuplicateRank(e.rank));
        }
        if !library.contains_key(&e.key) {
            return Err(Error::MissingKey(e.key.clone()));
        }
    }
    let placed: Vec<Mask> = layout
        .entries
        .iter()
        .map(|e| place_object((w, h), &library[&e.key], e.bbox()).map(|p| p.mask))
        .collect::<Result<_>>()?;

    let mut instances = Vec::new();
    for (k, e) in layout.entries.iter().enumerate() {
        let mut visible = placed[k].clone();
        for (j, other) in layout.entries.iter().enumerate() {
            if other.rank > e.rank {
                visible = visible.and_not(&placed[j])?;
            }
        }
        for (x, y) in placed[k].iter_set() {
            sketch.set(x, y, 0);
        }
        if let Some(bbox) = visible.bounding_box() {
            instances.push(GtInstance {
                id: k as InstanceId + 1,
                key: e.key.clone(),
                bbox,
                mask: visible,
                placed: placed[k].clone(),
                rank: e.rank,
            });
        }
    }
    Ok((
        sketch,
        SceneAnnotation {
            width: w,
            height: h,
            instances,
        },
    ))
}

/// Load every `*.png` in `dir` as an object mask keyed by file stem.
pub fn load_library(dir: &Path) -> Result<ObjectLibrary> {
    let mut lib = ObjectLibrary::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("png") {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        lib.insert(
            stem.to_owned(),
            io::decode_mask_png(&std::fs::read(&path)?)?,
        );
    }
    Ok(lib)
}

/// Small stroke-drawn shapes for self-contained benchmarks and demos.
pub fn builtin_library() -> ObjectLibrary {
    const S: usize = 32;
    let mut lib = ObjectLibrary::new();
    let edge = |v: usize| v <= 1 || v >= S - 2;
    lib.insert("box".into(), Mask::from_fn(S, S, |x, y| edge(x) || edge(y)));
    lib.insert(
        "ellipse".into(),
        Mask::from_fn(S, S, |x, y| {
            let dx = (x as f64 + 0.5 - 16.0) / 16.0;
            let dy = (y as f64 + 0.5 - 16.0) / 12.0;
            let r = (dx * dx + dy * dy).sqrt();
            (0.85..=1.0).contains(&r)
        }),
    );
    lib.insert(
        "triangle".into(),
        Mask::from_fn(S, S, |x, y| {
            let half = y as f64 / 2.0;
            let (l, r) = (16.0 - half, 16.0 + half);
            let xf = x as f64;
            y >= S - 2
                || ((xf - l).abs() < 1.2 || (xf - r).abs() < 1.2) && xf >= l - 1.2 && xf <= r + 1.2
        }),
    );
    lib.insert(
        "cross".into(),
        Mask::from_fn(S, S, |x, y| {
            (15..=16).contains(&x) || (15..=16).contains(&y)
        }),
    );
    lib.insert(
        "house".into(),
        Mask::from_fn(S, S, |x, y| {
            let wall = y >= 12 && (x <= 1 || x >= S - 2 || y >= S - 2);
            let roof = y <= 12 && x.abs_diff(16).abs_diff(12 - y) <= 1;
            let door = (13..=18).contains(&x) && y >= 22 && (x == 13 || x == 18 || y == 22);
            wall || roof || door
        }),
    );
    lib.insert(
        "tree".into(),
        Mask::from_fn(S, S, |x, y| {
            let dx = x as f64 + 0.5 - 16.0;
            let dy = y as f64 + 0.5 - 11.0;
            let r = (dx * dx + dy * dy).sqrt();
            let crown = (9.0..=11.0).contains(&r);
            let trunk = (15..=16).contains(&x) && y >= 21;
            crown || trunk
        }),
    );
    lib
}
