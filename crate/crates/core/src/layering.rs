//! Depth-ordered layer stacks built from a finished segmentation.
//!
//! Each layer holds the ink its instance owns plus an inpainting region:
//! the union of every other candidate mask that touches it, clipped to the
//! instance's box. Completion of that region is delegated to an
//! [`InpaintBackend`]; the null backend leaves it blank and flags the layer.

use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::depth::{claim_order, DepthScore, LabelMap, Segmentation};
use crate::detection::{CandidateSet, InstanceId};
use crate::error::{Error, Result};
use crate::inpaint::{InpaintBackend, InpaintRequest};
use crate::io;
use crate::raster::{InkMask, InstanceMask, Mask, SketchRaster};
use crate::rect::Rect;

/// Pixels labeled `id`.
pub fn isolate_layer(id: InstanceId, labels: &LabelMap, ink: &InkMask) -> Result<InstanceMask> {
    if labels.dims() != ink.dims() {
        return Err(Error::DimensionMismatch {
            expected: labels.dims(),
            actual: ink.dims(),
        });
    }
    let m = labels.mask_of(id);
    if m.is_empty() {
        return Err(Error::UnknownId(id));
    }
    Ok(m)
}

/// Ids of the other masks that share at least one pixel with mask `id`.
pub fn intersecting_group(
    id: InstanceId,
    masks: &[(InstanceId, &InstanceMask)],
) -> Result<Vec<InstanceId>> {
    let own = masks
        .iter()
        .find(|(j, _)| *j == id)
        .ok_or(Error::UnknownId(id))?
        .1;
    Ok(masks
        .iter()
        .filter(|(j, m)| *j != id && m.intersects(own))
        .map(|(j, _)| *j)
        .collect())
}

/// Union of the intersecting group, restricted to `bbox`.
pub fn build_inpaint_region(
    id: InstanceId,
    masks: &[(InstanceId, &InstanceMask)],
    bbox: Rect,
) -> Result<InstanceMask> {
    let own = masks
        .iter()
        .find(|(j, _)| *j == id)
        .ok_or(Error::UnknownId(id))?
        .1;
    let (w, h) = own.dims();
    if !bbox.within(w, h) {
        return Err(Error::InvalidArgument(format!(
            "box {bbox:?} leaves the {w}x{h} canvas"
        )));
    }
    let group = intersecting_group(id, masks)?;
    let mut region = Mask::new(w, h);
    for (j, m) in masks {
        if group.contains(j) {
            region = region.or(m)?;
        }
    }
    Ok(region.clip_to(&bbox))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub id: InstanceId,
    /// Isolated object pixels, canvas-sized.
    pub ink: InstanceMask,
    /// Canvas-sized region, always inside `bbox`.
    pub inpaint_region: InstanceMask,
    pub bbox: Rect,
    pub depth: DepthScore,
    /// Pixel count of the candidate mask, used to order equal-depth layers.
    pub area: usize,
    /// Box-sized completion, when a backend produced one.
    pub completed: Option<SketchRaster>,
    /// The region was left blank by the null backend.
    pub stubbed: bool,
    /// The backend failed; the layer falls back to its raw ink.
    pub incomplete: bool,
    /// Translation applied when compositing.
    pub offset: (i64, i64),
}

impl Layer {
    /// The layer's ink rendered black on white over its box.
    pub fn ink_crop(&self) -> SketchRaster {
        let b = self.bbox;
        let mut r = SketchRaster::white(b.w, b.h).expect("boxes are nonempty");
        for y in 0..b.h {
            for x in 0..b.w {
                if self.ink.get(b.x + x, b.y + y) {
                    r.set(x, y, 0);
                }
            }
        }
        r
    }

    pub fn region_crop(&self) -> Mask {
        let b = self.bbox;
        Mask::from_fn(b.w, b.h, |x, y| self.inpaint_region.get(b.x + x, b.y + y))
    }

    pub fn translate(&mut self, dx: i64, dy: i64) {
        self.offset.0 += dx;
        self.offset.1 += dy;
    }

    fn sort_key(&self) -> (usize, usize, InstanceId) {
        (self.depth.bin, self.area, self.id)
    }
}

/// Back-to-front: farther layers first. The front-most layer among equal
/// depths is the one that wins ambiguous pixels during overlap resolution.
fn back_to_front(a: &Layer, b: &Layer) -> Ordering {
    claim_order(b.sort_key(), a.sort_key())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    pub width: usize,
    pub height: usize,
    /// Back to front.
    pub layers: Vec<Layer>,
}

impl LayerStack {
    pub fn new(width: usize, height: usize, mut layers: Vec<Layer>) -> Self {
        layers.sort_by(back_to_front);
        LayerStack {
            width,
            height,
            layers,
        }
    }

    pub fn ids(&self) -> Vec<InstanceId> {
        self.layers.iter().map(|l| l.id).collect()
    }

    pub fn get_mut(&mut self, id: InstanceId) -> Option<&mut Layer> {
        self.layers.iter_mut().find(|l| l.id == id)
    }

    pub fn remove(&mut self, id: InstanceId) -> Result<Layer> {
        let pos = self
            .layers
            .iter()
            .position(|l| l.id == id)
            .ok_or(Error::UnknownId(id))?;
        Ok(self.layers.remove(pos))
    }

    pub fn move_to_back(&mut self, id: InstanceId) -> Result<()> {
        let l = self.remove(id)?;
        self.layers.insert(0, l);
        Ok(())
    }

    pub fn move_to_front(&mut self, id: InstanceId) -> Result<()> {
        let l = self.remove(id)?;
        self.layers.push(l);
        Ok(())
    }
}

/// Build one layer per instance that owns at least one labeled pixel.
/// Instances left without pixels are returned separately.
pub fn decompose(
    set: &CandidateSet,
    seg: &Segmentation,
    ink: &InkMask,
) -> Result<(LayerStack, Vec<InstanceId>)> {
    let (w, h) = set.dims();
    let pairs: Vec<(InstanceId, &InstanceMask)> = set.iter().map(|(d, m)| (d.id, m)).collect();
    let mut layers = Vec::new();
    let mut empty = Vec::new();
    for (d, m) in set.iter() {
        let layer_ink = match isolate_layer(d.id, &seg.labels, ink) {
            Ok(li) => li,
            Err(Error::UnknownId(_)) => {
                empty.push(d.id);
                continue;
            }
            Err(e) => return Err(e),
        };
        let depth = *seg
            .scores
            .iter()
            .find(|s| s.id == d.id)
            .ok_or(Error::UnknownId(d.id))?;
        layers.push(Layer {
            id: d.id,
            ink: layer_ink,
            inpaint_region: build_inpaint_region(d.id, &pairs, d.bbox)?,
            bbox: d.bbox,
            depth,
            area: m.count(),
            completed: None,
            stubbed: false,
            incomplete: false,
            offset: (0, 0),
        });
    }
    Ok((LayerStack::new(w, h, layers), empty))
}

/// Fill one layer's inpainting region through `backend`.
pub fn complete_layer(mut layer: Layer, backend: &dyn InpaintBackend) -> Layer {
    let ink = layer.ink_crop();
    let region = layer.region_crop();
    if backend.is_null() || region.is_empty() {
        layer.stubbed = !region.is_empty();
        layer.incomplete = false;
        layer.completed = Some(ink);
        return layer;
    }
    let req = InpaintRequest {
        id: layer.id,
        bbox: layer.bbox,
        layer: &ink,
        region: &region,
    };
    match backend.inpaint(&req) {
        Ok(done) if done.dims() == (layer.bbox.w, layer.bbox.h) => {
            layer.completed = Some(done);
            layer.stubbed = false;
            layer.incomplete = false;
        }
        Ok(done) => {
            log::warn!(
                "layer {}: backend returned {:?}, expected box size",
                layer.id,
                done.dims()
            );
            layer.completed = None;
            layer.incomplete = true;
        }
        Err(e) => {
            log::warn!("layer {}: inpainting failed: {e}", layer.id);
            layer.completed = None;
            layer.incomplete = true;
        }
    }
    layer
}

/// Complete every layer, keeping at most `max_in_flight` backend calls open.
pub fn complete_stack(
    stack: LayerStack,
    backend: &dyn InpaintBackend,
    max_in_flight: usize,
) -> LayerStack {
    let LayerStack {
        width,
        height,
        layers,
    } = stack;
    let mut done = Vec::with_capacity(layers.len());
    let mut pending = layers.into_iter().peekable();
    while pending.peek().is_some() {
        let batch: Vec<Layer> = pending.by_ref().take(max_in_flight.max(1)).collect();
        let finished: Vec<Layer> = std::thread::scope(|s| {
            let handles: Vec<_> = batch
                .into_iter()
                .map(|l| s.spawn(move || complete_layer(l, backend)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("inpainting worker panicked"))
                .collect()
        });
        done.extend(finished);
    }
    LayerStack {
        width,
        height,
        layers: done,
    }
}

/// Painter's algorithm, back to front, onto a white canvas.
///
/// A layer paints its ink pixels and, when its region was really completed,
/// the non-white region pixels too: paper white in a completion is
/// transparent, so it never erases layers behind it. Values come from the
/// completed raster inside the box and are black elsewhere.
pub fn composite(stack: &LayerStack) -> SketchRaster {
    let mut canvas =
        SketchRaster::white(stack.width, stack.height).expect("stack canvas is nonempty");
    let (w, h) = (stack.width as i64, stack.height as i64);
    for layer in &stack.layers {
        let paint_region = layer.completed.is_some() && !layer.stubbed && !layer.incomplete;
        let b = layer.bbox;
        for (i, &is_ink) in layer.ink.bits().iter().enumerate() {
            let (x, y) = (i % stack.width, i / stack.width);
            let in_region = paint_region && layer.inpaint_region.get_index(i);
            if !is_ink && !in_region {
                continue;
            }
            let value = match &layer.completed {
                Some(c) if b.contains(x, y) => c.get(x - b.x, y - b.y),
                _ => 0,
            };
            if !is_ink && value == 255 {
                continue;
            }
            let tx = x as i64 + layer.offset.0;
            let ty = y as i64 + layer.offset.1;
            if tx >= 0 && ty >= 0 && tx < w && ty < h {
                canvas.set(tx as usize, ty as usize, value);
            }
        }
    }
    canvas
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub id: InstanceId,
    /// Position in the stack, 0 = back.
    pub order: usize,
    pub bbox: Rect,
    pub depth: DepthScore,
    pub area: usize,
    pub ink_pixels: usize,
    pub stubbed: bool,
    pub incomplete: bool,
    pub offset: (i64, i64),
    pub ink_file: String,
    pub region_file: String,
    pub completed_file: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackManifest {
    pub width: usize,
    pub height: usize,
    pub layers: Vec<LayerEntry>,
}

pub fn ink_file_name(id: InstanceId) -> String {
    format!("layer_{id:05}_ink.png")
}

pub fn region_file_name(id: InstanceId) -> String {
    format!("layer_{id:05}_region.png")
}

pub fn completed_file_name(id: InstanceId) -> String {
    format!("layer_{id:05}_completed.png")
}

impl LayerStack {
    pub fn manifest(&self) -> StackManifest {
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(order, l)| LayerEntry {
                id: l.id,
                order,
                bbox: l.bbox,
                depth: l.depth,
                area: l.area,
                ink_pixels: l.ink.count(),
                stubbed: l.stubbed,
                incomplete: l.incomplete,
                offset: l.offset,
                ink_file: ink_file_name(l.id),
                region_file: region_file_name(l.id),
                completed_file: l.completed.as_ref().map(|_| completed_file_name(l.id)),
            })
            .collect();
        StackManifest {
            width: self.width,
            height: self.height,
            layers,
        }
    }

    /// Encoded assets keyed by file name, in manifest order.
    pub fn assets(&self) -> Result<Vec<(String, Vec<u8>)>> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push((ink_file_name(l.id), io::encode_mask_png(&l.ink)?));
            out.push((
                region_file_name(l.id),
                io::encode_mask_png(&l.inpaint_region)?,
            ));
            if let Some(c) = &l.completed {
                out.push((completed_file_name(l.id), io::encode_gray_png(c)?));
            }
        }
        Ok(out)
    }

    pub fn manifest_json(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(&self.manifest())?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    /// Write `manifest.json` plus per-layer images into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("manifest.json"), self.manifest_json()?)?;
        for (name, bytes) in self.assets()? {
            std::fs::write(dir.join(name), bytes)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<LayerStack> {
        let manifest: StackManifest =
            serde_json::from_slice(&std::fs::read(dir.join("manifest.json"))?)?;
        let mut layers = Vec::with_capacity(manifest.layers.len());
        let mut entries = manifest.layers.clone();
        entries.sort_by_key(|e| e.order);
        for e in entries {
            let ink = io::decode_mask_png(&std::fs::read(dir.join(&e.ink_file))?)?;
            let inpaint_region = io::decode_mask_png(&std::fs::read(dir.join(&e.region_file))?)?;
            let completed = match &e.completed_file {
                Some(f) => Some(io::decode_gray_png(&std::fs::read(dir.join(f))?)?),
                None => None,
            };
            layers.push(Layer {
                id: e.id,
                ink,
                inpaint_region,
                bbox: e.bbox,
                depth: e.depth,
                area: e.area,
                completed,
                stubbed: e.stubbed,
                incomplete: e.incomplete,
                offset: e.offset,
            });
        }
        Ok(LayerStack {
            width: manifest.width,
            height: manifest.height,
            layers,
        })
    }
}
