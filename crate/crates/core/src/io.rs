//! File formats: image codecs for rasters, masks, depth and label maps, and
//! the JSON documents for detections and annotations.

use std::collections::BTreeMap;
use std::io::Cursor;

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma};
use serde::{Deserialize, Serialize};

use crate::depth::{DepthMap, LabelMap};
use crate::detection::{CandidateSet, Detection, InstanceId};
use crate::error::{Error, Result};
use crate::raster::{Mask, SketchRaster};
use crate::rect::Rect;
use crate::rle::{rle_encode, Rle};

/// PNG text keyword declaring which end of the depth range is near.
pub const DEPTH_CONVENTION_KEY: &str = "inklayer:depth-convention";
pub const DEPTH_NEAR_HIGH: &str = "near-high";

fn png_bytes(img: DynamicImage) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    img.write_to(&mut Cursor::new(&mut buf), ImageFormat::Png)?;
    Ok(buf)
}

pub fn encode_gray_png(r: &SketchRaster) -> Result<Vec<u8>> {
    let img = ImageBuffer::<Luma<u8>, _>::from_raw(
        r.width() as u32,
        r.height() as u32,
        r.data().to_vec(),
    )
    .ok_or_else(|| Error::Image("raster buffer size".into()))?;
    png_bytes(DynamicImage::ImageLuma8(img))
}

/// Decode any supported image to 8-bit gray.
pub fn decode_gray_png(bytes: &[u8]) -> Result<SketchRaster> {
    let img = image::load_from_memory(bytes)?.to_luma8();
    let (w, h) = img.dimensions();
    SketchRaster::from_raw(w as usize, h as usize, img.into_raw())
}

/// 0 = false, 255 = true.
pub fn encode_mask_png(m: &Mask) -> Result<Vec<u8>> {
    let data = m.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
    encode_gray_png(&SketchRaster::from_raw(m.width(), m.height(), data)?)
}

/// Any pixel at or above mid-gray is set.
pub fn decode_mask_png(bytes: &[u8]) -> Result<Mask> {
    let r = decode_gray_png(bytes)?;
    Mask::from_bits(
        r.width(),
        r.height(),
        r.data().iter().map(|&v| v >= 128).collect(),
    )
}

/// 16-bit gray PNG, pixel value = instance id.
pub fn encode_label_png(labels: &LabelMap) -> Result<Vec<u8>> {
    let data = labels
        .labels()
        .iter()
        .map(|&l| {
            u16::try_from(l).map_err(|_| Error::Image(format!("label {l} does not fit 16 bits")))
        })
        .collect::<Result<Vec<u16>>>()?;
    let img =
        ImageBuffer::<Luma<u16>, _>::from_raw(labels.width() as u32, labels.height() as u32, data)
            .ok_or_else(|| Error::Image("label buffer size".into()))?;
    png_bytes(DynamicImage::ImageLuma16(img))
}

pub fn decode_label_png(bytes: &[u8]) -> Result<LabelMap> {
    let img = image::load_from_memory(bytes)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let labels = match img {
        DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(u32::from).collect(),
        DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(u32::from).collect(),
        other => {
            return Err(Error::Image(format!(
                "label maps must be single-channel, got {:?}",
                other.color()
            )))
        }
    };
    LabelMap::from_raw(w, h, labels)
}

/// Visualization colors for a label map; 0 maps to white.
pub fn palette(labels: &LabelMap) -> BTreeMap<u32, [u8; 3]> {
    let mut out = BTreeMap::new();
    out.insert(0, [255, 255, 255]);
    for id in labels.ids() {
        out.insert(id, id_color(id));
    }
    out
}

fn id_color(id: u32) -> [u8; 3] {
    let mut h = id.wrapping_mul(0x9E37_79B9) ^ 0x5bd1_e995;
    h ^= h >> 15;
    h = h.wrapping_mul(0x2c1b_3c6d);
    h ^= h >> 12;
    // Keep colors away from white so instances stay visible.
    [
        (h & 0xbf) as u8,
        ((h >> 8) & 0xbf) as u8,
        ((h >> 16) & 0xbf) as u8,
    ]
}

pub fn palette_json(labels: &LabelMap) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(&palette(labels))?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// 16-bit gray PNG with the depth convention recorded in a text chunk.
pub fn encode_depth_png(depth: &DepthMap) -> Result<Vec<u8>> {
    let (w, h) = depth.dims();
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, w as u32, h as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Sixteen);
        enc.add_text_chunk(
            DEPTH_CONVENTION_KEY.to_string(),
            DEPTH_NEAR_HIGH.to_string(),
        )
        .map_err(|e| Error::Image(e.to_string()))?;
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Image(e.to_string()))?;
        let data: Vec<u8> = depth
            .values()
            .iter()
            .flat_map(|&v| ((v * 65535.0).round() as u16).to_be_bytes())
            .collect();
        writer
            .write_image_data(&data)
            .map_err(|e| Error::Image(e.to_string()))?;
    }
    Ok(buf)
}

/// Read an 8- or 16-bit single-channel depth PNG normalized to [0, 1].
///
/// A file that declares a convention other than near-high is rejected.
pub fn decode_depth_png(bytes: &[u8]) -> Result<DepthMap> {
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Image(e.to_string()))?;
    let declared = reader
        .info()
        .uncompressed_latin1_text
        .iter()
        .find(|t| t.keyword == DEPTH_CONVENTION_KEY)
        .map(|t| t.text.clone());
    if let Some(c) = declared {
        if c != DEPTH_NEAR_HIGH {
            return Err(Error::Image(format!(
                "depth map declares convention {c:?}; expected {DEPTH_NEAR_HIGH:?} (larger = nearer)"
            )));
        }
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Image("depth image too large".into()))?;
    let mut buf = vec![0; size];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Image(e.to_string()))?;
    if frame.color_type != png::ColorType::Grayscale {
        return Err(Error::Image(format!(
            "depth maps must be grayscale, got {:?}",
            frame.color_type
        )));
    }
    let (w, h) = (frame.width as usize, frame.height as usize);
    let values: Vec<f64> = match frame.bit_depth {
        png::BitDepth::Sixteen => buf[..w * h * 2]
            .chunks_exact(2)
            .map(|c| f64::from(u16::from_be_bytes([c[0], c[1]])) / 65535.0)
            .collect(),
        png::BitDepth::Eight => buf[..w * h].iter().map(|&v| f64::from(v) / 255.0).collect(),
        d => return Err(Error::Image(format!("unsupported depth bit depth {d:?}"))),
    };
    DepthMap::new(w, h, values)
}

/// Where a detection's candidate mask lives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSource {
    /// Path of an 8-bit mask image, relative to the document.
    MaskFile(String),
    /// Run-length text, see [`crate::rle`].
    MaskRle(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub id: InstanceId,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub confidence: f64,
    #[serde(flatten)]
    pub mask: MaskSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionsDoc {
    pub width: usize,
    pub height: usize,
    pub detections: Vec<DetectionRecord>,
}

impl DetectionsDoc {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        Ok(serde_json::from_slice(bytes)?)
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    /// Embed every mask as run-length text.
    pub fn from_candidates(set: &CandidateSet) -> Self {
        let (width, height) = set.dims();
        let detections = set
            .iter()
            .map(|(d, m)| DetectionRecord {
                id: d.id,
                x: d.bbox.x as f64,
                y: d.bbox.y as f64,
                w: d.bbox.w as f64,
                h: d.bbox.h as f64,
                confidence: d.confidence,
                mask: MaskSource::MaskRle(rle_encode(m).to_string()),
            })
            .collect();
        DetectionsDoc {
            width,
            height,
            detections,
        }
    }

    /// Resolve masks and clamp boxes to the canvas. `load_file` maps a
    /// `mask_file` reference to its bytes.
    pub fn into_candidates(
        self,
        mut load_file: impl FnMut(&str) -> Result<Vec<u8>>,
    ) -> Result<CandidateSet> {
        let (w, h) = (self.width, self.height);
        let mut dets = Vec::with_capacity(self.detections.len());
        let mut masks = Vec::with_capacity(self.detections.len());
        for r in self.detections {
            let bbox = Rect::from_f64_clamped(r.x, r.y, r.w, r.h, w, h).ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "detection {} has no area inside the {w}x{h} canvas",
                    r.id
                ))
            })?;
            let mask = match &r.mask {
                MaskSource::MaskFile(f) => decode_mask_png(&load_file(f)?)?,
                MaskSource::MaskRle(text) => Rle::parse_counts(w, h, text)?.decode()?,
            };
            if mask.dims() != (w, h) {
                return Err(Error::DimensionMismatch {
                    expected: (w, h),
                    actual: mask.dims(),
                });
            }
            dets.push(Detection {
                id: r.id,
                bbox,
                confidence: r.confidence,
            });
            masks.push(mask);
        }
        CandidateSet::new(w, h, dets, masks)
    }
}

/// One ground-truth or predicted instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedInstance {
    pub id: InstanceId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    #[serde(rename = "box")]
    pub bbox: Rect,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    /// Depth rank (ground truth) or depth score (prediction); larger = nearer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<f64>,
    pub mask_rle: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationDoc {
    pub width: usize,
    pub height: usize,
    pub instances: Vec<AnnotatedInstance>,
}

impl AnnotationDoc {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        Ok(serde_json::from_slice(bytes)?)
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    pub fn masks(&self) -> Result<Vec<Mask>> {
        self.instances
            .iter()
            .map(|i| Rle::parse_counts(self.width, self.height, &i.mask_rle)?.decode())
            .collect()
    }

    /// Label map painted in instance order.
    pub fn label_map(&self) -> Result<LabelMap> {
        let masks = self.masks()?;
        Ok(LabelMap::from_masks(
            self.width,
            self.height,
            self.instances.iter().map(|i| i.id).zip(masks.iter()),
        ))
    }
}
