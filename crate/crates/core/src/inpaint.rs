//! Inpainting backends.
//!
//! The HTTP backend posts a JSON body
//! `{"id", "box": {x, y, w, h}, "layer_png", "region_png"}` where both images
//! are base64 PNGs cropped to the box (the layer as 8-bit gray, the region as
//! a 0/255 mask) and expects `{"completed_png": <base64 gray PNG>}` back, of
//! the same size as the box.

use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::detection::InstanceId;
use crate::error::{Error, Result};
use crate::io;
use crate::raster::{Mask, SketchRaster};
use crate::rect::Rect;

pub const INPAINT_URL_ENV: &str = "INKLAYER_INPAINT_URL";

pub struct InpaintRequest<'a> {
    pub id: InstanceId,
    pub bbox: Rect,
    /// Layer ink over the box, black on white.
    pub layer: &'a SketchRaster,
    /// Region to complete, box-sized.
    pub region: &'a Mask,
}

pub trait InpaintBackend: Send + Sync {
    /// Return a box-sized raster with the region filled in.
    fn inpaint(&self, req: &InpaintRequest<'_>) -> Result<SketchRaster>;

    /// The null backend never completes anything.
    fn is_null(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NullBackend;

impl InpaintBackend for NullBackend {
    fn inpaint(&self, req: &InpaintRequest<'_>) -> Result<SketchRaster> {
        Ok(req.layer.clone())
    }

    fn is_null(&self) -> bool {
        true
    }
}

#[derive(Serialize, Deserialize)]
pub struct WireRequest {
    pub id: InstanceId,
    #[serde(rename = "box")]
    pub bbox: Rect,
    pub layer_png: String,
    pub region_png: String,
}

#[derive(Serialize, Deserialize)]
pub struct WireResponse {
    pub completed_png: String,
}

impl WireRequest {
    pub fn encode(req: &InpaintRequest<'_>) -> Result<Self> {
        Ok(WireRequest {
            id: req.id,
            bbox: req.bbox,
            layer_png: B64.encode(io::encode_gray_png(req.layer)?),
            region_png: B64.encode(io::encode_mask_png(req.region)?),
        })
    }

    pub fn layer(&self) -> Result<SketchRaster> {
        io::decode_gray_png(
            &B64.decode(&self.layer_png)
                .map_err(|e| Error::Backend(e.to_string()))?,
        )
    }

    pub fn region(&self) -> Result<Mask> {
        io::decode_mask_png(
            &B64.decode(&self.region_png)
                .map_err(|e| Error::Backend(e.to_string()))?,
        )
    }
}

impl WireResponse {
    pub fn encode(completed: &SketchRaster) -> Result<Self> {
        Ok(WireResponse {
            completed_png: B64.encode(io::encode_gray_png(completed)?),
        })
    }

    pub fn completed(&self) -> Result<SketchRaster> {
        io::decode_gray_png(
            &B64.decode(&self.completed_png)
                .map_err(|e| Error::Backend(e.to_string()))?,
        )
    }
}

pub struct HttpBackend {
    url: String,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        HttpBackend {
            url: url.into(),
            agent,
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

impl InpaintBackend for HttpBackend {
    fn inpaint(&self, req: &InpaintRequest<'_>) -> Result<SketchRaster> {
        let body = WireRequest::encode(req)?;
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(&body)
            .map_err(|e| Error::Backend(format!("{}: {e}", self.url)))?;
        let wire: WireResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| Error::Backend(e.to_string()))?;
        wire.completed()
    }
}

/// Backend selected by an explicit URL, else the environment, else null.
pub fn backend_from(url: Option<&str>, timeout: Duration) -> Box<dyn InpaintBackend> {
    let env = std::env::var(INPAINT_URL_ENV).ok();
    match url.map(str::to_owned).or(env).filter(|u| !u.is_empty()) {
        Some(u) => Box::new(HttpBackend::new(u, timeout)),
        None => Box::new(NullBackend),
    }
}
