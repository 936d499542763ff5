//! End-to-end run: binarize, clean, filter, refine by depth, layer.

use std::fmt;
use std::path::Path;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::depth::{
    finalize_segmentation, segment_without_refinement, DepthMap, DepthScore, LabelMap,
    RefineParams, UnreachableComponent, DEFAULT_DEPTH_BINS, DEFAULT_WATERSHED_BRIDGE,
};
use crate::detection::{
    clean_mask, filter_detections, CandidateSet, InstanceId, Suppression, DEFAULT_CLEANUP_RADIUS,
    DEFAULT_OVERLAP_THRESHOLD,
};
use crate::error::Error;
use crate::inpaint::{backend_from, InpaintBackend};
use crate::io::{self, AnnotatedInstance, AnnotationDoc, DetectionsDoc};
use crate::layering::{complete_stack, composite, decompose, LayerStack};
use crate::raster::{binarize, SketchRaster, DEFAULT_BINARIZE_THRESHOLD};
use crate::rle::rle_encode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub overlap_threshold: f64,
    pub cleanup_radius: usize,
    pub depth_bins: usize,
    /// `None` = max(1024, ink / 16).
    pub sample_points: Option<usize>,
    pub binarize_threshold: u8,
    /// Falls back to the environment, then to the null backend.
    pub inpaint_backend: Option<String>,
    pub inpaint_timeout_ms: u64,
    pub max_in_flight: usize,
    /// Off = confidence-ordered assignment with no depth and no flood.
    pub depth_refinement: bool,
    pub watershed_bridge: f64,
    /// Size of the worker pool for parallel stages; `None` = rayon default.
    pub threads: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            overlap_threshold: DEFAULT_OVERLAP_THRESHOLD,
            cleanup_radius: DEFAULT_CLEANUP_RADIUS,
            depth_bins: DEFAULT_DEPTH_BINS,
            sample_points: None,
            binarize_threshold: DEFAULT_BINARIZE_THRESHOLD,
            inpaint_backend: None,
            inpaint_timeout_ms: 30_000,
            max_in_flight: 4,
            depth_refinement: true,
            watershed_bridge: DEFAULT_WATERSHED_BRIDGE,
            threads: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |msg: String| {
            Err(PipelineError::new(
                Stage::Config,
                Error::InvalidArgument(msg),
            ))
        };
        if !(self.overlap_threshold > 0.0 && self.overlap_threshold <= 1.0) {
            return bad(format!(
                "overlap threshold {} outside (0, 1]",
                self.overlap_threshold
            ));
        }
        if self.depth_bins < 2 {
            return bad(format!("depth bins {} below 2", self.depth_bins));
        }
        if self.sample_points == Some(0) {
            return bad("sample points must be at least 1".into());
        }
        if self.watershed_bridge.is_nan() || self.watershed_bridge < 0.0 {
            return bad(format!(
                "watershed bridge {} is negative",
                self.watershed_bridge
            ));
        }
        if self.threads == Some(0) {
            return bad("thread count must be at least 1".into());
        }
        Ok(())
    }

    pub fn backend(&self) -> Box<dyn InpaintBackend> {
        backend_from(
            self.inpaint_backend.as_deref(),
            Duration::from_millis(self.inpaint_timeout_ms),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Sketch,
    Detections,
    Depth,
    Binarize,
    Clean,
    Filter,
    Refine,
    Layering,
    Output,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Config => "config",
            Stage::Sketch => "sketch",
            Stage::Detections => "detections",
            Stage::Depth => "depth",
            Stage::Binarize => "binarize",
            Stage::Clean => "clean",
            Stage::Filter => "filter",
            Stage::Refine => "refine",
            Stage::Layering => "layering",
            Stage::Output => "output",
        };
        f.write_str(name)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} stage: {error}")]
pub struct PipelineError {
    pub stage: Stage,
    pub error: Error,
}

impl PipelineError {
    pub fn new(stage: Stage, error: Error) -> Self {
        PipelineError { stage, error }
    }
}

trait StageExt<T> {
    fn at(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T> StageExt<T> for crate::Result<T> {
    fn at(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError::new(stage, e))
    }
}

/// Decoded artifacts for one run.
#[derive(Debug, Clone)]
pub struct PipelineInputs {
    pub sketch: SketchRaster,
    pub candidates: CandidateSet,
    /// Required when depth refinement is on.
    pub depth: Option<DepthMap>,
}

impl PipelineInputs {
    /// Decode encoded artifacts. `load_mask` resolves mask file names used
    /// by the detections document.
    pub fn decode(
        sketch_png: &[u8],
        detections_json: &[u8],
        depth_png: Option<&[u8]>,
        load_mask: impl FnMut(&str) -> crate::Result<Vec<u8>>,
    ) -> Result<Self, PipelineError> {
        let sketch = io::decode_gray_png(sketch_png).at(Stage::Sketch)?;
        let doc = DetectionsDoc::from_json(detections_json).at(Stage::Detections)?;
        let candidates = doc.into_candidates(load_mask).at(Stage::Detections)?;
        let depth = depth_png
            .map(io::decode_depth_png)
            .transpose()
            .at(Stage::Depth)?;
        Ok(PipelineInputs {
            sketch,
            candidates,
            depth,
        })
    }

    /// Read artifacts from disk; mask files resolve next to the detections file.
    pub fn load(
        sketch: &Path,
        detections: &Path,
        depth: Option<&Path>,
    ) -> Result<Self, PipelineError> {
        let sketch_bytes = std::fs::read(sketch)
            .map_err(Error::from)
            .at(Stage::Sketch)?;
        let det_bytes = std::fs::read(detections)
            .map_err(Error::from)
            .at(Stage::Detections)?;
        let depth_bytes = depth
            .map(std::fs::read)
            .transpose()
            .map_err(Error::from)
            .at(Stage::Depth)?;
        let base = detections.parent().unwrap_or(Path::new(".")).to_path_buf();
        Self::decode(&sketch_bytes, &det_bytes, depth_bytes.as_deref(), |name| {
            Ok(std::fs::read(base.join(name))?)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub width: usize,
    pub height: usize,
    pub ink_pixels: usize,
    pub labeled_pixels: usize,
    pub input_detections: usize,
    pub kept: Vec<InstanceId>,
    pub suppressed: Vec<Suppression>,
    pub depth_refinement: bool,
    pub depth_scores: Vec<DepthScore>,
    pub undersampled: Vec<InstanceId>,
    pub unreachable: Vec<UnreachableComponent>,
    pub unreachable_pixels: usize,
    /// Kept instances that ended up owning no pixel, hence no layer.
    pub empty_instances: Vec<InstanceId>,
    pub stubbed_layers: Vec<InstanceId>,
    pub incomplete_layers: Vec<InstanceId>,
}

impl RunReport {
    pub fn suppressed_ids(&self) -> Vec<InstanceId> {
        let mut ids: Vec<_> = self.suppressed.iter().map(|s| s.id).collect();
        ids.sort_unstable();
        ids
    }

    pub fn to_json(&self) -> crate::Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub labels: LabelMap,
    pub stack: LayerStack,
    pub composite: SketchRaster,
    /// Kept candidates after cleanup and filtering.
    pub kept: CandidateSet,
    pub report: RunReport,
}

impl PipelineOutput {
    /// Predictions as an annotation document (box, confidence, depth score,
    /// final owned pixels) for the `eval` command.
    pub fn prediction_doc(&self) -> AnnotationDoc {
        let (width, height) = self.labels.dims();
        let instances = self
            .kept
            .detections()
            .iter()
            .map(|d| AnnotatedInstance {
                id: d.id,
                key: None,
                bbox: d.bbox,
                confidence: Some(d.confidence),
                depth: self
                    .report
                    .depth_scores
                    .iter()
                    .find(|s| s.id == d.id)
                    .map(|s| s.score),
                mask_rle: rle_encode(&self.labels.mask_of(d.id)).to_string(),
            })
            .collect();
        AnnotationDoc {
            width,
            height,
            instances,
        }
    }

    /// Named output files, byte-for-byte what [`write_outputs`] stores.
    pub fn files(&self) -> crate::Result<Vec<(String, Vec<u8>)>> {
        let mut out = vec![
            ("labels.png".to_owned(), io::encode_label_png(&self.labels)?),
            ("palette.json".to_owned(), io::palette_json(&self.labels)?),
            (
                "segmentation.json".to_owned(),
                self.prediction_doc().to_json()?,
            ),
            ("report.json".to_owned(), self.report.to_json()?),
            (
                "composite.png".to_owned(),
                io::encode_gray_png(&self.composite)?,
            ),
            (
                "layers/manifest.json".to_owned(),
                self.stack.manifest_json()?,
            ),
        ];
        for (name, bytes) in self.stack.assets()? {
            out.push((format!("layers/{name}"), bytes));
        }
        Ok(out)
    }
}

pub fn write_outputs(out: &PipelineOutput, dir: &Path) -> Result<(), PipelineError> {
    let write = || -> crate::Result<()> {
        std::fs::create_dir_all(dir.join("layers"))?;
        for (name, bytes) in out.files()? {
            std::fs::write(dir.join(name), bytes)?;
        }
        Ok(())
    };
    write().at(Stage::Output)
}

/// Run every stage. Parallel stages use a pool of `config.threads` workers;
/// results do not depend on the pool size.
pub fn run_pipeline(
    inputs: &PipelineInputs,
    config: &PipelineConfig,
    backend: &dyn InpaintBackend,
) -> Result<PipelineOutput, PipelineError> {
    config.validate()?;
    match config.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| {
                    PipelineError::new(Stage::Config, Error::InvalidArgument(e.to_string()))
                })?;
            pool.install(|| run_stages(inputs, config, backend))
        }
        None => run_stages(inputs, config, backend),
    }
}

fn run_stages(
    inputs: &PipelineInputs,
    config: &PipelineConfig,
    backend: &dyn InpaintBackend,
) -> Result<PipelineOutput, PipelineError> {
    let set = &inputs.candidates;
    if inputs.sketch.dims() != set.dims() {
        return Err(PipelineError::new(
            Stage::Detections,
            Error::DimensionMismatch {
                expected: inputs.sketch.dims(),
                actual: set.dims(),
            },
        ));
    }
    let depth = match (&inputs.depth, config.depth_refinement) {
        (Some(d), _) if d.dims() != set.dims() => {
            return Err(PipelineError::new(
                Stage::Depth,
                Error::DimensionMismatch {
                    expected: set.dims(),
                    actual: d.dims(),
                },
            ))
        }
        (None, true) => {
            return Err(PipelineError::new(
                Stage::Depth,
                Error::InvalidArgument(
                    "a depth map is required when depth refinement is on".into(),
                ),
            ))
        }
        (d, _) => d.as_ref(),
    };

    let ink = binarize(&inputs.sketch, config.binarize_threshold);
    if ink.is_empty() {
        return Err(PipelineError::new(Stage::Binarize, Error::EmptyInk));
    }
    let cleaned = set
        .masks()
        .par_iter()
        .map(|m| clean_mask(m, config.cleanup_radius))
        .collect();
    let cleaned = set.with_masks(cleaned).at(Stage::Clean)?;
    let filtered = filter_detections(&cleaned, &ink, config.overlap_threshold).at(Stage::Filter)?;
    let kept = filtered.kept;

    let seg = match depth {
        Some(d) if config.depth_refinement => {
            let params = RefineParams {
                sample_points: config.sample_points,
                bins: config.depth_bins,
                bridge: config.watershed_bridge,
            };
            finalize_segmentation(&kept, d, &ink, &params)
        }
        _ => segment_without_refinement(&kept, &ink),
    }
    .at(Stage::Refine)?;

    let (stack, empty_instances) = decompose(&kept, &seg, &ink).at(Stage::Layering)?;
    let stack = complete_stack(stack, backend, config.max_in_flight);
    let composite = composite(&stack);

    let report = RunReport {
        width: set.dims().0,
        height: set.dims().1,
        ink_pixels: ink.count(),
        labeled_pixels: seg.labels.labeled_count(),
        input_detections: set.len(),
        kept: kept.detections().iter().map(|d| d.id).collect(),
        suppressed: filtered.suppressed,
        depth_refinement: config.depth_refinement,
        depth_scores: seg.scores.clone(),
        undersampled: seg.undersampled.clone(),
        unreachable_pixels: seg.unreachable.iter().map(|c| c.pixels).sum(),
        unreachable: seg.unreachable.clone(),
        empty_instances,
        stubbed_layers: stack
            .layers
            .iter()
            .filter(|l| l.stubbed)
            .map(|l| l.id)
            .collect(),
        incomplete_layers: stack
            .layers
            .iter()
            .filter(|l| l.incomplete)
            .map(|l| l.id)
            .collect(),
    };
    Ok(PipelineOutput {
        labels: seg.labels,
        stack,
        composite,
        kept,
        report,
    })
}
