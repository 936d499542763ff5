//! C ABI for inklayer.
//!
//! Every fallible function returns an [`InklayerStatus`]; on failure the
//! message is kept per thread and read with [`inklayer_last_error`].
//! Pipeline results live behind the opaque [`InklayerResult`] handle, which
//! the caller releases with [`inklayer_result_free`]. Strings returned by the
//! library are released with [`inklayer_string_free`].
//!
//! # Safety
//!
//! Pointers must be null or valid for the stated length. Null is reported
//! as [`InklayerStatus::NullPointer`], never dereferenced.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use inklayer::depth::DepthMap;
use inklayer::detection::Detection;
use inklayer::inpaint::NullBackend;
use inklayer::io::DetectionsDoc;
use inklayer::pipeline::{run_pipeline, PipelineConfig, PipelineInputs, PipelineOutput};
use inklayer::raster::{Mask, SketchRaster};
use inklayer::rect::Rect;
use inklayer::{eval, rle};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InklayerStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// The pipeline rejected its inputs; the message names the stage.
    PipelineError = 3,
    BufferTooSmall = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct InklayerConfig {
    pub overlap_threshold: f64,
    pub cleanup_radius: u32,
    pub depth_bins: u32,
    /// 0 picks the count from the ink area.
    pub sample_points: u32,
    pub binarize_threshold: u8,
    pub depth_refinement: bool,
    pub watershed_bridge: f64,
    /// 0 uses the default pool.
    pub threads: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InklayerRect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

/// Opaque pipeline output.
pub struct InklayerResult {
    out: PipelineOutput,
    report_json: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(InklayerStatus, String);

impl Failure {
    fn null(what: &str) -> Self {
        Failure(InklayerStatus::NullPointer, format!("{what} is null"))
    }

    fn invalid(msg: impl Into<String>) -> Self {
        Failure(InklayerStatus::InvalidArgument, msg.into())
    }
}

impl From<inklayer::Error> for Failure {
    fn from(e: inklayer::Error) -> Self {
        Failure::invalid(e.to_string())
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nuls were replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Run `f`, recording any failure or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> InklayerStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => InklayerStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            InklayerStatus::Panic
        }
    }
}

unsafe fn slice_in<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if p.is_null() {
        return Err(Failure::null(what));
    }
    Ok(unsafe { slice::from_raw_parts(p, len) })
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    unsafe { p.as_mut() }.ok_or_else(|| Failure::null(what))
}

unsafe fn result_ref<'a>(r: *const InklayerResult) -> Result<&'a InklayerResult, Failure> {
    unsafe { r.as_ref() }.ok_or_else(|| Failure::null("result"))
}

fn copy_out<T: Copy>(src: &[T], dst: *mut T, cap: usize) -> Result<(), Failure> {
    if dst.is_null() {
        return Err(Failure::null("output buffer"));
    }
    if cap < src.len() {
        return Err(Failure(
            InklayerStatus::BufferTooSmall,
            format!("buffer holds {cap}, need {}", src.len()),
        ));
    }
    unsafe { ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len()) };
    Ok(())
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s)
        .map(CString::into_raw)
        .unwrap_or(ptr::null_mut())
}

impl From<&InklayerConfig> for PipelineConfig {
    fn from(c: &InklayerConfig) -> Self {
        let nonzero = |v: u32| (v > 0).then_some(v as usize);
        PipelineConfig {
            overlap_threshold: c.overlap_threshold,
            cleanup_radius: c.cleanup_radius as usize,
            depth_bins: c.depth_bins as usize,
            sample_points: nonzero(c.sample_points),
            binarize_threshold: c.binarize_threshold,
            depth_refinement: c.depth_refinement,
            watershed_bridge: c.watershed_bridge,
            threads: nonzero(c.threads),
            ..PipelineConfig::default()
        }
    }
}

/// Message of the last failed call on this thread, or null. Owned by the
/// library and valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn inklayer_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn inklayer_config_default() -> InklayerConfig {
    let d = PipelineConfig::default();
    InklayerConfig {
        overlap_threshold: d.overlap_threshold,
        cleanup_radius: d.cleanup_radius as u32,
        depth_bins: d.depth_bins as u32,
        sample_points: d.sample_points.unwrap_or(0) as u32,
        binarize_threshold: d.binarize_threshold,
        depth_refinement: d.depth_refinement,
        watershed_bridge: d.watershed_bridge,
        threads: d.threads.unwrap_or(0) as u32,
    }
}

/// Segment a sketch and build its layer stack with the null inpainting
/// backend.
///
/// `sketch` is `width * height` gray values, row-major, dark = ink.
/// `depth` is `width * height` values, larger = nearer, or null when
/// refinement is off. `detections_json` is a detections document whose
/// masks are embedded as run-length codes. A null `config` uses defaults.
///
/// # Safety
///
/// Buffers must hold `width * height` elements; `detections_json` must be a
/// nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn inklayer_run(
    sketch: *const u8,
    depth: *const f32,
    width: u32,
    height: u32,
    detections_json: *const c_char,
    config: *const InklayerConfig,
    out: *mut *mut InklayerResult,
) -> InklayerStatus {
    guard(|| {
        let out = unsafe { out_ref(out, "out") }?;
        *out = ptr::null_mut();
        let (w, h) = (width as usize, height as usize);
        let n = w
            .checked_mul(h)
            .ok_or_else(|| Failure::invalid("canvas size overflows"))?;
        let sketch =
            SketchRaster::from_raw(w, h, unsafe { slice_in(sketch, n, "sketch") }?.to_vec())?;
        let depth = if depth.is_null() {
            None
        } else {
            let values = unsafe { slice_in(depth, n, "depth") }?
                .iter()
                .map(|&v| f64::from(v))
                .collect();
            Some(DepthMap::new(w, h, values)?)
        };
        if detections_json.is_null() {
            return Err(Failure::null("detections_json"));
        }
        let json = unsafe { CStr::from_ptr(detections_json) }.to_bytes();
        let candidates = DetectionsDoc::from_json(json)?.into_candidates(|name| {
            Err(inklayer::Error::InvalidArgument(format!(
                "mask file {name:?}: embed masks as run-length codes"
            )))
        })?;
        let config = unsafe { config.as_ref() }
            .map(PipelineConfig::from)
            .unwrap_or_default();
        let inputs = PipelineInputs {
            sketch,
            candidates,
            depth,
        };
        let result = run_pipeline(&inputs, &config, &NullBackend)
            .map_err(|e| Failure(InklayerStatus::PipelineError, e.to_string()))?;
        let report_json = String::from_utf8(result.report.to_json()?)
            .map_err(|e| Failure::invalid(e.to_string()))?;
        let report_json = CString::new(report_json).map_err(|e| Failure::invalid(e.to_string()))?;
        *out = Box::into_raw(Box::new(InklayerResult {
            out: result,
            report_json,
        }));
        Ok(())
    })
}

/// # Safety
///
/// `result` must come from [`inklayer_run`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn inklayer_result_free(result: *mut InklayerResult) {
    if !result.is_null() {
        drop(unsafe { Box::from_raw(result) });
    }
}

/// # Safety
///
/// `result` must be a live handle; out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn inklayer_result_dims(
    result: *const InklayerResult,
    width: *mut u32,
    height: *mut u32,
) -> InklayerStatus {
    guard(|| {
        let r = unsafe { result_ref(result) }?;
        let (w, h) = r.out.labels.dims();
        *unsafe { out_ref(width, "width") }? = w as u32;
        *unsafe { out_ref(height, "height") }? = h as u32;
        Ok(())
    })
}

/// Copy the per-pixel instance ids (0 = unlabeled) into `labels`.
///
/// # Safety
///
/// `labels` must hold `capacity` elements.
#[no_mangle]
pub unsafe extern "C" fn inklayer_result_labels(
    result: *const InklayerResult,
    labels: *mut u32,
    capacity: usize,
) -> InklayerStatus {
    guard(|| {
        copy_out(
            unsafe { result_ref(result) }?.out.labels.labels(),
            labels,
            capacity,
        )
    })
}

/// Copy the unedited painter's composite into `pixels`.
///
/// # Safety
///
/// `pixels` must hold `capacity` bytes.
#[no_mangle]
pub unsafe extern "C" fn inklayer_result_composite(
    result: *const InklayerResult,
    pixels: *mut u8,
    capacity: usize,
) -> InklayerStatus {
    guard(|| {
        copy_out(
            unsafe { result_ref(result) }?.out.composite.data(),
            pixels,
            capacity,
        )
    })
}

/// Number of layers; 0 for a null handle.
///
/// # Safety
///
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn inklayer_result_layer_count(result: *const InklayerResult) -> usize {
    unsafe { result.as_ref() }.map_or(0, |r| r.out.stack.layers.len())
}

/// Id, box and depth bin of layer `index`, counted back to front.
///
/// # Safety
///
/// `result` must be a live handle; out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn inklayer_result_layer(
    result: *const InklayerResult,
    index: usize,
    id: *mut u32,
    bbox: *mut InklayerRect,
    depth_bin: *mut u32,
) -> InklayerStatus {
    guard(|| {
        let r = unsafe { result_ref(result) }?;
        let layer = r.out.stack.layers.get(index).ok_or_else(|| {
            Failure::invalid(format!(
                "layer {index} out of range ({} layers)",
                r.out.stack.layers.len()
            ))
        })?;
        *unsafe { out_ref(id, "id") }? = layer.id;
        *unsafe { out_ref(bbox, "bbox") }? = rect_out(layer.bbox);
        *unsafe { out_ref(depth_bin, "depth_bin") }? = layer.depth.bin as u32;
        Ok(())
    })
}

/// The run report as JSON, owned by the handle.
///
/// # Safety
///
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn inklayer_result_report_json(
    result: *const InklayerResult,
) -> *const c_char {
    unsafe { result.as_ref() }.map_or(ptr::null(), |r| r.report_json.as_ptr())
}

fn rect_in(r: &InklayerRect) -> Rect {
    Rect::new(r.x as usize, r.y as usize, r.w as usize, r.h as usize)
}

fn rect_out(r: Rect) -> InklayerRect {
    InklayerRect {
        x: r.x as u32,
        y: r.y as u32,
        w: r.w as u32,
        h: r.h as u32,
    }
}

#[no_mangle]
pub extern "C" fn inklayer_box_iou(a: InklayerRect, b: InklayerRect) -> f64 {
    eval::box_iou(&rect_in(&a), &rect_in(&b))
}

/// COCO-style interpolated AP of scored boxes against ground truth.
///
/// # Safety
///
/// `dets` and `scores` hold `n_dets` elements, `gts` holds `n_gts`.
#[no_mangle]
pub unsafe extern "C" fn inklayer_average_precision(
    dets: *const InklayerRect,
    scores: *const f64,
    n_dets: usize,
    gts: *const InklayerRect,
    n_gts: usize,
    iou_threshold: f64,
    out: *mut f64,
) -> InklayerStatus {
    guard(|| {
        let boxes = unsafe { slice_in(dets, n_dets, "dets") }?;
        let scores = unsafe { slice_in(scores, n_dets, "scores") }?;
        let gts: Vec<Rect> = unsafe { slice_in(gts, n_gts, "gts") }?
            .iter()
            .map(rect_in)
            .collect();
        let dets: Vec<Detection> = boxes
            .iter()
            .zip(scores)
            .enumerate()
            .map(|(k, (b, &confidence))| Detection {
                id: k as u32 + 1,
                bbox: rect_in(b),
                confidence,
            })
            .collect();
        *unsafe { out_ref(out, "out") }? = eval::average_precision(&dets, &gts, iou_threshold);
        Ok(())
    })
}

/// Kendall's tau-b between two depth assignments over the same ids.
///
/// # Safety
///
/// All four arrays hold `n` elements.
#[no_mangle]
pub unsafe extern "C" fn inklayer_kendall_tau(
    pred_ids: *const u32,
    pred_depth: *const f64,
    gt_ids: *const u32,
    gt_depth: *const f64,
    n: usize,
    out: *mut f64,
) -> InklayerStatus {
    guard(|| {
        let zip = |ids: &[u32], d: &[f64]| {
            ids.iter()
                .copied()
                .zip(d.iter().copied())
                .collect::<Vec<_>>()
        };
        let pred = zip(unsafe { slice_in(pred_ids, n, "pred_ids") }?, unsafe {
            slice_in(pred_depth, n, "pred_depth")
        }?);
        let gt = zip(unsafe { slice_in(gt_ids, n, "gt_ids") }?, unsafe {
            slice_in(gt_depth, n, "gt_depth")
        }?);
        *unsafe { out_ref(out, "out") }? = eval::kendall_tau(&pred, &gt)?;
        Ok(())
    })
}

/// Run-length code of a mask given as bytes (nonzero = set), as the
/// space-separated run list. Free with [`inklayer_string_free`].
///
/// # Safety
///
/// `mask` holds `width * height` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn inklayer_rle_encode(
    mask: *const u8,
    width: u32,
    height: u32,
    out: *mut *mut c_char,
) -> InklayerStatus {
    guard(|| {
        let out = unsafe { out_ref(out, "out") }?;
        *out = ptr::null_mut();
        let (w, h) = (width as usize, height as usize);
        let n = w
            .checked_mul(h)
            .ok_or_else(|| Failure::invalid("mask size overflows"))?;
        let bits = unsafe { slice_in(mask, n, "mask") }?
            .iter()
            .map(|&b| b != 0)
            .collect();
        *out = into_c_string(rle::rle_encode(&Mask::from_bits(w, h, bits)?).to_string());
        Ok(())
    })
}

/// Decode a run list into `mask` as 0/1 bytes.
///
/// # Safety
///
/// `counts` is a nul-terminated string; `mask` holds `width * height` bytes.
#[no_mangle]
pub unsafe extern "C" fn inklayer_rle_decode(
    counts: *const c_char,
    width: u32,
    height: u32,
    mask: *mut u8,
    capacity: usize,
) -> InklayerStatus {
    guard(|| {
        if counts.is_null() {
            return Err(Failure::null("counts"));
        }
        let text = unsafe { CStr::from_ptr(counts) }
            .to_str()
            .map_err(|e| Failure::invalid(e.to_string()))?;
        let decoded = rle::Rle::parse_counts(width as usize, height as usize, text)?.decode()?;
        let bytes: Vec<u8> = decoded.bits().iter().map(|&b| u8::from(b)).collect();
        copy_out(&bytes, mask, capacity)
    })
}

/// # Safety
///
/// `s` must be null or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn inklayer_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}
