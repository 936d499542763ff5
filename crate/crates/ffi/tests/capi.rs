use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use inklayer::detection::{CandidateSet, Detection};
use inklayer::io::DetectionsDoc;
use inklayer::raster::Mask;
use inklayer::rect::Rect;
use inklayer_ffi::*;

const W: usize = 64;
const H: usize = 48;

/// Two outlined boxes; the second is nearer and overlaps the first.
fn scene() -> (Vec<u8>, Vec<f32>, CString) {
    let back = Rect::new(4, 4, 27, 27);
    let front = Rect::new(20, 10, 31, 31);
    let outline = |r: Rect, x: usize, y: usize| {
        r.contains(x, y) && (x == r.x || y == r.y || x == r.x + r.w - 1 || y == r.y + r.h - 1)
    };
    let mut sketch = vec![255u8; W * H];
    let mut depth = vec![0.2f32; W * H];
    for y in 0..H {
        for x in 0..W {
            if outline(back, x, y) || outline(front, x, y) {
                sketch[y * W + x] = 0;
            }
            if front.contains(x, y) {
                depth[y * W + x] = 0.9;
            }
        }
    }
    let set = CandidateSet::new(
        W,
        H,
        vec![
            Detection {
                id: 1,
                bbox: back,
                confidence: 0.9,
            },
            Detection {
                id: 2,
                bbox: front,
                confidence: 0.8,
            },
        ],
        vec![Mask::from_rect(W, H, back), Mask::from_rect(W, H, front)],
    )
    .unwrap();
    let json = DetectionsDoc::from_candidates(&set).to_json().unwrap();
    (sketch, depth, CString::new(json).unwrap())
}

fn last_error() -> String {
    let p = inklayer_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn run_and_read_back() {
    let (sketch, depth, json) = scene();
    let mut result = ptr::null_mut();
    let status = unsafe {
        inklayer_run(
            sketch.as_ptr(),
            depth.as_ptr(),
            W as u32,
            H as u32,
            json.as_ptr(),
            ptr::null(),
            &mut result,
        )
    };
    assert_eq!(status, InklayerStatus::Ok);
    assert!(inklayer_last_error().is_null());

    let (mut w, mut h) = (0, 0);
    assert_eq!(
        unsafe { inklayer_result_dims(result, &mut w, &mut h) },
        InklayerStatus::Ok
    );
    assert_eq!((w, h), (W as u32, H as u32));

    let mut labels = vec![0u32; W * H];
    assert_eq!(
        unsafe { inklayer_result_labels(result, labels.as_mut_ptr(), labels.len()) },
        InklayerStatus::Ok
    );
    for (i, &l) in labels.iter().enumerate() {
        assert_eq!(l != 0, sketch[i] == 0, "pixel {i}");
    }
    // The nearer box owns the shared corner stroke.
    assert_eq!(labels[20 * W + 20], 2);

    assert_eq!(unsafe { inklayer_result_layer_count(result) }, 2);
    let mut ids = Vec::new();
    for k in 0..2 {
        let (mut id, mut bbox, mut bin) = (
            0,
            InklayerRect {
                x: 0,
                y: 0,
                w: 0,
                h: 0,
            },
            0,
        );
        assert_eq!(
            unsafe { inklayer_result_layer(result, k, &mut id, &mut bbox, &mut bin) },
            InklayerStatus::Ok
        );
        ids.push((id, bin));
    }
    assert_eq!(ids[0].0, 1);
    assert_eq!(ids[1].0, 2);
    assert!(ids[1].1 > ids[0].1);
    let (mut id, mut bbox, mut bin) = (
        0,
        InklayerRect {
            x: 0,
            y: 0,
            w: 0,
            h: 0,
        },
        0,
    );
    assert_eq!(
        unsafe { inklayer_result_layer(result, 2, &mut id, &mut bbox, &mut bin) },
        InklayerStatus::InvalidArgument
    );
    assert!(last_error().contains("out of range"));

    let mut composite = vec![0u8; W * H];
    assert_eq!(
        unsafe { inklayer_result_composite(result, composite.as_mut_ptr(), 3) },
        InklayerStatus::BufferTooSmall
    );
    assert_eq!(
        unsafe { inklayer_result_composite(result, composite.as_mut_ptr(), composite.len()) },
        InklayerStatus::Ok
    );
    assert_eq!(composite, sketch);

    let report = unsafe { CStr::from_ptr(inklayer_result_report_json(result)) };
    let report: serde_json::Value = serde_json::from_slice(report.to_bytes()).unwrap();
    assert_eq!(report["kept"].as_array().map(Vec::len), Some(2));

    unsafe { inklayer_result_free(result) };
    unsafe { inklayer_result_free(ptr::null_mut()) };
}

#[test]
fn failures_set_status_and_message() {
    let (sketch, _, json) = scene();
    let mut result = ptr::null_mut();
    let s = unsafe {
        inklayer_run(
            ptr::null(),
            ptr::null(),
            W as u32,
            H as u32,
            json.as_ptr(),
            ptr::null(),
            &mut result,
        )
    };
    assert_eq!(s, InklayerStatus::NullPointer);
    assert!(last_error().contains("sketch"));
    assert!(result.is_null());

    // Refinement on and no depth map: the pipeline names the stage.
    let s = unsafe {
        inklayer_run(
            sketch.as_ptr(),
            ptr::null(),
            W as u32,
            H as u32,
            json.as_ptr(),
            ptr::null(),
            &mut result,
        )
    };
    assert_eq!(s, InklayerStatus::PipelineError);
    assert!(last_error().contains("depth stage"));

    let mut config = inklayer_config_default();
    config.overlap_threshold = 2.0;
    config.depth_refinement = false;
    let s = unsafe {
        inklayer_run(
            sketch.as_ptr(),
            ptr::null(),
            W as u32,
            H as u32,
            json.as_ptr(),
            &config,
            &mut result,
        )
    };
    assert_eq!(s, InklayerStatus::PipelineError);
    assert!(last_error().contains("config stage"));

    let file_mask = CString::new(r#"{"width":64,"height":48,"detections":[{"id":1,"x":0,"y":0,"w":4,"h":4,"confidence":1,"mask_file":"m.png"}]}"#).unwrap();
    let s = unsafe {
        inklayer_run(
            sketch.as_ptr(),
            ptr::null(),
            W as u32,
            H as u32,
            file_mask.as_ptr(),
            &config,
            &mut result,
        )
    };
    assert_eq!(s, InklayerStatus::InvalidArgument);
    assert!(last_error().contains("m.png"));

    assert_eq!(
        unsafe { inklayer_result_labels(ptr::null(), ptr::null_mut(), 0) },
        InklayerStatus::NullPointer
    );
    assert_eq!(unsafe { inklayer_result_layer_count(ptr::null()) }, 0);
}

#[test]
fn config_defaults_match_the_library() {
    let c = inklayer_config_default();
    let d = inklayer::pipeline::PipelineConfig::default();
    assert_eq!(c.overlap_threshold, d.overlap_threshold);
    assert_eq!(c.depth_bins as usize, d.depth_bins);
    assert_eq!(c.sample_points, 0);
    assert!(c.depth_refinement);
}

#[test]
fn metric_and_rle_helpers() {
    let a = InklayerRect {
        x: 0,
        y: 0,
        w: 10,
        h: 10,
    };
    let b = InklayerRect {
        x: 5,
        y: 0,
        w: 10,
        h: 10,
    };
    assert!((inklayer_box_iou(a, b) - 1.0 / 3.0).abs() < 1e-12);

    // Offset boxes never reach IoU 0.5, so the lone detection is a false positive.
    let mut ap = -1.0;
    let s = unsafe { inklayer_average_precision(&b, &0.9, 1, &a, 1, 0.5, &mut ap) };
    assert_eq!(s, InklayerStatus::Ok);
    assert_eq!(ap, 0.0);
    let s = unsafe { inklayer_average_precision(&a, &0.9, 1, &a, 1, 0.5, &mut ap) };
    assert_eq!(s, InklayerStatus::Ok);
    assert_eq!(ap, 1.0);

    let ids = [1u32, 2, 3];
    let pred = [3.0, 1.0, 2.0];
    let gt = [3.0, 2.0, 1.0];
    let mut tau = 0.0;
    assert_eq!(
        unsafe {
            inklayer_kendall_tau(
                ids.as_ptr(),
                pred.as_ptr(),
                ids.as_ptr(),
                gt.as_ptr(),
                3,
                &mut tau,
            )
        },
        InklayerStatus::Ok
    );
    assert!((tau - 1.0 / 3.0).abs() < 1e-12);
    let flat = [1.0; 3];
    assert_eq!(
        unsafe {
            inklayer_kendall_tau(
                ids.as_ptr(),
                flat.as_ptr(),
                ids.as_ptr(),
                gt.as_ptr(),
                3,
                &mut tau,
            )
        },
        InklayerStatus::InvalidArgument
    );

    let mask: Vec<u8> = (0..12).map(|i| u8::from(i % 5 == 0)).collect();
    let mut text = ptr::null_mut();
    assert_eq!(
        unsafe { inklayer_rle_encode(mask.as_ptr(), 4, 3, &mut text) },
        InklayerStatus::Ok
    );
    assert_eq!(
        unsafe { CStr::from_ptr(text) }.to_str().unwrap(),
        "0 1 4 1 4 1 1"
    );
    let mut back = vec![9u8; 12];
    assert_eq!(
        unsafe { inklayer_rle_decode(text, 4, 3, back.as_mut_ptr(), back.len()) },
        InklayerStatus::Ok
    );
    assert_eq!(back, mask);
    assert_eq!(
        unsafe { inklayer_rle_decode(text, 5, 3, back.as_mut_ptr(), back.len()) },
        InklayerStatus::InvalidArgument
    );
    unsafe { inklayer_string_free(text) };
}

#[test]
fn failures_on_one_thread_do_not_leak_to_another() {
    let mut tau = 0.0;
    let s = unsafe {
        inklayer_kendall_tau(
            ptr::null(),
            ptr::null(),
            ptr::null(),
            ptr::null(),
            0,
            &mut tau,
        )
    };
    assert_eq!(s, InklayerStatus::NullPointer);
    std::thread::spawn(|| assert!(inklayer_last_error().is_null()))
        .join()
        .unwrap();
}

/// Compiles the C smoke program against the generated header and links it
/// with the static library.
#[test]
fn c_program_links_against_the_header() {
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header_dir = crate_dir.join("include");
    assert!(header_dir.join("inklayer.h").exists());
    // Test binaries live in <target>/<profile>/deps.
    let profile_dir = std::env::current_exe()
        .unwrap()
        .parent()
        .unwrap()
        .parent()
        .unwrap()
        .to_path_buf();
    let lib = profile_dir.join("libinklayer_ffi.a");
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("no C compiler; skipping");
        return;
    }
    let out_dir = tempfile::tempdir().unwrap();
    let exe = out_dir.path().join("smoke");
    let src = crate_dir.join("tests/c/smoke.c");
    let mut cc = Command::new("cc");
    cc.args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(&header_dir)
        .arg(&src);
    if !lib.exists() {
        eprintln!("{} not built; checking syntax only", lib.display());
        assert!(cc.arg("-fsyntax-only").status().unwrap().success());
        return;
    }
    let status = cc
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let run = Command::new(&exe).output().unwrap();
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "ok");
}
