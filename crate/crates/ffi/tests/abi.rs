use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use segrefine_ffi::*;

fn last_error() -> String {
    let p = seg_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(seg_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn correspondence_through_handles() {
    // Original pixels: e0, e1, e2, e3. Generated: e3, e2, e1, e0.
    let eye: Vec<f32> = (0..16).map(|i| if i % 5 == 0 { 1.0 } else { 0.0 }).collect();
    let rev: Vec<f32> = (0..4).rev().flat_map(|r| eye[4 * r..4 * r + 4].to_vec()).collect();
    let (mut o, mut g) = (ptr::null_mut(), ptr::null_mut());
    unsafe {
        assert_eq!(seg_feature_map_new(2, 2, 4, eye.as_ptr(), false, &mut o), SegStatus::Ok);
        assert_eq!(seg_feature_map_new(2, 2, 4, rev.as_ptr(), true, &mut g), SegStatus::Ok);
        for workers in [0, 3] {
            let mut idx = [9usize; 4];
            let mut dist = [9f32; 4];
            assert_eq!(
                seg_find_correspondence(o, g, workers, idx.as_mut_ptr(), dist.as_mut_ptr(), 4),
                SegStatus::Ok
            );
            assert_eq!(idx, [3, 2, 1, 0]);
            assert_eq!(dist, [0.0; 4]);
        }
        let mut idx = [0usize; 3];
        assert_eq!(
            seg_find_correspondence(o, g, 0, idx.as_mut_ptr(), ptr::null_mut(), 3),
            SegStatus::ShapeMismatch
        );
        assert_eq!(seg_find_correspondence(ptr::null(), g, 0, idx.as_mut_ptr(), ptr::null_mut(), 4), SegStatus::NullPointer);
        assert!(last_error().contains("orig"));
        seg_feature_map_free(o);
        seg_feature_map_free(g);
        seg_feature_map_free(ptr::null_mut());

        let bad = [3.0f32, 4.0];
        let mut h = ptr::null_mut();
        assert_eq!(seg_feature_map_new(1, 1, 2, bad.as_ptr(), false, &mut h), SegStatus::InvalidArgument);
        assert!(h.is_null());
    }
}

#[test]
fn mixing() {
    let s = [0.1f32, 0.3, 0.9, 0.5];
    let d = [0usize, 2, 2, 0];
    let mut out = [0f32; 4];
    unsafe {
        assert_eq!(
            seg_mix_probabilities(1, 4, s.as_ptr(), d.as_ptr(), 0.8, 0.2, 0.6, out.as_mut_ptr()),
            SegStatus::Ok
        );
        assert!(seg_last_error().is_null());
        let want = [0.1f64, 0.8 * 0.3 + 0.2 * 0.9, 0.9, 0.8 * 0.5 + 0.2 * 0.1];
        for (a, b) in out.iter().zip(want) {
            assert!((f64::from(*a) - b).abs() < 1e-6);
        }
        assert_eq!(
            seg_mix_probabilities(1, 4, s.as_ptr(), d.as_ptr(), 2.0, 0.2, 0.6, out.as_mut_ptr()),
            SegStatus::InvalidArgument
        );
        assert!(last_error().contains("beta"));
        let far = [0usize, 7, 2, 0];
        assert_ne!(
            seg_mix_probabilities(1, 4, s.as_ptr(), far.as_ptr(), 0.8, 0.2, 0.6, out.as_mut_ptr()),
            SegStatus::Ok
        );
    }
}

#[test]
fn injection_masks_and_attention() {
    let bits = [1u8, 0, 1];
    let tokens = [1usize, 3];
    let mut cross = [7u8; 15];
    let mut selfm = [7u8; 9];
    unsafe {
        assert_eq!(
            seg_cross_injection(1, 3, bits.as_ptr(), tokens.as_ptr(), 2, 5, cross.as_mut_ptr()),
            SegStatus::Ok
        );
        assert_eq!(cross, [0, 1, 0, 1, 0, 0, 0, 0, 0, 0, 0, 1, 0, 1, 0]);
        assert_eq!(
            seg_cross_injection(1, 3, bits.as_ptr(), tokens.as_ptr(), 2, 3, cross.as_mut_ptr()),
            SegStatus::InvalidArgument
        );
        assert_eq!(seg_self_injection(1, 3, bits.as_ptr(), selfm.as_mut_ptr()), SegStatus::Ok);
        assert_eq!(selfm, [1, 0, 1, 0, 0, 0, 1, 0, 1]);

        // One query, two keys with equal logits: masking key 0 with alpha
        // shifts the weight to exp(alpha / sqrt(d)) : 1.
        let q = [1.0f32, 0.0];
        let k = [0.0f32, 1.0, 0.0, 1.0];
        let mask = [1u8, 0];
        let mut w = [0f64; 2];
        assert_eq!(
            seg_inject_attention(1, 2, 2, q.as_ptr(), k.as_ptr(), mask.as_ptr(), SegAttentionKind::Cross, 2.0, w.as_mut_ptr()),
            SegStatus::Ok
        );
        let e = (2.0f64 / 2f64.sqrt()).exp();
        assert!((w[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((w[0] + w[1] - 1.0).abs() < 1e-12);
        assert_eq!(
            seg_inject_attention(1, 2, 2, q.as_ptr(), k.as_ptr(), mask.as_ptr(), SegAttentionKind::SelfAttention, 2.0, w.as_mut_ptr()),
            SegStatus::ShapeMismatch
        );
    }
}

#[test]
fn schedule_and_noise() {
    let mut s = ptr::null_mut();
    let mut ab = 0.0;
    unsafe {
        assert_eq!(seg_schedule_default(&mut s), SegStatus::Ok);
        assert_eq!(seg_schedule_alpha_bar(s, 0, &mut ab), SegStatus::Ok);
        assert_eq!(ab, 1.0);
        assert_eq!(seg_schedule_alpha_bar(s, 1, &mut ab), SegStatus::Ok);
        assert!((ab - (1.0 - 1e-4)).abs() < 1e-15);
        assert_eq!(seg_schedule_alpha_bar(s, 1001, &mut ab), SegStatus::InvalidArgument);

        let x0 = [0.5f64, -0.25, 0.0, 1.0, 0.75, -1.0];
        let eps = [0.1f64, -0.3, 1.2, 0.0, -0.7, 0.4];
        let (mut xt, mut back) = ([0f64; 6], [0f64; 6]);
        assert_eq!(seg_add_noise(s, 1, 2, 3, x0.as_ptr(), eps.as_ptr(), 400, xt.as_mut_ptr()), SegStatus::Ok);
        assert_eq!(seg_predict_x0(s, 1, 2, 3, xt.as_ptr(), eps.as_ptr(), 400, back.as_mut_ptr()), SegStatus::Ok);
        for (a, b) in back.iter().zip(x0) {
            assert!((a - b).abs() < 1e-12);
        }
        seg_schedule_free(s);

        let mut lin = ptr::null_mut();
        assert_eq!(seg_schedule_linear(10, 0.1, 0.2, &mut lin), SegStatus::Ok);
        assert_eq!(seg_schedule_alpha_bar(lin, 1, &mut ab), SegStatus::Ok);
        assert!((ab - 0.9).abs() < 1e-12);
        seg_schedule_free(lin);
        assert_ne!(seg_schedule_linear(10, 0.5, 1.5, &mut lin), SegStatus::Ok);
    }
}

#[test]
fn tensor_files() {
    let dir = tempfile::tempdir().unwrap();
    let file = CString::new(dir.path().join("t.g4tn").to_str().unwrap()).unwrap();
    let dims = [2usize, 1, 3];
    let data = [1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0];
    let (mut t, mut r) = (ptr::null_mut(), ptr::null_mut());
    unsafe {
        assert_eq!(seg_tensor_new(3, dims.as_ptr(), data.as_ptr(), &mut t), SegStatus::Ok);
        assert_eq!(seg_tensor_write(t, file.as_ptr()), SegStatus::Ok);
        assert_eq!(seg_tensor_read(file.as_ptr(), &mut r), SegStatus::Ok);
        assert_eq!(seg_tensor_rank(r), 3);
        assert_eq!(seg_tensor_len(r), 6);
        let mut got = [0usize; 8];
        assert_eq!(seg_tensor_dims(r, got.as_mut_ptr(), 8), SegStatus::Ok);
        assert_eq!(&got[..3], &dims);
        assert_eq!(seg_tensor_dims(r, got.as_mut_ptr(), 2), SegStatus::ShapeMismatch);
        assert_eq!(std::slice::from_raw_parts(seg_tensor_data(r), 6), &data);
        seg_tensor_free(t);
        seg_tensor_free(r);
        assert_eq!(seg_tensor_rank(ptr::null()), 0);
        assert!(seg_tensor_data(ptr::null()).is_null());
    }

    let bad = dir.path().join("bad.g4tn");
    std::fs::write(&bad, b"NOPE\x01\x00\x00\x00").unwrap();
    let bad = CString::new(bad.to_str().unwrap()).unwrap();
    let missing = CString::new(dir.path().join("none.g4tn").to_str().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(seg_tensor_read(bad.as_ptr(), &mut h), SegStatus::Format);
        assert_eq!(seg_tensor_read(missing.as_ptr(), &mut h), SegStatus::Io);
        assert_eq!(seg_tensor_read(ptr::null(), &mut h), SegStatus::NullPointer);
        assert!(h.is_null());
    }
}

#[test]
fn mean_iou_over_packed_masks() {
    // Two 1x4 images.
    let preds = [0u8, 1, 1, 0, 1, 1, 0, 0];
    let gts = [0u8, 1, 0, 255, 1, 1, 1, 0];
    let mut v = 0.0;
    unsafe {
        assert_eq!(seg_mean_iou(2, 1, 4, preds.as_ptr(), gts.as_ptr(), 2, false, &mut v), SegStatus::Ok);
        // class 0: inter 2, union 4; class 1: inter 3, union 5.
        assert!((v - (0.5 + 0.6) / 2.0).abs() < 1e-12);
        assert_eq!(seg_mean_iou(2, 1, 4, preds.as_ptr(), gts.as_ptr(), 0, false, &mut v), SegStatus::InvalidArgument);
    }
}

fn header() -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/segrefine.h")).unwrap()
}

#[test]
fn header_declares_every_export() {
    let h = header();
    let src = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .split("pub unsafe extern \"C\" fn ")
        .chain(src.split("pub extern \"C\" fn "))
        .skip(1)
        .filter_map(|s| s.split('(').next())
        .filter(|s| s.starts_with("seg_"))
        .collect();
    assert!(exports.len() >= 20, "found {exports:?}");
    for f in exports {
        assert!(h.contains(&format!("{f}(")), "{f} missing from header");
    }
    for t in ["typedef struct SegFeatureMap", "typedef struct SegSchedule", "typedef struct SegTensor", "SEG_STATUS_PANIC = 7"] {
        assert!(h.contains(t), "{t} missing from header");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = Command::new("cc").arg("--version").output() else {
        return;
    };
    if !cc.status.success() {
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let main = dir.path().join("main.c");
    std::fs::write(
        &main,
        "#include \"segrefine.h\"\nint main(void) { SegStatus s = SEG_STATUS_OK; return (int)s + (seg_version()[0] == 0); }\n",
    )
    .unwrap();
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(Path::new(env!("CARGO_MANIFEST_DIR")).join("include"))
        .arg(&main)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
