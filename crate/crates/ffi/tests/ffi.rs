use std::ffi::{CStr, CString};
use std::ptr;

use semisent::model::{build_classifier, save_model, ClassifierConfig, Input};
use semisent::numkernel::Tensor;
use semisent_ffi::*;

fn last_error() -> String {
    let p = semisent_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn saved_model(dir: &std::path::Path) -> (CString, semisent::model::SentimentClassifier) {
    let cfg = ClassifierConfig { fc_dim: 4, blstm_hidden: 3, attention_dim: 3, ..ClassifierConfig::e2e(5, 3, 9) };
    let model = build_classifier(cfg).unwrap();
    let path = dir.join("m.sfm");
    save_model(&model, &path).unwrap();
    (CString::new(path.to_str().unwrap()).unwrap(), model)
}

#[test]
fn load_forward_free_matches_core() {
    let dir = tempfile::tempdir().unwrap();
    let (path, model) = saved_model(dir.path());
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { semisent_model_load(path.as_ptr(), &mut handle) }, SemisentStatus::Ok);
    assert_eq!(unsafe { semisent_model_num_classes(handle) }, 3);
    assert_eq!(unsafe { semisent_model_input_dim(handle) }, 5);
    assert_eq!(unsafe { CStr::from_ptr(semisent_model_stage(handle)) }.to_str().unwrap(), "fresh");

    let frames: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
    let (mut logits, mut att) = ([0.0; 3], [0.0; 4]);
    let status = unsafe {
        semisent_model_forward(handle, frames.as_ptr(), 4, 5, logits.as_mut_ptr(), 3, att.as_mut_ptr(), 4)
    };
    assert_eq!(status, SemisentStatus::Ok);
    let x = Tensor::from_vec(&[4, 5], frames.clone()).unwrap();
    let (z, a) = model.forward(Input::Frames(&x)).unwrap();
    assert_eq!(logits.to_vec(), z);
    assert_eq!(att.to_vec(), a);

    // no attention buffer is fine
    let status =
        unsafe { semisent_model_forward(handle, frames.as_ptr(), 4, 5, logits.as_mut_ptr(), 3, ptr::null_mut(), 0) };
    assert_eq!(status, SemisentStatus::Ok);
    unsafe { semisent_model_free(handle) };
}

#[test]
fn forward_errors_carry_codes_and_messages() {
    let dir = tempfile::tempdir().unwrap();
    let (path, _) = saved_model(dir.path());
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { semisent_model_load(path.as_ptr(), &mut handle) }, SemisentStatus::Ok);
    let frames = [0.0; 12];
    let mut logits = [0.0; 3];
    let s = unsafe { semisent_model_forward(handle, frames.as_ptr(), 3, 4, logits.as_mut_ptr(), 3, ptr::null_mut(), 0) };
    assert_eq!(s, SemisentStatus::Dimension);
    assert!(last_error().contains("dimension"), "{}", last_error());
    let s = unsafe { semisent_model_forward(handle, frames.as_ptr(), 0, 5, logits.as_mut_ptr(), 3, ptr::null_mut(), 0) };
    assert_eq!(s, SemisentStatus::Dimension);
    let s = unsafe { semisent_model_forward(handle, frames.as_ptr(), 2, 5, logits.as_mut_ptr(), 2, ptr::null_mut(), 0) };
    assert_eq!(s, SemisentStatus::BufferTooSmall);
    let s = unsafe { semisent_model_forward(ptr::null(), frames.as_ptr(), 2, 5, logits.as_mut_ptr(), 3, ptr::null_mut(), 0) };
    assert_eq!(s, SemisentStatus::NullPointer);
    unsafe { semisent_model_free(handle) };
    unsafe { semisent_model_free(ptr::null_mut()) };
}

#[test]
fn load_failures() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.sfm");
    std::fs::write(&bad, b"SFM1\x03").unwrap();
    let p = CString::new(bad.to_str().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { semisent_model_load(p.as_ptr(), &mut handle) }, SemisentStatus::Corrupt);
    assert!(handle.is_null());
    let missing = CString::new(dir.path().join("nope.sfm").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { semisent_model_load(missing.as_ptr(), &mut handle) }, SemisentStatus::Io);
    assert_eq!(unsafe { semisent_model_load(ptr::null(), &mut handle) }, SemisentStatus::NullPointer);
}

#[test]
fn majority_vote_over_all_triples() {
    let mut discarded = 0;
    for a in 0..3 {
        for b in 0..3 {
            for c in 0..3 {
                let mut out = 99;
                assert_eq!(unsafe { semisent_majority_vote([a, b, c].as_ptr(), &mut out) }, SemisentStatus::Ok);
                let expected = if a == b || a == c { a } else if b == c { b } else { -1 };
                assert_eq!(out, expected, "{a}{b}{c}");
                discarded += usize::from(out == -1);
            }
        }
    }
    assert_eq!(discarded, 6);
    let mut out = 0;
    assert_eq!(unsafe { semisent_majority_vote([0, 3, 1].as_ptr(), &mut out) }, SemisentStatus::InvalidArgument);
}

#[test]
fn metrics_from_counts_worked_example() {
    let counts: [u64; 9] = [4, 1, 0, 1, 3, 1, 0, 2, 8];
    let (mut uw, mut w) = (SemisentScores::default(), SemisentScores::default());
    assert_eq!(unsafe { semisent_metrics_from_counts(counts.as_ptr(), 3, &mut uw, &mut w) }, SemisentStatus::Ok);
    assert!((uw.recall - 11.0 / 15.0).abs() < 1e-12);
    assert!((w.recall - 15.0 / 20.0).abs() < 1e-12);
    let zeros = [0u64; 4];
    assert_eq!(unsafe { semisent_metrics_from_counts(zeros.as_ptr(), 2, &mut uw, &mut w) }, SemisentStatus::Data);
    assert_eq!(unsafe { semisent_metrics_from_counts(zeros.as_ptr(), 0, &mut uw, &mut w) }, SemisentStatus::InvalidArgument);
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/semisent.h")).unwrap();
    for name in [
        "semisent_model_load",
        "semisent_model_free",
        "semisent_model_forward",
        "semisent_majority_vote",
        "semisent_metrics_from_counts",
        "semisent_last_error",
        "typedef struct SemisentModel SemisentModel",
        "SEMISENT_STATUS_OK = 0",
    ] {
        assert!(header.contains(name), "missing {name}");
    }
    assert!(!unsafe { CStr::from_ptr(semisent_version()) }.to_str().unwrap().is_empty());
}
