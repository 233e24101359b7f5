use std::ffi::{c_char, CString};
use std::ptr;

use scenefit_ffi::*;

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 512];
    let n = unsafe { scenefit_last_error_message(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(511)].iter().map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

fn synth_pair() -> (*mut ScenefitScene, *mut ScenefitScene) {
    synth_with(ptr::null())
}

fn synth_with(spec: *const c_char) -> (*mut ScenefitScene, *mut ScenefitScene) {
    let mut init = ptr::null_mut();
    let mut gt = ptr::null_mut();
    let st = unsafe { scenefit_synth(3, spec, &mut init, &mut gt) };
    assert_eq!(st, ScenefitStatus::Ok, "{}", last_error());
    assert!(!init.is_null() && !gt.is_null());
    (init, gt)
}

#[test]
fn missing_file_reports_io_and_message() {
    let path = cstr("/definitely/not/here.json");
    let mut h = 1 as *mut ScenefitScene;
    let st = unsafe { scenefit_scene_load(path.as_ptr(), ptr::null(), &mut h) };
    assert_eq!(st, ScenefitStatus::Io);
    assert!(h.is_null());
    assert!(last_error().contains("not/here.json"));
}

#[test]
fn null_arguments_are_rejected() {
    let mut h = ptr::null_mut();
    assert_eq!(
        unsafe { scenefit_scene_load(ptr::null(), ptr::null(), &mut h) },
        ScenefitStatus::NullArgument
    );
    let path = cstr("x.json");
    assert_eq!(
        unsafe { scenefit_scene_load(path.as_ptr(), ptr::null(), ptr::null_mut()) },
        ScenefitStatus::NullArgument
    );
    let mut total = 0.0;
    assert_eq!(unsafe { scenefit_scene_loss(ptr::null(), &mut total) }, ScenefitStatus::NullArgument);
    unsafe { scenefit_scene_free(ptr::null_mut()) };
}

#[test]
fn invalid_utf8_path() {
    let bad = [0xffu8 as c_char, 0xfe_u8 as c_char, 0];
    let mut h = ptr::null_mut();
    assert_eq!(
        unsafe { scenefit_scene_load(bad.as_ptr(), ptr::null(), &mut h) },
        ScenefitStatus::InvalidUtf8
    );
}

#[test]
fn message_truncates_and_terminates() {
    let path = cstr("/nope/a/very/long/path/to/nothing.json");
    let mut h = ptr::null_mut();
    unsafe { scenefit_scene_load(path.as_ptr(), ptr::null(), &mut h) };
    let mut buf = [0x7f as c_char; 8];
    let n = unsafe { scenefit_last_error_message(buf.as_mut_ptr(), buf.len()) };
    assert!(n > 8);
    assert_eq!(buf[7], 0);
    assert_eq!(unsafe { scenefit_last_error_message(ptr::null_mut(), 0) }, n);
}

#[test]
fn synth_losses_evaluate_and_save() {
    let (init, gt) = synth_pair();
    unsafe {
        let mut n = 0usize;
        assert_eq!(scenefit_scene_object_count(gt, &mut n), ScenefitStatus::Ok);
        assert_eq!(n, 3);

        let mut terms = [f64::NAN; SCENEFIT_TERM_COUNT];
        assert_eq!(scenefit_scene_losses(gt, terms.as_mut_ptr(), terms.len()), ScenefitStatus::Ok);
        assert!(terms.iter().all(|v| v.is_finite() && *v >= 0.0));
        assert_eq!(scenefit_scene_losses(gt, terms.as_mut_ptr(), 3), ScenefitStatus::InvalidInput);

        let mut total = 0.0;
        assert_eq!(scenefit_scene_loss(init, &mut total), ScenefitStatus::Ok);
        assert!(total.is_finite() && total > 0.0);

        let (mut c, mut s, mut y) = ([0.0; 3], [0.0; 3], 0.0);
        assert_eq!(
            scenefit_scene_object_box(gt, 0, c.as_mut_ptr(), s.as_mut_ptr(), &mut y),
            ScenefitStatus::Ok
        );
        assert!(s.iter().all(|v| *v > 0.0));
        assert_eq!(
            scenefit_scene_object_box(gt, 99, c.as_mut_ptr(), s.as_mut_ptr(), &mut y),
            ScenefitStatus::InvalidInput
        );

        let mut r: ScenefitEvalReport = std::mem::zeroed();
        assert_eq!(scenefit_evaluate(gt, gt, &mut r), ScenefitStatus::Ok);
        assert_eq!(r.matched, 3);
        assert!((r.mean_iou3d - 1.0).abs() < 1e-9);
        assert!(r.v2v_mm.abs() < 1e-9);

        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("gt.json");
        let out_c = cstr(out.to_str().unwrap());
        assert_eq!(scenefit_scene_save(gt, out_c.as_ptr()), ScenefitStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(scenefit_scene_load(out_c.as_ptr(), ptr::null(), &mut back), ScenefitStatus::Ok);
        let mut terms2 = [0.0; SCENEFIT_TERM_COUNT];
        scenefit_scene_losses(back, terms2.as_mut_ptr(), terms2.len());
        assert_eq!(terms, terms2);

        scenefit_scene_free(back);
        scenefit_scene_free(init);
        scenefit_scene_free(gt);
    }
}

#[test]
fn short_stage1_improves_reprojection() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(&spec, r#"{"perturbation": {"centroid_sigma": 0.2}}"#).unwrap();
    let spec_c = cstr(spec.to_str().unwrap());
    let (init, gt) = synth_with(spec_c.as_ptr());
    let scene = dir.path().join("init.json");
    let config = dir.path().join("config.json");
    std::fs::write(
        &config,
        r#"{"sdf_resolution": 8, "schedule": {"stage1_body_translation_iters": 2,
            "stage1_body_full_iters": 3, "stage1_scene_iters": 5, "stage2_alternations": 2}}"#,
    )
    .unwrap();
    unsafe {
        let scene_c = cstr(scene.to_str().unwrap());
        assert_eq!(scenefit_scene_save(init, scene_c.as_ptr()), ScenefitStatus::Ok);
        let config_c = cstr(config.to_str().unwrap());
        let mut h = ptr::null_mut();
        assert_eq!(scenefit_scene_load(scene_c.as_ptr(), config_c.as_ptr(), &mut h), ScenefitStatus::Ok, "{}", last_error());
        let (mut before, mut after) = ([0.0; SCENEFIT_TERM_COUNT], [0.0; SCENEFIT_TERM_COUNT]);
        scenefit_scene_losses(h, before.as_mut_ptr(), before.len());
        assert_eq!(scenefit_scene_optimize(h, true), ScenefitStatus::Ok, "{}", last_error());
        scenefit_scene_losses(h, after.as_mut_ptr(), after.len());
        // index 4 is scene reprojection; the scene fit keeps its best iterate
        assert!(after[4] < before[4], "{} >= {}", after[4], before[4]);
        assert_ne!(after, before);
        scenefit_scene_free(h);
        scenefit_scene_free(init);
        scenefit_scene_free(gt);
    }
}

#[test]
fn bad_config_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let (init, gt) = synth_pair();
    let scene = dir.path().join("init.json");
    let config = dir.path().join("config.json");
    std::fs::write(&config, r#"{"sdf_resolution": 1}"#).unwrap();
    unsafe {
        let scene_c = cstr(scene.to_str().unwrap());
        scenefit_scene_save(init, scene_c.as_ptr());
        let config_c = cstr(config.to_str().unwrap());
        let mut h = ptr::null_mut();
        assert_eq!(scenefit_scene_load(scene_c.as_ptr(), config_c.as_ptr(), &mut h), ScenefitStatus::Schema);
        assert!(last_error().contains("sdf_resolution"));
        scenefit_scene_free(init);
        scenefit_scene_free(gt);
    }
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/scenefit.h")).unwrap();
    for name in [
        "scenefit_scene_load",
        "scenefit_synth",
        "scenefit_scene_free",
        "scenefit_scene_losses",
        "scenefit_scene_optimize",
        "scenefit_evaluate",
        "scenefit_last_error_message",
        "SCENEFIT_STATUS_OK",
        "typedef struct ScenefitScene ScenefitScene",
        "SCENEFIT_TERM_COUNT",
    ] {
        assert!(header.contains(name), "missing {name}");
    }
}

#[test]
fn version_is_nul_terminated() {
    let v = unsafe { std::ffi::CStr::from_ptr(scenefit_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
