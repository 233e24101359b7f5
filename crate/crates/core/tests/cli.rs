use std::path::Path;
use std::process::{Command, Output};

fn scenefit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scenefit")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL_CONFIG: &str = r#"{"sdf_resolution": 8, "schedule": {"stage1_body_translation_iters": 2,
    "stage1_body_full_iters": 3, "stage1_scene_iters": 5, "stage2_alternations": 2}}"#;

#[test]
fn synth_optimize_evaluate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (init, gt, cfg, out) = (d.join("init.json"), d.join("gt.json"), d.join("cfg.json"), d.join("out"));
    std::fs::write(&cfg, SMALL_CONFIG).unwrap();

    let o = scenefit(&["synth", "--seed", "2", "--out-init", s(&init), "--out-gt", s(&gt)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let o = scenefit(&["optimize", "--scene", s(&init), "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let names: Vec<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(names.len(), 3, "{names:?}");
    let refined = names.iter().find(|n| n.contains("scene")).expect("refined scene written");

    let report = d.join("report.json");
    let o = scenefit(&[
        "evaluate",
        "--pred",
        s(&out.join(refined)),
        "--gt",
        s(&gt),
        "--auto-match",
        "--out",
        s(&report),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let iou = v["mean_iou3d"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&iou), "{v}");

    // evaluate needs an explicit matching choice
    let o = scenefit(&["evaluate", "--pred", s(&gt), "--gt", s(&gt)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = scenefit(&["optimize", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn json_errors_are_machine_readable() {
    let o = scenefit(&["--json", "optimize", "--scene", "/no/such/scene.json", "--out", "/tmp/unused"]);
    assert_eq!(o.status.code(), Some(1));
    let line = String::from_utf8(o.stderr).unwrap();
    let v: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
    assert!(v["error"].is_string());
    assert!(v["message"].as_str().unwrap().contains("scene.json"));
}

#[test]
fn gradcheck_reports_every_term() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (init, gt, cfg, spec) = (d.join("init.json"), d.join("gt.json"), d.join("cfg.json"), d.join("spec.json"));
    std::fs::write(&cfg, r#"{"sdf_resolution": 6}"#).unwrap();
    // unperturbed scenes rest exactly on the floor, where the ground hinges have a kink
    std::fs::write(
        &spec,
        r#"{"perturbation": {"centroid_sigma": 0.2, "camera_sigma": 0.03, "body_translation_sigma": 0.05, "body_pose_sigma": 0.1}}"#,
    )
    .unwrap();
    let o = scenefit(&["synth", "--seed", "1", "--spec", s(&spec), "--out-init", s(&init), "--out-gt", s(&gt)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = scenefit(&["gradcheck", "--scene", s(&init), "--config", s(&cfg)]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["terms"].as_array().unwrap().len(), 10);
    let passed = v["passed"].as_bool().unwrap();
    assert_eq!(o.status.code(), Some(if passed { 0 } else { 2 }));
    assert!(passed, "{v}");

    // an impossible tolerance flips the exit code
    let o = scenefit(&["gradcheck", "--scene", s(&init), "--config", s(&cfg), "--tolerance", "0"]);
    assert_eq!(o.status.code(), Some(2));
}
