use std::fs;
use std::path::Path;

use super::*;
use crate::body::body_forward;
use crate::error::Error;
use crate::losses::{loss_body_ground, loss_body_penetration, loss_obj_ground, loss_scene_collision, loss_scene_reprojection, LossWeights};
use crate::mesh::{load_mesh, save_obj, shapes};

const MINIMAL: &str = r#"{
  "schema": "scenefit/1",
  "camera": {
    "intrinsics": {"fx": 500, "fy": 500, "cx": 320, "cy": 240, "width": 640, "height": 480},
    "init_pitch": 0.0,
    "init_roll": 0.0
  },
  "layout": {"centroid": [0, 0, 3], "size": [6, 3, 8], "yaw": 0},
  "objects": [
    {"label": "chair", "mesh": "builtin:cube",
     "bbox": {"centroid": [0, -1, 3], "size": [1, 1, 1], "yaw": 0},
     "detection": [250, 200, 400, 300]}
  ]
}"#;

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn schema_path(e: Error) -> String {
    match e {
        Error::Schema { path, .. } => path,
        other => panic!("expected a schema error, got {other:?}"),
    }
}

#[test]
fn minimal_scene_loads() {
    let dir = tempfile::tempdir().unwrap();
    let scene = load_scene(write(dir.path(), "s.json", MINIMAL)).unwrap();
    assert_eq!(scene.meshes.len(), 1);
    assert!(scene.template.is_none());
    let state = scene.to_state(8).unwrap();
    assert_eq!(state.objects[0].label, "chair");
    assert!(state.human.is_none());
    assert_eq!(scene.document.units, Units::default());
}

#[test]
fn missing_field_names_its_full_path() {
    let dir = tempfile::tempdir().unwrap();
    let text = MINIMAL.replace(r#""fx": 500, "#, "");
    let err = load_scene(write(dir.path(), "s.json", &text)).unwrap_err();
    assert_eq!(schema_path(err), "camera.intrinsics.fx");
}

#[test]
fn schema_violations_are_reported_by_path() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        (MINIMAL.replace("scenefit/1", "scenefit/0"), "schema"),
        (MINIMAL.replace(r#""yaw": 0}"#, r#""yaw": 0, "roll": 1}"#), "layout.roll"),
        (MINIMAL.replace("builtin:cube", "builtin:teapot"), "objects[0].mesh"),
        (MINIMAL.replace("builtin:cube", "missing.obj"), "objects[0].mesh"),
        (MINIMAL.replace(r#""size": [1, 1, 1]"#, r#""size": [1, -1, 1]"#), "objects[0].bbox"),
        (MINIMAL.replace(r#""init_roll": 0.0"#, r#""init_roll": 0.0, "extra": 1"#), "camera.extra"),
    ];
    for (text, want) in cases {
        let err = load_scene(write(dir.path(), "s.json", &text)).unwrap_err();
        assert_eq!(schema_path(err), want, "{text}");
    }
}

#[test]
fn syntax_errors_are_parse_errors() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_scene(write(dir.path(), "s.json", "{\n  \"schema\": ")).unwrap_err();
    assert!(matches!(err, Error::Parse { line: 2, .. }), "{err:?}");
}

#[test]
fn open_meshes_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "tri.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n");
    let err = load_scene(write(dir.path(), "s.json", &MINIMAL.replace("builtin:cube", "tri.obj"))).unwrap_err();
    assert!(matches!(err, Error::NotWatertight { .. }), "{err:?}");
}

fn synth(kind: FixtureKind, seed: u64) -> (SceneDocument, SceneDocument) {
    synth_scene(seed, &SynthSpec { kind, ..Default::default() }).unwrap()
}

#[test]
fn keypoint_count_mismatch_is_a_schema_error() {
    let (mut doc, _) = synth(FixtureKind::Random, 0);
    doc.human.as_mut().unwrap().keypoints_2d.pop();
    let err = Scene::from_document(doc, ".").unwrap_err();
    assert_eq!(schema_path(err), "human.keypoints_2d");
    let (mut doc, _) = synth(FixtureKind::Random, 0);
    doc.human.as_mut().unwrap().params.pose.pop();
    assert_eq!(schema_path(Scene::from_document(doc, ".").unwrap_err()), "human.params.pose");
    let (mut doc, _) = synth(FixtureKind::Random, 0);
    doc.human.as_mut().unwrap().keypoints_2d[3][2] = 1.5;
    assert_eq!(schema_path(Scene::from_document(doc, ".").unwrap_err()), "human.keypoints_2d[3]");
}

#[test]
fn documents_round_trip_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let (init, _) = synth_scene(
        4,
        &SynthSpec {
            perturbation: Perturbation {
                centroid_sigma: 0.3,
                yaw_sigma: 0.2,
                body_translation_sigma: 0.1,
                body_pose_sigma: 0.05,
                ..Default::default()
            },
            ..Default::default()
        },
    )
    .unwrap();
    let scene = Scene::from_document(init.clone(), dir.path()).unwrap();
    let p = dir.path().join("a.json");
    scene.save(&p).unwrap();
    let back = load_scene(&p).unwrap();
    assert_eq!(back.document, init);
    back.save(dir.path().join("b.json")).unwrap();
    assert_eq!(fs::read(&p).unwrap(), fs::read(dir.path().join("b.json")).unwrap());
}

#[test]
fn saving_elsewhere_keeps_mesh_references_valid() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("meshes")).unwrap();
    save_obj(&shapes::icosphere(2.0, 1), dir.path().join("meshes/ball.obj")).unwrap();
    let src = write(dir.path(), "s.json", &MINIMAL.replace("builtin:cube", "meshes/ball.obj"));
    let scene = load_scene(&src).unwrap();
    // normalized to the unit cube on load
    let (lo, hi) = scene.meshes[0].aabb();
    assert!(((hi - lo).max() - 1.0).abs() < 1e-12);
    let out = dir.path().join("deep/er/out.json");
    let mut state = scene.to_state(8).unwrap();
    state.camera.pitch = 0.125;
    save_scene(&scene, &state, &out).unwrap();
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.contains("\"../../meshes/ball.obj\""), "{text}");
    let back = load_scene(&out).unwrap();
    assert_eq!(back.document.camera.init_pitch, 0.125);
    assert_eq!(back.meshes[0], scene.meshes[0]);
}

#[test]
fn state_values_flow_back_into_the_document() {
    let (init, gt) = synth(FixtureKind::Random, 1);
    let scene = Scene::from_document(init, ".").unwrap();
    let truth = Scene::from_document(gt.clone(), ".").unwrap().to_state(8).unwrap();
    let updated = scene.with_state(&truth).unwrap();
    assert_eq!(updated.document, gt);
    let mut fewer = truth.clone();
    fewer.objects.pop();
    assert!(matches!(scene.with_state(&fewer), Err(Error::LengthMismatch { .. })));
}

#[test]
fn export_writes_every_mesh_and_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let (_, gt) = synth(FixtureKind::Random, 2);
    let state = Scene::from_document(gt, ".").unwrap().to_state(8).unwrap();
    let manifest = export_meshes(&state, dir.path()).unwrap();
    assert_eq!(manifest.meshes.len(), state.objects.len() + 2);
    let listed: ExportManifest =
        serde_json::from_str(&fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(listed, manifest);
    for e in &manifest.meshes {
        assert!(dir.path().join(&e.file).is_file(), "{}", e.file);
    }
    let body = load_mesh(dir.path().join("body.obj")).unwrap();
    let h = state.human.as_ref().unwrap();
    let want = body_forward(&h.template, &h.params);
    assert_eq!(body.faces(), want.faces());
    for (a, b) in body.vertices().iter().zip(want.vertices()) {
        assert!((a - b).norm() < 1e-9);
    }
    let chair = load_mesh(dir.path().join(&manifest.meshes[0].file)).unwrap();
    assert_eq!(chair.vertices(), state.objects[0].placed_mesh().vertices());
}

#[test]
fn synthesis_is_deterministic_per_seed() {
    let spec = SynthSpec {
        perturbation: Perturbation {
            centroid_sigma: 0.2,
            body_translation_offset: 0.5,
            ..Default::default()
        },
        ..Default::default()
    };
    let a = synth_scene(7, &spec).unwrap();
    let b = synth_scene(7, &spec).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    let c = synth_scene(8, &spec).unwrap();
    assert_ne!(a.1, c.1);
}

#[test]
fn zero_perturbation_starts_at_the_ground_truth() {
    for seed in 0..3 {
        let (init, gt) = synth(FixtureKind::Random, seed);
        assert_eq!(init, gt);
    }
}

#[test]
fn ground_truths_rest_on_the_floor_without_overlap() {
    let w = LossWeights::default();
    for seed in 0..6 {
        let (_, gt) = synth(FixtureKind::Random, seed);
        let s = Scene::from_document(gt, ".").unwrap().to_state(32).unwrap();
        assert_eq!(s.objects.len(), 3);
        assert_eq!(loss_scene_collision(&s).unwrap(), 0.0);
        assert!(loss_obj_ground(&s) < 1e-9);
        assert!(loss_body_ground(&s).unwrap() < 1e-9);
        assert!(loss_scene_reprojection(&s, &w).unwrap() < 1e-12);
        assert!(loss_body_penetration(&s).unwrap() < 1e-6, "seed {seed}");
    }
}

#[test]
fn perturbation_offsets_have_the_requested_size() {
    let spec = SynthSpec {
        perturbation: Perturbation {
            body_translation_offset: 0.5,
            ..Default::default()
        },
        ..Default::default()
    };
    let (init, gt) = synth_scene(3, &spec).unwrap();
    let d = init.human.unwrap().params.translation - gt.human.unwrap().params.translation;
    assert!((d.norm() - 0.5).abs() < 1e-12);
    assert_eq!(init.objects, gt.objects);
}

#[test]
fn floating_box_fixture_lifts_the_first_object() {
    let (init, gt) = synth(FixtureKind::FloatingBox, 0);
    let dy = init.objects[0].bbox.centroid() - gt.objects[0].bbox.centroid();
    assert!((dy - crate::geometry::Vec3::new(0.0, 0.5, 0.0)).norm() < 1e-12);
    assert_eq!(init.objects[1..], gt.objects[1..]);
    let s = Scene::from_document(init, ".").unwrap().to_state(8).unwrap();
    assert!((loss_obj_ground(&s) - 0.5 / 3.0).abs() < 1e-9);
}

#[test]
fn interpenetrating_fixture_penetrates_consistently_with_observations() {
    let (init, gt) = synth(FixtureKind::InterpenetratingBody, 0);
    assert_eq!(init, gt);
    let s = Scene::from_document(gt, ".").unwrap().to_state(32).unwrap();
    assert!(loss_body_penetration(&s).unwrap() > 0.05);
    assert!(loss_body_ground(&s).unwrap() < 1e-9);
    assert!(crate::losses::loss_keypoint_reprojection(&s, &LossWeights::default()).unwrap() < 1e-12);
}

#[test]
fn impossible_rooms_fail_placement() {
    let spec = SynthSpec {
        room_size_min: [2.0, 2.8, 3.0],
        room_size_max: [2.0, 2.8, 3.0],
        object_size_min: [1.5, 0.5, 1.5],
        object_size_max: [1.5, 0.5, 1.5],
        human: false,
        ..Default::default()
    };
    assert!(matches!(
        synth_scene(0, &spec),
        Err(Error::PlacementFailed {
            attempts: MAX_PLACEMENT_ATTEMPTS
        })
    ));
}

#[test]
fn synth_specs_validate() {
    let mut spec = SynthSpec::default();
    spec.object_count = 0;
    assert!(spec.validate().is_err());
    let mut spec = SynthSpec::default();
    spec.perturbation.centroid_sigma = -1.0;
    assert_eq!(schema_path(spec.validate().unwrap_err()), "perturbation.centroid_sigma");
    let mut spec = SynthSpec::default();
    spec.kind = FixtureKind::InterpenetratingBody;
    spec.human = false;
    assert!(spec.validate().is_err());
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "spec.json", r#"{"kind": "floating-box", "perturbation": {"centroid_sigma": 0.1}}"#);
    let spec = load_synth_spec(p).unwrap();
    assert_eq!(spec.kind, FixtureKind::FloatingBox);
    assert_eq!(spec.perturbation.centroid_sigma, 0.1);
    assert_eq!(spec.object_count, 3);
}

#[test]
fn config_defaults_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = load_config(write(dir.path(), "c.json", "{}")).unwrap();
    assert_eq!(cfg, RunConfig::default());
    assert_eq!(cfg.sdf_resolution, 32);
    let cfg = load_config(write(dir.path(), "c.json", r#"{"weights": {"lambda_contact": 5}, "seed": 3}"#)).unwrap();
    assert_eq!(cfg.weights.lambda_contact, 5.0);
    assert_eq!(cfg.weights.lambda_collision, 0.1);
    assert_eq!(cfg.seed, 3);
    let err = load_config(write(dir.path(), "c.json", r#"{"schedule": {"lr_body": 1}}"#)).unwrap_err();
    assert_eq!(schema_path(err), "schedule.lr_body");
    let err = load_config(write(dir.path(), "c.json", r#"{"sdf_resolution": 1}"#)).unwrap_err();
    assert_eq!(schema_path(err), "sdf_resolution");
    let err = load_config(write(dir.path(), "c.json", r#"{"outputs": {"scene": "/abs.json"}}"#)).unwrap_err();
    assert_eq!(schema_path(err), "outputs.scene");
    assert!(load_config(write(dir.path(), "c.json", r#"{"weights": {"sigma_contact": -1}}"#)).is_err());
}
