use std::f64::consts::PI;
use std::sync::Arc;

use super::*;
use crate::body::{default_template, BodyParams, BodyTemplate, Joint, TemplateParts};
use crate::geometry::{project_box_to_rect, BBox3D, CameraPose, Intrinsics, Rect2D, RoomLayout, Vec2, Vec3};
use crate::mesh::{shapes, signed_distance, TriMesh};

fn intr() -> Intrinsics {
    Intrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
}

fn room() -> RoomLayout {
    RoomLayout::new(BBox3D::axis_aligned(Vec3::new(0.0, 0.0, 3.0), Vec3::new(6.0, 3.0, 8.0)).unwrap())
}

/// Object whose detection is the exact projection of its box under `cam`.
fn object(label: &str, bbox: BBox3D, cam: &CameraPose) -> SceneObject {
    SceneObject {
        label: label.into(),
        bbox,
        mesh: Arc::new(shapes::cube(2)),
        detection: project_box_to_rect(&bbox, cam, &intr()).unwrap(),
    }
}

fn floor_box(x: f64, z: f64, size: Vec3) -> BBox3D {
    let floor = room().floor_height();
    BBox3D::axis_aligned(Vec3::new(x, floor + size.y / 2.0, z), size).unwrap()
}

fn scene(objects: Vec<SceneObject>, human: Option<HumanState>, res: usize) -> SceneState {
    SceneState::new(intr(), CameraPose::default(), room(), objects, human, res).unwrap()
}

/// Default body standing on the floor facing the camera, keypoints projected exactly.
fn standing_human(cam: &CameraPose, x: f64, z: f64) -> HumanState {
    let t = Arc::new(default_template());
    let mut params = BodyParams::neutral(t.joint_count());
    params.global_rotation = Vec3::new(0.0, PI, 0.0);
    let min_y = t.mesh().vertices().iter().map(|v| v.y).fold(f64::INFINITY, f64::min);
    params.translation = Vec3::new(x, room().floor_height() - min_y, z);
    let keypoints = exact_keypoints(&t, &params, cam);
    HumanState {
        template: t,
        params,
        keypoints,
    }
}

fn exact_keypoints(t: &BodyTemplate, params: &BodyParams, cam: &CameraPose) -> Vec<Keypoint> {
    let joints = crate::body::body_joints3d(t, params);
    t.keypoint_map()
        .iter()
        .map(|&j| Keypoint {
            pixel: crate::geometry::project_point(&cam.world_to_camera(&joints[j]), &intr()).unwrap(),
            confidence: 1.0,
        })
        .collect()
}

#[test]
fn smooth_l1_and_geman_mcclure_examples() {
    assert_eq!(smooth_l1(0.0, 1.0), 0.0);
    assert!((smooth_l1(0.7, 0.7) - 0.35).abs() < 1e-15);
    assert!((smooth_l1(0.7 - 1e-12, 0.7) - 0.35).abs() < 1e-11);
    assert_eq!(smooth_l1(2.0, 1.0), 1.5);
    assert_eq!(smooth_l1(-2.0, 1.0), 1.5);
    assert_eq!(geman_mcclure(0.0, 3.0), 0.0);
    assert!((geman_mcclure(3.0, 3.0) - 4.5).abs() < 1e-12);
    assert!(geman_mcclure(300.0, 3.0) >= 0.9999 * 9.0);
    assert!(geman_mcclure(1e9, 3.0) <= 9.0);
}

#[test]
fn weights_default_to_published_lambdas() {
    let w = LossWeights::default();
    assert_eq!(
        [
            w.lambda_reprojection,
            w.lambda_collision,
            w.lambda_object_ground,
            w.lambda_body_ground,
            w.lambda_contact,
            w.lambda_body_penetration
        ],
        [1.0, 0.1, 10.0, 20.0, 1e3, 1e2]
    );
    w.validate().unwrap();
    let mut bad = w;
    bad.sigma_contact = 0.0;
    assert!(bad.validate().is_err());
    bad = w;
    bad.lambda_contact = -1.0;
    assert!(bad.validate().is_err());
}

#[test]
fn reprojection_examples() {
    let cam = CameraPose::default();
    let w = LossWeights::default();
    let a = object("a", floor_box(-0.5, 3.0, Vec3::new(0.8, 0.9, 0.6)), &cam);
    let s = scene(vec![a.clone()], None, 4);
    assert_eq!(loss_scene_reprojection(&s, &w).unwrap(), 0.0);

    // every rect coordinate off by beta
    let beta = w.smooth_l1_beta;
    let mut shifted = a.clone();
    let d = a.detection;
    shifted.detection = Rect2D::new(d.xmin + beta, d.ymin - beta, d.xmax + beta, d.ymax - beta).unwrap();
    let s = scene(vec![shifted.clone()], None, 4);
    let v = loss_scene_reprojection(&s, &w).unwrap();
    assert!((v - 8.0 * 0.5 * beta).abs() < 1e-9, "{v}");

    // duplicating the object leaves the mean unchanged
    let s2 = scene(vec![shifted.clone(), shifted], None, 4);
    assert!((loss_scene_reprojection(&s2, &w).unwrap() - v).abs() < 1e-12);

    // a box behind the camera is an error naming the object
    let behind = object("ghost", floor_box(0.0, 3.0, Vec3::repeat(0.5)), &cam);
    let mut s3 = scene(vec![behind], None, 4);
    s3.objects[0].bbox = BBox3D::axis_aligned(Vec3::new(0.0, 0.0, -2.0), Vec3::repeat(0.5)).unwrap();
    let err = loss_scene_reprojection(&s3, &w).unwrap_err();
    assert!(err.to_string().contains("ghost"), "{err}");
}

/// Brute-force collision oracle using exact per-mesh signed distances at every cell.
fn collision_oracle(s: &SceneState, res: usize) -> f64 {
    let placed: Vec<TriMesh> = s.objects.iter().map(|o| o.placed_mesh()).collect();
    let n = s.objects.len() as f64;
    let mut total = 0.0;
    for (i, o) in s.objects.iter().enumerate() {
        for u in collision_cells(res) {
            let x = o.bbox.centroid() + o.bbox.rotation() * u.component_mul(&o.bbox.size());
            let d = placed
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, m)| signed_distance(&x, m).unwrap())
                .fold(f64::INFINITY, f64::min);
            if d < 0.0 {
                total += d * d;
            }
        }
    }
    total / n
}

#[test]
fn collision_matches_brute_force_oracle() {
    let cam = CameraPose::default();
    let a = object("a", floor_box(0.0, 3.0, Vec3::repeat(1.0)), &cam);
    let b = object("b", floor_box(0.5, 3.0, Vec3::repeat(1.0)), &cam);
    let s = scene(vec![a.clone(), b.clone()], None, 8);
    let v = loss_scene_collision(&s).unwrap();
    let oracle = collision_oracle(&s, 8);
    assert!(v > 0.0);
    assert!((v - oracle).abs() < 1e-9, "{v} vs {oracle}");

    // relabeling objects changes nothing
    let swapped = scene(vec![b, a.clone()], None, 8);
    assert!((loss_scene_collision(&swapped).unwrap() - v).abs() < 1e-12);

    // a single object has nothing to collide with
    assert_eq!(loss_scene_collision(&scene(vec![a.clone()], None, 8)).unwrap(), 0.0);

    // well separated boxes
    let far = object("far", floor_box(2.2, 3.0, Vec3::repeat(1.0)), &cam);
    assert_eq!(loss_scene_collision(&scene(vec![a, far], None, 8)).unwrap(), 0.0);
}

#[test]
fn object_ground_examples() {
    let cam = CameraPose::default();
    let a = object("a", floor_box(-1.0, 3.0, Vec3::repeat(0.6)), &cam);
    let mut b = object("b", floor_box(1.0, 3.0, Vec3::repeat(0.6)), &cam);
    assert_eq!(loss_obj_ground(&scene(vec![a.clone(), b.clone()], None, 4)), 0.0);
    b.bbox = b.bbox.with_centroid(b.bbox.centroid() + Vec3::new(0.0, 0.3, 0.0)).unwrap();
    let s = scene(vec![a.clone(), b.clone()], None, 4);
    assert!((loss_obj_ground(&s) - 0.15).abs() < 1e-12);

    // raise the floor and every box together
    let mut raised = s.clone();
    let dy = Vec3::new(0.0, 0.37, 0.0);
    raised.layout = RoomLayout::new(raised.layout.bbox.with_centroid(raised.layout.bbox.centroid() + dy).unwrap());
    for o in &mut raised.objects {
        o.bbox = o.bbox.with_centroid(o.bbox.centroid() + dy).unwrap();
    }
    assert!((loss_obj_ground(&raised) - 0.15).abs() < 1e-12);

    // duplicating pairs keeps the mean
    let dup = scene(vec![a.clone(), b.clone(), a, b], None, 4);
    assert!((loss_obj_ground(&dup) - 0.15).abs() < 1e-12);
}

#[test]
fn body_ground_examples() {
    let cam = CameraPose::default();
    let h = standing_human(&cam, 0.0, 3.0);
    let mut s = scene(vec![], Some(h), 4);
    assert!(loss_body_ground(&s).unwrap() < 1e-12);
    s.human.as_mut().unwrap().params.translation.y += 0.2;
    assert!((loss_body_ground(&s).unwrap() - 0.2).abs() < 1e-12);
    s.human.as_mut().unwrap().params.translation.y -= 0.3;
    assert!((loss_body_ground(&s).unwrap() - 0.1).abs() < 1e-12);
}

/// Three-vertex body whose vertices are all contact vertices.
fn point_body(points: [Vec3; 3]) -> HumanState {
    let mesh = TriMesh::new(points.to_vec(), vec![[0, 1, 2]]).unwrap();
    let t = BodyTemplate::new(TemplateParts {
        mesh,
        joints: vec![Joint {
            name: "root".into(),
            parent: None,
            offset: [0.0; 3],
        }],
        skinning: vec![vec![(0, 1.0)]; 3],
        regressor: vec![],
        contact_vertices: vec![0, 1, 2],
        keypoint_map: vec![],
        capsules: vec![],
        bend_joints: vec![],
    })
    .unwrap();
    HumanState {
        template: Arc::new(t),
        params: BodyParams::neutral(1),
        keypoints: vec![],
    }
}

#[test]
fn contact_examples() {
    let cam = CameraPose::default();
    let w = LossWeights::default();
    let bbox = floor_box(0.0, 3.0, Vec3::repeat(1.0));
    let a = object("a", bbox, &cam);
    let c = bbox.corners();
    let s = scene(vec![a.clone()], Some(point_body([c[0], c[3], c[6]])), 4);
    assert!(loss_contact(&s, &w).unwrap() < 1e-24);

    // one vertex pushed out along -x by sigma from its corner
    let sig = w.sigma_contact;
    let s = scene(vec![a.clone()], Some(point_body([c[0] - Vec3::x() * sig, c[3], c[6]])), 4);
    let v = loss_contact(&s, &w).unwrap();
    assert!((v - sig * sig / 2.0).abs() < 1e-12, "{v}");

    // bounded by |V_C| sigma²
    let s = scene(vec![a], Some(point_body([Vec3::repeat(50.0), Vec3::repeat(-40.0), Vec3::new(9.0, 0.0, 0.0)])), 4);
    assert!(loss_contact(&s, &w).unwrap() <= 3.0 * sig * sig);

    let none = scene(vec![], Some(point_body([c[0], c[3], c[6]])), 4);
    assert!(matches!(loss_contact(&none, &w), Err(crate::Error::NoObjects)));
}

#[test]
fn body_penetration_examples() {
    let cam = CameraPose::default();
    let bbox = floor_box(0.0, 3.0, Vec3::repeat(1.0));
    let a = object("a", bbox, &cam);
    // one vertex 0.1 m inside the top face, others far outside
    let top = bbox.centroid() + Vec3::new(0.13, 0.4, 0.07);
    let s = scene(
        vec![a.clone()],
        Some(point_body([top, top + Vec3::new(0.0, 1.5, 0.0), top + Vec3::new(0.0, 1.5, 0.4)])),
        32,
    );
    let v = loss_body_penetration(&s).unwrap();
    assert!((v - 0.01).abs() < 2e-3, "{v}");

    // per-vertex agreement with exact signed distance at resolution 8
    let s = scene(
        vec![a.clone()],
        Some(point_body([
            bbox.centroid() + Vec3::new(0.3, 0.2, -0.1),
            bbox.centroid() + Vec3::new(-0.45, 0.1, 0.2),
            bbox.centroid() + Vec3::new(0.0, 0.62, 0.0),
        ])),
        8,
    );
    let grid = s.fields.body_union.as_ref().unwrap();
    let placed = s.objects[0].placed_mesh();
    for v in s.body_mesh().unwrap().vertices() {
        let exact = signed_distance(v, &placed).unwrap();
        assert!((grid.query(v).value - exact).abs() <= 2.0 * grid.max_cell(), "{v:?}");
    }

    // far away body
    let far = scene(vec![a], Some(point_body([Vec3::new(5.0, 0.0, 5.0), Vec3::new(5.0, 1.0, 5.0), Vec3::new(5.5, 0.0, 5.0)])), 8);
    assert_eq!(loss_body_penetration(&far).unwrap(), 0.0);
}

#[test]
fn keypoint_examples() {
    let cam = CameraPose::default();
    let w = LossWeights::default();
    let h = standing_human(&cam, 0.2, 3.5);
    let mut s = scene(vec![], Some(h), 4);
    assert!(loss_keypoint_reprojection(&s, &w).unwrap() < 1e-12);

    let sig = w.sigma_keypoint;
    s.human.as_mut().unwrap().keypoints[4].pixel.x += sig;
    let v = loss_keypoint_reprojection(&s, &w).unwrap();
    assert!((v - sig * sig / 2.0).abs() < 1e-6, "{v}");

    s.human.as_mut().unwrap().keypoints[4].confidence = 0.0;
    assert!(loss_keypoint_reprojection(&s, &w).unwrap() < 1e-12);

    // everything behind the camera saturates
    s.human.as_mut().unwrap().params.translation.z = -5.0;
    let v = loss_keypoint_reprojection(&s, &w).unwrap();
    assert!((v - 16.0 * sig * sig).abs() < 1e-6, "{v}");
}

#[test]
fn body_total_examples() {
    let cam = CameraPose::default();
    let mut w = LossWeights::default();
    let h = standing_human(&cam, 0.0, 3.0);
    let n_bend = h.template.bend_joints().len() as f64;
    let mut s = scene(vec![], Some(h), 4);
    assert!((loss_body_total(&s, &w).unwrap() - w.w_bend * n_bend).abs() < 1e-9);

    let hm = s.human.as_mut().unwrap();
    hm.params.pose[3] = Vec3::new(0.2, -0.1, 0.3);
    hm.keypoints[0].pixel += Vec2::new(3.0, -4.0);
    let kp = loss_keypoint_reprojection(&s, &w).unwrap();
    let prior = crate::body::pose_prior(&s.human.as_ref().unwrap().params);
    let base = loss_body_total(&s, &w).unwrap();
    w.w_pose_prior *= 2.0;
    let doubled = loss_body_total(&s, &w).unwrap();
    assert!((doubled - base - prior * (w.w_pose_prior / 2.0)).abs() < 1e-9);

    w.w_pose_prior = 0.0;
    w.w_bend = 0.0;
    w.w_selfpen = 0.0;
    assert!((loss_body_total(&s, &w).unwrap() - kp).abs() < 1e-12);
}

fn full_scene() -> SceneState {
    let cam = CameraPose::new(0.12, -0.03);
    let a = object("table", floor_box(0.6, 3.2, Vec3::new(0.9, 0.75, 0.6)), &cam);
    let b = object("chair", floor_box(1.1, 3.4, Vec3::new(0.5, 0.9, 0.5)), &cam);
    let mut h = standing_human(&cam, -0.1, 3.3);
    h.params.pose[6] = Vec3::new(-0.4, 0.1, 0.2);
    h.keypoints[2].pixel += Vec2::new(5.0, 2.0);
    let mut s = SceneState::new(intr(), cam, room(), vec![a, b], Some(h), 8).unwrap();
    s.objects[1].bbox = s.objects[1]
        .bbox
        .with_centroid(s.objects[1].bbox.centroid() + Vec3::new(0.0, 0.2, 0.0))
        .unwrap();
    s.rebuild_fields(8).unwrap();
    s
}

#[test]
fn total_recombines_and_is_linear_in_each_lambda() {
    let s = full_scene();
    let w = LossWeights::default();
    let total = loss_total(&s, &w).unwrap();
    let obj = Objective::new(ObjectiveKind::Total);
    assert!((total.recombine(&obj, &w) - total.total).abs() <= 1e-12 * total.total.abs().max(1.0));
    for t in Term::ALL {
        assert!(total.terms.contains_key(&t), "missing {t}");
    }

    let lambdas: [fn(&mut LossWeights) -> &mut f64; 6] = [
        |w| &mut w.lambda_reprojection,
        |w| &mut w.lambda_collision,
        |w| &mut w.lambda_object_ground,
        |w| &mut w.lambda_body_ground,
        |w| &mut w.lambda_contact,
        |w| &mut w.lambda_body_penetration,
    ];
    for get in lambdas {
        let at = |v: f64| {
            let mut w2 = w;
            *get(&mut w2) = v;
            loss_total(&s, &w2).unwrap().total
        };
        let (l0, l1, l2) = (at(0.0), at(1.0), at(2.0));
        assert!(((l2 - l1) - (l1 - l0)).abs() <= 1e-12 * l2.abs().max(1.0));
    }

    // all lambdas zero leaves the body objective
    let mut w0 = w;
    for get in lambdas {
        *get(&mut w0) = 0.0;
    }
    let body = loss_body_total(&s, &w).unwrap();
    assert!((loss_total(&s, &w0).unwrap().total - body).abs() <= 1e-12 * body.max(1.0));
}

#[test]
fn total_applies_published_weights_to_known_terms() {
    let s = full_scene();
    let w = LossWeights::default();
    let b = loss_total(&s, &w).unwrap();
    let want = loss_body_total(&s, &w).unwrap()
        + 1.0 * loss_scene_reprojection(&s, &w).unwrap()
        + 0.1 * loss_scene_collision(&s).unwrap()
        + 10.0 * loss_obj_ground(&s)
        + 20.0 * loss_body_ground(&s).unwrap()
        + 1e3 * loss_contact(&s, &w).unwrap()
        + 1e2 * loss_body_penetration(&s).unwrap();
    assert!((b.total - want).abs() <= 1e-12 * want.abs());
    // the floating chair gives a known object-ground value
    assert!((b.get(Term::ObjectGround) - 0.1).abs() < 1e-12);
}

#[test]
fn face_order_does_not_matter() {
    let s = full_scene();
    let w = LossWeights::default();
    let base = loss_total(&s, &w).unwrap();
    let mut r = s.clone();
    for o in &mut r.objects {
        let mut faces = o.mesh.faces().to_vec();
        faces.reverse();
        faces.rotate_left(7);
        o.mesh = Arc::new(TriMesh::new(o.mesh.vertices().to_vec(), faces).unwrap());
    }
    r.rebuild_fields(8).unwrap();
    let again = loss_total(&r, &w).unwrap();
    for t in Term::ALL {
        let (a, b) = (base.get(t), again.get(t));
        assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "{t}: {a} vs {b}");
    }
}

#[test]
fn every_loss_is_zero_or_at_floor_on_a_perfect_scene() {
    let cam = CameraPose::default();
    let a = object("a", floor_box(0.8, 3.0, Vec3::new(0.8, 0.7, 0.6)), &cam);
    let h = standing_human(&cam, -0.5, 3.0);
    let s = SceneState::new(intr(), cam, room(), vec![a], Some(h), 8).unwrap();
    let w = LossWeights::default();
    let b = loss_total(&s, &w).unwrap();
    for t in [
        Term::Keypoint,
        Term::PosePrior,
        Term::SelfPenetration,
        Term::SceneReprojection,
        Term::SceneCollision,
        Term::ObjectGround,
        Term::BodyGround,
        Term::BodyPenetration,
    ] {
        assert!(b.get(t).abs() < 1e-9, "{t} = {}", b.get(t));
    }
    assert_eq!(b.get(Term::Bending), 4.0);
    assert!(b.get(Term::Contact) > 0.0);
}

#[test]
fn term_parses_from_its_name() {
    for t in Term::ALL {
        assert_eq!(t.name().parse::<Term>().unwrap(), t);
    }
    assert!("nope".parse::<Term>().is_err());
}


/// Distance from `p` to the segment `a-b`, by minimizing over a dense parameter sweep and
/// then refining around the best sample.
fn segment_distance_oracle(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let at = |t: f64| (a + (b - a) * t - p).norm();
    let n = 2000;
    let best = (0..=n).min_by(|&i, &j| at(i as f64 / n as f64).total_cmp(&at(j as f64 / n as f64))).unwrap();
    let (mut lo, mut hi) = (((best as f64 - 1.0) / n as f64).max(0.0), ((best as f64 + 1.0) / n as f64).min(1.0));
    for _ in 0..100 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if at(m1) < at(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    at(0.5 * (lo + hi))
}

#[test]
fn body_penetration_adds_object_cells_inside_the_body() {
    let cam = CameraPose::default();
    let h = standing_human(&cam, 0.0, 3.5);
    // a box through the torso, leaving most body vertices outside
    let joints = h.template.pose(&h.params).joints_world;
    let spine = joints[1];
    let bbox = BBox3D::new(spine + Vec3::new(0.35, 0.0, 0.0), Vec3::new(0.6, 0.3, 0.4), 0.3).unwrap();
    let far = floor_box(-2.5, 6.0, Vec3::repeat(0.5));
    let res = 8;
    let s = scene(vec![object("a", bbox, &cam), object("far", far, &cam)], Some(h.clone()), res);

    let grid = s.fields.body_union.as_ref().unwrap();
    let vertex_half: f64 = s
        .body_mesh()
        .unwrap()
        .vertices()
        .iter()
        .map(|v| grid.query(v).value.min(0.0).powi(2))
        .sum();
    let t = &h.template;
    let mut cell_half = 0.0;
    for o in &s.objects {
        for u in collision_cells(res) {
            let p = o.bbox.centroid() + o.bbox.rotation() * u.component_mul(&o.bbox.size());
            let d = t
                .capsules()
                .iter()
                .map(|c| {
                    let a = joints[t.joints()[c.bone].parent.unwrap()];
                    segment_distance_oracle(&p, &a, &joints[c.bone]) - c.radius
                })
                .fold(f64::INFINITY, f64::min);
            cell_half += d.min(0.0).powi(2);
        }
    }
    cell_half /= 2.0;
    assert!(cell_half > 0.0);
    let v = loss_body_penetration(&s).unwrap();
    assert!((v - (vertex_half + cell_half)).abs() < 1e-9, "{v} vs {vertex_half} + {cell_half}");
}
