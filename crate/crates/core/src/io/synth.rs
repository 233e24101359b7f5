//! Seeded synthetic scenes: a ground truth with exact observations plus a perturbed start.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::document::{from_json, CameraSection, HumanSection, ObjectSection, Scene, SceneDocument, Units, SCHEMA_VERSION};
use crate::body::{body_joints3d, default_template, BodyParams, BodyTemplate};
use crate::error::{Error, Result};
use crate::geometry::{project_box_to_rect, project_point, BBox3D, CameraPose, Intrinsics, Vec2, Vec3};
use crate::losses::{loss_obj_ground, loss_scene_collision};

/// Rejection-sampling budget shared by every placement in one scene.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

const LABELS: [&str; 6] = ["chair", "table", "cabinet", "sofa", "desk", "shelf"];
/// Horizontal clearance between generated objects, meters.
const CLEARANCE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FixtureKind {
    /// Objects on the floor and a body standing beside the first one.
    #[default]
    Random,
    /// As `Random`, with the first object's starting box lifted by `float_height`.
    FloatingBox,
    /// The body stands inside the front of the first object, and every observation agrees
    /// with that pose. The ground truth is the penetrating configuration itself.
    InterpenetratingBody,
}

/// Noise applied to the ground truth to form the starting estimate. Observations are not
/// perturbed.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Perturbation {
    /// Per-axis normal noise on box centroids, meters.
    pub centroid_sigma: f64,
    /// Per-axis normal noise on box sizes, meters.
    pub size_sigma: f64,
    /// Radians.
    pub yaw_sigma: f64,
    /// Radians, on pitch and roll.
    pub camera_sigma: f64,
    /// Per-axis normal noise on the body translation, meters.
    pub body_translation_sigma: f64,
    /// Body translation offset of exactly this length in a random direction, meters.
    pub body_translation_offset: f64,
    /// Per-component normal noise on joint rotations, radians.
    pub body_pose_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub kind: FixtureKind,
    pub intrinsics: Intrinsics,
    /// Camera height above the floor; the camera sits at the world origin.
    pub camera_height: f64,
    pub camera_pitch: f64,
    pub camera_roll: f64,
    /// Room width, height and depth ranges, meters.
    pub room_size_min: [f64; 3],
    pub room_size_max: [f64; 3],
    pub object_count: usize,
    pub object_size_min: [f64; 3],
    pub object_size_max: [f64; 3],
    /// Range of object distances in front of the camera, meters.
    pub object_depth: [f64; 2],
    pub human: bool,
    pub float_height: f64,
    pub penetration_depth: f64,
    pub perturbation: Perturbation,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            kind: FixtureKind::Random,
            intrinsics: Intrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).expect("valid intrinsics"),
            camera_height: 1.4,
            camera_pitch: 0.0,
            camera_roll: 0.0,
            room_size_min: [5.0, 2.8, 6.0],
            room_size_max: [7.0, 3.2, 8.0],
            object_count: 3,
            object_size_min: [0.4, 0.4, 0.4],
            object_size_max: [1.2, 1.0, 1.2],
            object_depth: [2.5, 5.5],
            human: true,
            float_height: 0.5,
            penetration_depth: 0.15,
            perturbation: Perturbation::default(),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| Err(Error::schema(field, reason));
        for k in 0..3 {
            if !(self.room_size_min[k] > 0.0 && self.room_size_min[k] <= self.room_size_max[k]) {
                return bad("room_size_min", "room sizes must be positive with min <= max");
            }
            if !(self.object_size_min[k] > 0.0 && self.object_size_min[k] <= self.object_size_max[k]) {
                return bad("object_size_min", "object sizes must be positive with min <= max");
            }
        }
        if !(self.object_depth[0] > 0.0 && self.object_depth[0] <= self.object_depth[1]) {
            return bad("object_depth", "depths must be positive with min <= max");
        }
        if !(self.camera_height > 0.0) {
            return bad("camera_height", "must be positive");
        }
        if self.object_count == 0 {
            return bad("object_count", "at least one object is required");
        }
        if self.kind == FixtureKind::InterpenetratingBody && !self.human {
            return bad("human", "the interpenetrating-body fixture needs a human");
        }
        if !(self.penetration_depth > 0.0) || !(self.float_height >= 0.0) {
            return bad("penetration_depth", "penetration_depth must be positive and float_height non-negative");
        }
        let p = &self.perturbation;
        for (name, v) in [
            ("centroid_sigma", p.centroid_sigma),
            ("size_sigma", p.size_sigma),
            ("yaw_sigma", p.yaw_sigma),
            ("camera_sigma", p.camera_sigma),
            ("body_translation_sigma", p.body_translation_sigma),
            ("body_translation_offset", p.body_translation_offset),
            ("body_pose_sigma", p.body_pose_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(&format!("perturbation.{name}"), "must be finite and non-negative");
            }
        }
        Ok(())
    }
}

pub fn load_synth_spec(path: impl AsRef<Path>) -> Result<SynthSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let spec: SynthSpec = from_json(&text, path)?;
    spec.validate()?;
    Ok(spec)
}

fn normal3(rng: &mut ChaCha8Rng) -> Vec3 {
    Vec3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal))
}

fn uniform3(rng: &mut ChaCha8Rng, lo: &[f64; 3], hi: &[f64; 3]) -> Vec3 {
    Vec3::from_fn(|k, _| if lo[k] < hi[k] { rng.gen_range(lo[k]..hi[k]) } else { lo[k] })
}

/// Signed distance from `p` to a box: negative inside.
fn box_distance(b: &BBox3D, p: &Vec3) -> f64 {
    let local = b.rotation().transpose() * (p - b.centroid());
    let q = local.abs() - b.size() / 2.0;
    let outside = q.sup(&Vec3::zeros()).norm();
    outside + q.max().min(0.0)
}

fn footprint_radius(b: &BBox3D) -> f64 {
    0.5 * (b.size().x.powi(2) + b.size().z.powi(2)).sqrt()
}

fn xz_distance(a: &Vec3, b: &Vec3) -> f64 {
    ((a.x - b.x).powi(2) + (a.z - b.z).powi(2)).sqrt()
}

/// Horizontal disk covering a point set.
fn xz_disk(points: &[Vec3]) -> (Vec3, f64) {
    let mut lo = points[0];
    let mut hi = points[0];
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let c = (lo + hi) / 2.0;
    let r = points.iter().map(|p| xz_distance(p, &c)).fold(0.0, f64::max);
    (Vec3::new(c.x, 0.0, c.z), r)
}

struct Room {
    layout: BBox3D,
    floor: f64,
}

impl Room {
    /// True if a horizontal disk lies inside the walls with a small margin.
    fn holds(&self, c: &Vec3, r: f64) -> bool {
        let (lo, hi) = self.layout.aabb();
        c.x - r > lo.x + 0.05 && c.x + r < hi.x - 0.05 && c.z - r > lo.z + 0.05 && c.z + r < hi.z - 0.05
    }
}

struct Sampler<'a> {
    rng: ChaCha8Rng,
    spec: &'a SynthSpec,
    room: Room,
    cam: CameraPose,
    attempts: usize,
}

impl Sampler<'_> {
    fn attempt(&mut self) -> Result<()> {
        self.attempts += 1;
        if self.attempts > MAX_PLACEMENT_ATTEMPTS {
            return Err(Error::PlacementFailed {
                attempts: MAX_PLACEMENT_ATTEMPTS,
            });
        }
        Ok(())
    }

    fn in_view(&self, points: &[Vec3]) -> bool {
        points.iter().all(|p| self.cam.world_to_camera(p).z > 0.5)
    }

    /// One box on the floor, clear of `boxes` and of the disk `avoid`.
    fn place_object(&mut self, boxes: &[BBox3D], avoid: Option<(Vec3, f64)>) -> Result<BBox3D> {
        loop {
            self.attempt()?;
            let spec = self.spec;
            let size = uniform3(&mut self.rng, &spec.object_size_min, &spec.object_size_max);
            let yaw = self.rng.gen_range(-PI..PI);
            let z = self.rng.gen_range(spec.object_depth[0]..=spec.object_depth[1]);
            let half_fov = 0.8 * spec.intrinsics.cx / spec.intrinsics.fx;
            let x = self.rng.gen_range(-1.0..=1.0) * z * half_fov;
            let b = BBox3D::new(Vec3::new(x, self.room.floor + size.y / 2.0, z), size, yaw)?;
            let r = footprint_radius(&b);
            let c = b.centroid();
            if !self.room.holds(&c, r) || !self.in_view(&b.corners()) {
                continue;
            }
            if boxes.iter().any(|o| xz_distance(&c, &o.centroid()) < r + footprint_radius(o) + CLEARANCE) {
                continue;
            }
            if avoid.is_some_and(|(ac, ar)| xz_distance(&c, &ac) < r + ar + CLEARANCE) {
                continue;
            }
            return Ok(b);
        }
    }

    /// Body facing the camera with its lowest vertex on the floor and its horizontal center
    /// at `center`.
    fn stand(&self, t: &BodyTemplate, yaw: f64, center: Vec3) -> (BodyParams, Vec<Vec3>) {
        let mut params = BodyParams::neutral(t.joint_count());
        params.global_rotation = Vec3::new(0.0, yaw, 0.0);
        let posed = t.pose(&params).vertices;
        let min_y = posed.iter().map(|v| v.y).fold(f64::INFINITY, f64::min);
        let (c0, _) = xz_disk(&posed);
        params.translation = Vec3::new(center.x - c0.x, self.room.floor - min_y, center.z - c0.z);
        let posed = t.pose(&params).vertices;
        (params, posed)
    }

    /// Body beside `anchor` with its nearest contact vertex about 1 cm from the box.
    fn place_body_beside(&mut self, t: &BodyTemplate, anchor: &BBox3D) -> Result<Option<BodyParams>> {
        self.attempt()?;
        let yaw = PI + self.rng.gen_range(-0.3..0.3);
        let side = if self.rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let (_, body_r) = xz_disk(&t.pose(&BodyParams::neutral(t.joint_count())).vertices);
        let dir = Vec3::new(side, 0.0, 0.0);
        let mut center = anchor.centroid() + dir * (footprint_radius(anchor) + body_r + 0.05);
        let (mut params, mut posed) = self.stand(t, yaw, center);
        for _ in 0..4 {
            let contact = t
                .contact_vertices()
                .iter()
                .map(|&i| box_distance(anchor, &posed[i]))
                .fold(f64::INFINITY, f64::min);
            let any = posed.iter().map(|v| box_distance(anchor, v)).fold(f64::INFINITY, f64::min);
            let step = (contact - 0.01).min(any - 0.005);
            if step <= 1e-4 {
                break;
            }
            center -= dir * step;
            (params, posed) = self.stand(t, yaw, center);
        }
        Ok(self.body_ok(t, &params, &posed, anchor, false).then_some(params))
    }

    /// Body in front of `anchor` along the viewing ray, sunk `penetration_depth` into it.
    fn place_body_inside(&mut self, t: &BodyTemplate, anchor: &BBox3D) -> Result<Option<BodyParams>> {
        self.attempt()?;
        let yaw = PI + self.rng.gen_range(-0.3..0.3);
        let c = anchor.centroid();
        let ray = Vec3::new(c.x, 0.0, c.z).normalize();
        let depth_at = |s: f64| -> (f64, BodyParams, Vec<Vec3>) {
            let (params, posed) = self.stand(t, yaw, c - ray * s);
            let d = posed.iter().map(|v| -box_distance(anchor, v)).fold(0.0, f64::max);
            (d, params, posed)
        };
        let want = self.spec.penetration_depth;
        let (mut lo, mut hi) = (0.0, footprint_radius(anchor) + 2.0);
        if depth_at(lo).0 < want || depth_at(hi).0 > 0.0 {
            return Ok(None);
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if depth_at(mid).0 > want {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (_, params, posed) = depth_at(hi);
        Ok(self.body_ok(t, &params, &posed, anchor, true).then_some(params))
    }

    fn body_ok(&self, t: &BodyTemplate, params: &BodyParams, posed: &[Vec3], anchor: &BBox3D, inside_ok: bool) -> bool {
        let (c, r) = xz_disk(posed);
        if !self.room.holds(&c, r) || !self.in_view(posed) || !self.in_view(&body_joints3d(t, params)) {
            return false;
        }
        inside_ok || posed.iter().all(|v| box_distance(anchor, v) > 0.0)
    }
}

fn ground_truth(seed: u64, spec: &SynthSpec, template: &Arc<BodyTemplate>) -> Result<(SceneDocument, ChaCha8Rng)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = uniform3(&mut rng, &spec.room_size_min, &spec.room_size_max);
    let floor = -spec.camera_height;
    let layout = BBox3D::axis_aligned(Vec3::new(0.0, floor + size.y / 2.0, size.z / 2.0 - 0.3), size)?;
    let cam = CameraPose::new(spec.camera_pitch, spec.camera_roll);
    let mut s = Sampler {
        rng,
        spec,
        room: Room { layout, floor },
        cam,
        attempts: 0,
    };
    let (first, body) = loop {
        let first = s.place_object(&[], None)?;
        if !spec.human {
            break (first, None);
        }
        let placed = match spec.kind {
            FixtureKind::InterpenetratingBody => s.place_body_inside(template, &first)?,
            _ => s.place_body_beside(template, &first)?,
        };
        if let Some(p) = placed {
            break (first, Some(p));
        }
    };
    let body_disk = body.as_ref().map(|p| xz_disk(&template.pose(p).vertices));
    let mut boxes = vec![first];
    while boxes.len() < spec.object_count {
        let b = s.place_object(&boxes, body_disk)?;
        boxes.push(b);
    }
    let k = spec.intrinsics;
    let objects = boxes
        .iter()
        .enumerate()
        .map(|(i, b)| {
            Ok(ObjectSection {
                label: LABELS[i % LABELS.len()].to_string(),
                mesh: "builtin:cube".into(),
                bbox: *b,
                detection: project_box_to_rect(b, &cam, &k)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let human = match body {
        None => None,
        Some(params) => {
            let joints = body_joints3d(template, &params);
            let keypoints_2d = template
                .keypoint_map()
                .iter()
                .map(|&j| {
                    let p: Vec2 = project_point(&cam.world_to_camera(&joints[j]), &k)?;
                    Ok([p.x, p.y, 1.0])
                })
                .collect::<Result<Vec<_>>>()?;
            Some(HumanSection {
                template: None,
                keypoints_2d,
                params,
            })
        }
    };
    let doc = SceneDocument {
        schema: SCHEMA_VERSION.into(),
        units: Units::default(),
        camera: CameraSection {
            intrinsics: k,
            init_pitch: spec.camera_pitch,
            init_roll: spec.camera_roll,
        },
        layout,
        objects,
        human,
    };
    Ok((doc, s.rng))
}

fn perturb(gt: &SceneDocument, spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Result<SceneDocument> {
    let p = &spec.perturbation;
    let mut init = gt.clone();
    for o in &mut init.objects {
        let dc = normal3(rng) * p.centroid_sigma;
        let ds = normal3(rng) * p.size_sigma;
        let dy: f64 = rng.sample::<f64, _>(StandardNormal) * p.yaw_sigma;
        let size = (o.bbox.size() + ds).map(|v| v.max(0.1));
        o.bbox = BBox3D::new(o.bbox.centroid() + dc, size, o.bbox.yaw() + dy)?;
    }
    init.camera.init_pitch += rng.sample::<f64, _>(StandardNormal) * p.camera_sigma;
    init.camera.init_roll += rng.sample::<f64, _>(StandardNormal) * p.camera_sigma;
    if let Some(h) = init.human.as_mut() {
        let noise = normal3(rng) * p.body_translation_sigma;
        let dir = normal3(rng);
        let offset = if dir.norm() > 0.0 { dir.normalize() * p.body_translation_offset } else { Vec3::zeros() };
        h.params.translation += noise + offset;
        for q in &mut h.params.pose {
            *q += normal3(rng) * p.body_pose_sigma;
        }
    }
    if spec.kind == FixtureKind::FloatingBox {
        let b = &mut init.objects[0].bbox;
        *b = b.with_centroid(b.centroid() + Vec3::new(0.0, spec.float_height, 0.0))?;
    }
    Ok(init)
}

/// Generate `(initial, ground_truth)` documents. Identical seeds give identical documents.
///
/// Ground-truth boxes rest on the floor without overlapping and their detections and the body
/// keypoints are exact projections. The start differs from the ground truth only by
/// `spec.perturbation` and the fixture's modification.
pub fn synth_scene(seed: u64, spec: &SynthSpec) -> Result<(SceneDocument, SceneDocument)> {
    spec.validate()?;
    let template = Arc::new(default_template());
    let (gt, mut rng) = ground_truth(seed, spec, &template)?;
    let state = Scene::from_document(gt.clone(), ".")?.to_state(16)?;
    let collision = loss_scene_collision(&state)?;
    let ground = loss_obj_ground(&state);
    if collision != 0.0 || ground > 1e-9 {
        return Err(Error::DegenerateConfiguration(format!(
            "generated ground truth is not resting and separated (collision {collision:.3e}, ground {ground:.3e})"
        )));
    }
    let init = perturb(&gt, spec, &mut rng)?;
    Ok((init, gt))
}
