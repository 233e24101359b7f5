use std::collections::BTreeMap;

use nalgebra::Matrix2x3;

use super::gradient::{lowest_vertex, nearest_scene_vertex, Accumulator, BoxGradient, Linearization, SceneGradient};
use super::state::{HumanState, SceneState};
use super::{LossBreakdown, LossWeights, Objective, ObjectiveKind, Term};
use crate::body::{
    bending_prior, capsule_pairs, capsule_segments, pose_prior, segment_distance, PosedBody, SHAPE_MAX, SHAPE_MIN,
};
use crate::error::{Error, Result};
use crate::geometry::{yaw_matrix_derivative, BBox3D, Intrinsics, Mat3, Vec2, Vec3, DEPTH_EPSILON};

type Sink<'a> = Option<(&'a mut Accumulator, f64)>;

pub fn smooth_l1(x: f64, beta: f64) -> f64 {
    let a = x.abs();
    if a < beta {
        0.5 * x * x / beta
    } else {
        a - 0.5 * beta
    }
}

fn smooth_l1_derivative(x: f64, beta: f64) -> f64 {
    if x.abs() < beta {
        x / beta
    } else {
        x.signum()
    }
}

pub fn geman_mcclure(e: f64, sigma: f64) -> f64 {
    let e2 = e * e;
    let s2 = sigma * sigma;
    e2 * s2 / (e2 + s2)
}

/// `d ρ(‖r‖) / d r = gm_scale(‖r‖²) · r`.
fn gm_scale(e2: f64, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    2.0 * s2 * s2 / ((e2 + s2) * (e2 + s2))
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Point at unit-cube coordinates `u` of a box: `c + R_yaw (u ⊙ size)`.
pub(crate) fn box_point(b: &BBox3D, u: &Vec3) -> Vec3 {
    b.centroid() + b.rotation() * u.component_mul(&b.size())
}

fn box_point_vjp(b: &BBox3D, u: &Vec3, g: &Vec3, out: &mut BoxGradient) {
    let r = b.rotation();
    out.centroid += g;
    for a in 0..3 {
        out.size[a] += g.dot(&r.column(a)) * u[a];
    }
    out.yaw += g.dot(&(yaw_matrix_derivative(b.yaw()) * u.component_mul(&b.size())));
}

/// Pixel and its Jacobian with respect to the camera-frame point.
struct Projected {
    px: Vec2,
    jac: Matrix2x3<f64>,
}

fn project(rt: &Mat3, p: &Vec3, k: &Intrinsics) -> Option<Projected> {
    let q = rt * p;
    if !(q.z > DEPTH_EPSILON) {
        return None;
    }
    let iz = 1.0 / q.z;
    let px = Vec2::new(k.fx * q.x * iz + k.cx, k.fy * q.y * iz + k.cy);
    let jac = Matrix2x3::new(
        k.fx * iz,
        0.0,
        -k.fx * q.x * iz * iz,
        0.0,
        k.fy * iz,
        -k.fy * q.y * iz * iz,
    );
    Some(Projected { px, jac })
}

/// Camera rotation and its derivatives, shared by the projection terms.
struct CameraFrame {
    r: Mat3,
    rt: Mat3,
    d_pitch_t: Mat3,
    d_roll_t: Mat3,
}

impl CameraFrame {
    fn new(state: &SceneState) -> Self {
        let r = state.camera.rotation();
        let (dp, dr) = state.camera.rotation_derivatives();
        Self {
            r,
            rt: r.transpose(),
            d_pitch_t: dp.transpose(),
            d_roll_t: dr.transpose(),
        }
    }

    /// Pull a pixel adjoint back to the camera angles and the world point; returns the latter.
    fn pull_back(&self, p: &Vec3, proj: &Projected, g_px: &Vec2, camera: &mut [f64; 2]) -> Vec3 {
        let gq = proj.jac.transpose() * g_px;
        camera[0] += gq.dot(&(self.d_pitch_t * p));
        camera[1] += gq.dot(&(self.d_roll_t * p));
        self.r * gq
    }
}

/// Unit-cube coordinates of the collision cells of one box, x fastest.
pub fn collision_cells(resolution: usize) -> Vec<Vec3> {
    let r = resolution as f64;
    let c = |i: usize| (i as f64 + 0.5) / r - 0.5;
    let mut out = Vec::with_capacity(resolution.pow(3));
    for k in 0..resolution {
        for j in 0..resolution {
            for i in 0..resolution {
                out.push(Vec3::new(c(i), c(j), c(k)));
            }
        }
    }
    out
}

fn human(state: &SceneState) -> Result<&HumanState> {
    state
        .human
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("scene has no human".into()))
}

// ---- scene terms -------------------------------------------------------------------------

fn reprojection(state: &SceneState, w: &LossWeights, mut sink: Sink) -> Result<f64> {
    let n = state.objects.len();
    if n == 0 {
        return Ok(0.0);
    }
    let cam = CameraFrame::new(state);
    let beta = w.smooth_l1_beta;
    let mut total = 0.0;
    for (i, o) in state.objects.iter().enumerate() {
        let corners = o.bbox.corners();
        let mut proj = Vec::with_capacity(8);
        for c in &corners {
            let p = project(&cam.rt, c, &state.intrinsics).ok_or_else(|| {
                Error::NonPositiveDepth {
                    depth: (cam.rt * c).z,
                    context: None,
                }
                .with_context(format!("object {i} ({})", o.label))
            })?;
            proj.push(p);
        }
        let arg = |axis: usize, max: bool| -> usize {
            let mut best = 0;
            for k in 1..8 {
                let v = proj[k].px[axis];
                let b = proj[best].px[axis];
                if (max && v > b) || (!max && v < b) {
                    best = k;
                }
            }
            best
        };
        // (corner index, pixel axis) of xmin, ymin, xmax, ymax
        let sel = [(arg(0, false), 0), (arg(1, false), 1), (arg(0, true), 0), (arg(1, true), 1)];
        let pred = sel.map(|(k, a)| proj[k].px[a]);
        let det = [o.detection.xmin, o.detection.ymin, o.detection.xmax, o.detection.ymax];
        // rect corners (xmin,ymin) (xmax,ymin) (xmax,ymax) (xmin,ymax) as coordinate indices
        let corner_coords = [(0, 1), (2, 1), (2, 3), (0, 3)];
        let mut value = 0.0;
        for (cx, cy) in corner_coords {
            value += smooth_l1(pred[cx] - det[cx], beta) + smooth_l1(pred[cy] - det[cy], beta);
        }
        total += value;
        if let Some((acc, f)) = sink.as_mut() {
            // every rect coordinate appears in two rect corners
            for (coord, &(k, a)) in sel.iter().enumerate() {
                let g = 2.0 * smooth_l1_derivative(pred[coord] - det[coord], beta) * *f / n as f64;
                if g == 0.0 {
                    continue;
                }
                let mut g_px = Vec2::zeros();
                g_px[a] = g;
                let gp = cam.pull_back(&corners[k], &proj[k], &g_px, &mut acc.scene.camera);
                let u = corner_unit(k);
                box_point_vjp(&o.bbox, &u, &gp, &mut acc.scene.objects[i]);
            }
        }
    }
    Ok(total / n as f64)
}

fn corner_unit(k: usize) -> Vec3 {
    Vec3::new(
        if k & 1 != 0 { 0.5 } else { -0.5 },
        if k & 2 != 0 { 0.5 } else { -0.5 },
        if k & 4 != 0 { 0.5 } else { -0.5 },
    )
}

fn collision(state: &SceneState, lin: &Linearization, mut sink: Sink) -> Result<f64> {
    let n = state.objects.len();
    if n == 0 {
        return Ok(0.0);
    }
    if state.fields.per_object.len() != n {
        return Err(Error::InvalidInput(format!(
            "{} collision fields for {n} objects; rebuild the fields",
            state.fields.per_object.len()
        )));
    }
    let cells = collision_cells(state.fields.resolution);
    let mut total = 0.0;
    for (i, o) in state.objects.iter().enumerate() {
        let grid = &state.fields.per_object[i];
        let skip = lin.excluded_cells.get(i);
        for (c, u) in cells.iter().enumerate() {
            if skip.is_some_and(|s| s.get(c).copied().unwrap_or(false)) {
                continue;
            }
            let x = box_point(&o.bbox, u);
            let s = grid.query(&x);
            if s.value < 0.0 {
                total += s.value * s.value;
                if let Some((acc, f)) = sink.as_mut() {
                    let g = s.gradient * (2.0 * s.value * *f / n as f64);
                    box_point_vjp(&o.bbox, u, &g, &mut acc.scene.objects[i]);
                }
            }
        }
    }
    Ok(total / n as f64)
}

fn object_ground(state: &SceneState, mut sink: Sink) -> f64 {
    let n = state.objects.len();
    if n == 0 {
        return 0.0;
    }
    let floor = state.floor_height();
    let mut total = 0.0;
    for (i, o) in state.objects.iter().enumerate() {
        let d = o.bbox.min_y() - floor;
        total += d.abs();
        if let Some((acc, f)) = sink.as_mut() {
            let g = sign(d) * *f / n as f64;
            acc.scene.objects[i].centroid.y += g;
            acc.scene.objects[i].size.y -= 0.5 * g;
            acc.scene.layout.centroid.y -= g;
            acc.scene.layout.size.y += 0.5 * g;
        }
    }
    total / n as f64
}

// ---- body terms --------------------------------------------------------------------------

fn keypoint(state: &SceneState, h: &HumanState, posed: &PosedBody, w: &LossWeights, mut sink: Sink) -> Result<f64> {
    let t = &h.template;
    let map = t.keypoint_map();
    if map.len() != h.keypoints.len() {
        return Err(Error::LengthMismatch {
            left: h.keypoints.len(),
            right: map.len(),
        });
    }
    let cam = CameraFrame::new(state);
    let joints = t.regress_posed(posed);
    let sigma = w.sigma_keypoint;
    let mut total = 0.0;
    for (kp, &j) in h.keypoints.iter().zip(map) {
        let weight = kp.confidence * w.w_keypoint;
        if weight == 0.0 {
            continue;
        }
        let Some(p) = project(&cam.rt, &joints[j], &state.intrinsics) else {
            total += weight * sigma * sigma;
            continue;
        };
        let r = p.px - kp.pixel;
        let e2 = r.norm_squared();
        total += weight * geman_mcclure(e2.sqrt(), sigma);
        if let Some((acc, f)) = sink.as_mut() {
            let g_px = r * (gm_scale(e2, sigma) * weight * *f);
            let g_joint = cam.pull_back(&joints[j], &p, &g_px, &mut acc.scene.camera);
            for &(v, wv) in &t.regressor()[j] {
                acc.d_vertices[v] += g_joint * wv;
            }
        }
    }
    Ok(total)
}

fn prior_pose(h: &HumanState, mut sink: Sink) -> f64 {
    if let Some((acc, f)) = sink.as_mut() {
        let f = *f;
        let p = &h.params;
        let s = p.clamped_shape();
        let g = acc.body();
        for (gj, q) in g.pose.iter_mut().zip(&p.pose) {
            *gj += q * (2.0 * f);
        }
        for a in 0..3 {
            let raw = p.shape_scale[a];
            if (SHAPE_MIN..=SHAPE_MAX).contains(&raw) {
                g.shape[a] += 2.0 * (s[a] - 1.0) * f;
            }
        }
    }
    pose_prior(&h.params)
}

fn prior_bending(h: &HumanState, mut sink: Sink) -> Result<f64> {
    let spec = h.template.bend_joints();
    let v = bending_prior(&h.params, spec)?;
    if let Some((acc, f)) = sink.as_mut() {
        let f = *f;
        let g = acc.body();
        for b in spec {
            g.pose[b.joint][b.axis] += f * b.sign * (b.sign * h.params.pose[b.joint][b.axis]).exp();
        }
    }
    Ok(v)
}

fn self_penetration(h: &HumanState, posed: &PosedBody, mut sink: Sink) -> f64 {
    let t = &h.template;
    let segs = capsule_segments(t, &posed.joints_world);
    let caps = t.capsules();
    let mut total = 0.0;
    for (i, j) in capsule_pairs(t) {
        let r = caps[i].radius + caps[j].radius;
        let (a0, a1) = segs[i];
        let (b0, b1) = segs[j];
        let (d, s, u) = segment_distance(&a0, &a1, &b0, &b1);
        let o = r - d;
        if o <= 0.0 {
            continue;
        }
        total += o * o;
        if let Some((acc, f)) = sink.as_mut() {
            if d > 0.0 {
                let pa = a0 + (a1 - a0) * s;
                let pb = b0 + (b1 - b0) * u;
                let nrm = (pa - pb) / d;
                let g = nrm * (-2.0 * o * *f);
                let ja = (t.joints()[caps[i].bone].parent.expect("capsule bone"), caps[i].bone);
                let jb = (t.joints()[caps[j].bone].parent.expect("capsule bone"), caps[j].bone);
                acc.d_joints[ja.0] += g * (1.0 - s);
                acc.d_joints[ja.1] += g * s;
                acc.d_joints[jb.0] -= g * (1.0 - u);
                acc.d_joints[jb.1] -= g * u;
            }
        }
    }
    total
}

fn body_ground(state: &SceneState, posed: &PosedBody, lin: &Linearization, mut sink: Sink) -> f64 {
    let Some(v) = lin.lowest_vertex.or_else(|| lowest_vertex(&posed.vertices)) else {
        return 0.0;
    };
    let d = posed.vertices[v].y - state.floor_height();
    if let Some((acc, f)) = sink.as_mut() {
        let g = sign(d) * *f;
        acc.d_vertices[v].y += g;
        acc.scene.layout.centroid.y -= g;
        acc.scene.layout.size.y += 0.5 * g;
    }
    d.abs()
}

fn contact(state: &SceneState, h: &HumanState, posed: &PosedBody, w: &LossWeights, lin: &Linearization, mut sink: Sink) -> Result<f64> {
    let contacts = h.template.contact_vertices();
    if contacts.is_empty() {
        return Ok(0.0);
    }
    if state.objects.is_empty() {
        return Err(Error::NoObjects);
    }
    let sigma = w.sigma_contact;
    let mut total = 0.0;
    for (ci, &c) in contacts.iter().enumerate() {
        let (o, vi) = match lin.contact.get(ci) {
            Some(&pair) => pair,
            None => {
                let placed: Vec<Vec<Vec3>> = state
                    .objects
                    .iter()
                    .map(|o| o.placed_mesh().vertices().to_vec())
                    .collect();
                nearest_scene_vertex(&posed.vertices[c], &placed)
            }
        };
        let obj = &state.objects[o];
        let u = obj.mesh.vertices()[vi];
        let sp = box_point(&obj.bbox, &u);
        let r = posed.vertices[c] - sp;
        let e2 = r.norm_squared();
        total += geman_mcclure(e2.sqrt(), sigma);
        if let Some((acc, f)) = sink.as_mut() {
            let g = r * (gm_scale(e2, sigma) * *f);
            acc.d_vertices[c] += g;
            box_point_vjp(&obj.bbox, &u, &(-g), &mut acc.scene.objects[o]);
        }
    }
    Ok(total)
}

/// Closest point parameter `t` on segment `a-b` to `p`, and the distance.
fn point_segment(p: &Vec3, a: &Vec3, b: &Vec3) -> (f64, f64) {
    let ab = b - a;
    let l2 = ab.norm_squared();
    let t = if l2 > 0.0 { ((p - a).dot(&ab) / l2).clamp(0.0, 1.0) } else { 0.0 };
    (t, (p - (a + ab * t)).norm())
}

/// Signed distance to the union of the body's capsules: nearest capsule, closest-point
/// parameter on its bone, unit direction from that point to `p`, and the distance.
fn capsule_sdf(p: &Vec3, segs: &[(Vec3, Vec3)], radii: &[f64]) -> Option<(usize, f64, Vec3, f64)> {
    let mut best: Option<(usize, f64, Vec3, f64)> = None;
    for (c, ((a, b), r)) in segs.iter().zip(radii).enumerate() {
        let (t, d) = point_segment(p, a, b);
        let sd = d - r;
        if best.is_none_or(|(_, _, _, bd)| sd < bd) {
            let q = a + (b - a) * t;
            let n = if d > 0.0 { (p - q) / d } else { Vec3::zeros() };
            best = Some((c, t, n, sd));
        }
    }
    best
}

/// Axis-aligned extent of the body's capsules.
fn capsule_bounds(segs: &[(Vec3, Vec3)], radii: &[f64]) -> (Vec3, Vec3) {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for ((a, b), r) in segs.iter().zip(radii) {
        lo = lo.inf(&(a.inf(b) - Vec3::repeat(*r)));
        hi = hi.sup(&(a.sup(b) + Vec3::repeat(*r)));
    }
    (lo, hi)
}

fn body_penetration(
    state: &SceneState,
    h: &HumanState,
    posed: &PosedBody,
    lin: &Linearization,
    mut sink: Sink,
) -> f64 {
    let mut total = 0.0;
    // body vertices inside the scene
    if let Some(grid) = state.fields.body_union.as_ref() {
        for (i, v) in posed.vertices.iter().enumerate() {
            if lin.excluded_vertices.get(i).copied().unwrap_or(false) {
                continue;
            }
            let s = grid.query(v);
            if s.value < 0.0 {
                total += s.value * s.value;
                if let Some((acc, f)) = sink.as_mut() {
                    acc.d_vertices[i] += s.gradient * (2.0 * s.value * *f);
                }
            }
        }
    }
    // object lattices inside the body's capsules
    let t = &h.template;
    let n = state.objects.len();
    if t.capsules().is_empty() || n == 0 {
        return total;
    }
    let segs = capsule_segments(t, &posed.joints_world);
    let radii: Vec<f64> = t.capsules().iter().map(|c| c.radius).collect();
    let (lo, hi) = capsule_bounds(&segs, &radii);
    let cells = collision_cells(state.fields.resolution);
    let mut inner = 0.0;
    for (i, o) in state.objects.iter().enumerate() {
        let (blo, bhi) = o.bbox.aabb();
        if (0..3).any(|a| bhi[a] < lo[a] || blo[a] > hi[a]) {
            continue;
        }
        for u in &cells {
            let p = box_point(&o.bbox, u);
            if (0..3).any(|a| p[a] < lo[a] || p[a] > hi[a]) {
                continue;
            }
            let Some((c, tc, nrm, d)) = capsule_sdf(&p, &segs, &radii) else {
                continue;
            };
            if d >= 0.0 {
                continue;
            }
            inner += d * d;
            if let Some((acc, f)) = sink.as_mut() {
                let g = nrm * (2.0 * d * *f / n as f64);
                box_point_vjp(&o.bbox, u, &g, &mut acc.scene.objects[i]);
                let bone = t.capsules()[c].bone;
                let parent = t.joints()[bone].parent.expect("capsule bone");
                acc.d_joints[parent] -= g * (1.0 - tc);
                acc.d_joints[bone] -= g * tc;
            }
        }
    }
    total + inner / n as f64
}

// ---- public raw terms --------------------------------------------------------------------

pub fn loss_scene_reprojection(state: &SceneState, w: &LossWeights) -> Result<f64> {
    reprojection(state, w, None)
}

pub fn loss_scene_collision(state: &SceneState) -> Result<f64> {
    collision(state, &Linearization::empty(), None)
}

pub fn loss_obj_ground(state: &SceneState) -> f64 {
    object_ground(state, None)
}

pub fn loss_body_ground(state: &SceneState) -> Result<f64> {
    let h = human(state)?;
    let posed = h.template.pose(&h.params);
    Ok(body_ground(state, &posed, &Linearization::empty(), None))
}

pub fn loss_contact(state: &SceneState, w: &LossWeights) -> Result<f64> {
    let h = human(state)?;
    let posed = h.template.pose(&h.params);
    let lin = Linearization::with_posed(state, Some(&posed));
    contact(state, h, &posed, w, &lin, None)
}

pub fn loss_body_penetration(state: &SceneState) -> Result<f64> {
    let h = human(state)?;
    let posed = h.template.pose(&h.params);
    Ok(body_penetration(state, h, &posed, &Linearization::empty(), None))
}

pub fn loss_keypoint_reprojection(state: &SceneState, w: &LossWeights) -> Result<f64> {
    let h = human(state)?;
    let posed = h.template.pose(&h.params);
    keypoint(state, h, &posed, w, None)
}

/// Keypoint reprojection plus the weighted within-body priors.
pub fn loss_body_total(state: &SceneState, w: &LossWeights) -> Result<f64> {
    let (b, _) = evaluate(state, w, &Objective::new(ObjectiveKind::Body), None, false)?;
    Ok(b.total)
}

pub(crate) fn evaluate(
    state: &SceneState,
    w: &LossWeights,
    objective: &Objective,
    linearization: Option<&Linearization>,
    with_gradient: bool,
) -> Result<(LossBreakdown, Option<SceneGradient>)> {
    let terms = objective.terms();
    let human = state.human.as_ref();
    let posed = match human {
        Some(h) if terms.iter().any(|t| t.uses_body()) => Some(h.template.pose(&h.params)),
        _ => None,
    };
    let needs_lin = posed.is_some() && terms.iter().any(|t| matches!(t, Term::Contact | Term::BodyGround));
    let owned;
    let lin = match linearization {
        Some(l) => l,
        None => {
            owned = if needs_lin {
                Linearization::with_posed(state, posed.as_ref())
            } else {
                Linearization::empty()
            };
            &owned
        }
    };
    let mut acc = with_gradient.then(|| Accumulator::new(state));
    let mut values = BTreeMap::new();
    let mut total = 0.0;
    for &term in terms {
        let f = objective.factor(term, w);
        let sink: Sink = match acc.as_mut() {
            Some(a) if f != 0.0 => Some((a, f)),
            _ => None,
        };
        let value = match term {
            Term::SceneReprojection => reprojection(state, w, sink)?,
            Term::SceneCollision => collision(state, lin, sink)?,
            Term::ObjectGround => object_ground(state, sink),
            body_term => {
                let (Some(h), Some(posed)) = (human, posed.as_ref()) else {
                    continue;
                };
                match body_term {
                    Term::Keypoint => keypoint(state, h, posed, w, sink)?,
                    Term::PosePrior => prior_pose(h, sink),
                    Term::Bending => prior_bending(h, sink)?,
                    Term::SelfPenetration => self_penetration(h, posed, sink),
                    Term::BodyGround => body_ground(state, posed, lin, sink),
                    Term::Contact => contact(state, h, posed, w, lin, sink)?,
                    Term::BodyPenetration => body_penetration(state, h, posed, lin, sink),
                    _ => unreachable!("scene terms handled above"),
                }
            }
        };
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss {
                param: format!("term {term}"),
                value,
            });
        }
        values.insert(term, value);
        total += f * value;
    }
    let gradient = acc.map(|a| a.finish(state, posed.as_ref()));
    Ok((LossBreakdown { terms: values, total }, gradient))
}
