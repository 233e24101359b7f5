//! Articulated body: template mesh, skeleton, linear blend skinning and within-body priors.
//!
//! Posing order: per-axis shape scale, then skinning through the joint tree with per-joint
//! axis-angle rotations, then the global rotation about the template origin, then translation.

mod rotation;
mod template;

use serde::{Deserialize, Serialize};

pub use rotation::{axis_angle_matrix, axis_angle_derivatives};
pub use template::{
    default_template, load_template, save_template, template_or_default, TemplateFile, COCO_KEYPOINTS,
    TEMPLATE_FORMAT,
};

use crate::error::{Error, Result};
use crate::geometry::{Mat3, Vec3};
use crate::mesh::TriMesh;

pub const SHAPE_MIN: f64 = 0.5;
pub const SHAPE_MAX: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    /// Rest offset from the parent joint (from the template origin for the root).
    pub offset: [f64; 3],
}

/// One penalized bending direction: `exp(sign * pose[joint][axis])`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BendJoint {
    pub joint: usize,
    pub axis: usize,
    pub sign: f64,
}

/// Capsule around the bone that ends at joint `bone` (and starts at its parent).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Capsule {
    pub bone: usize,
    pub radius: f64,
}

/// Sparse row: `(column, weight)` pairs.
pub type SparseRow = Vec<(usize, f64)>;

#[derive(Debug, Clone)]
pub struct BodyTemplate {
    mesh: TriMesh,
    joints: Vec<Joint>,
    skinning: Vec<SparseRow>,
    regressor: Vec<SparseRow>,
    contact_vertices: Vec<usize>,
    keypoint_map: Vec<usize>,
    capsules: Vec<Capsule>,
    bend_joints: Vec<BendJoint>,
    /// `chain[j]` lists the root..=j path.
    chain: Vec<Vec<usize>>,
}

pub struct TemplateParts {
    pub mesh: TriMesh,
    pub joints: Vec<Joint>,
    pub skinning: Vec<SparseRow>,
    pub regressor: Vec<SparseRow>,
    pub contact_vertices: Vec<usize>,
    pub keypoint_map: Vec<usize>,
    pub capsules: Vec<Capsule>,
    pub bend_joints: Vec<BendJoint>,
}

impl BodyTemplate {
    pub fn new(parts: TemplateParts) -> Result<Self> {
        let TemplateParts {
            mesh,
            joints,
            skinning,
            regressor,
            contact_vertices,
            keypoint_map,
            capsules,
            bend_joints,
        } = parts;
        let nv = mesh.vertices().len();
        let nj = joints.len();
        if nj == 0 {
            return Err(Error::InvalidInput("skeleton has no joints".into()));
        }
        let roots = joints.iter().filter(|j| j.parent.is_none()).count();
        if roots != 1 || joints[0].parent.is_some() {
            return Err(Error::InvalidInput(
                "skeleton must have exactly one root, listed first".into(),
            ));
        }
        for (i, j) in joints.iter().enumerate() {
            if let Some(p) = j.parent {
                // parents precede children, which also rules out cycles
                if p >= i {
                    return Err(Error::InvalidInput(format!(
                        "joint {i} ({}) has parent {p}; parents must precede children",
                        j.name
                    )));
                }
            }
            if !j.offset.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidInput(format!("joint {i} has a non-finite offset")));
            }
        }
        if skinning.len() != nv {
            return Err(Error::LengthMismatch {
                left: skinning.len(),
                right: nv,
            });
        }
        for (v, row) in skinning.iter().enumerate() {
            let mut sum = 0.0;
            for &(j, w) in row {
                if j >= nj {
                    return Err(Error::BadJointIndex { index: j, count: nj });
                }
                if !(w >= 0.0) {
                    return Err(Error::InvalidInput(format!("negative skinning weight at vertex {v}")));
                }
                sum += w;
            }
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidInput(format!(
                    "skinning weights of vertex {v} sum to {sum}"
                )));
            }
        }
        for (k, row) in regressor.iter().enumerate() {
            let mut sum = 0.0;
            for &(v, w) in row {
                if v >= nv {
                    return Err(Error::InvalidInput(format!(
                        "regressor row {k} references vertex {v} of {nv}"
                    )));
                }
                sum += w;
            }
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidInput(format!("regressor row {k} sums to {sum}")));
            }
        }
        if let Some(&v) = contact_vertices.iter().find(|&&v| v >= nv) {
            return Err(Error::InvalidInput(format!("contact vertex {v} out of range ({nv})")));
        }
        if let Some(&k) = keypoint_map.iter().find(|&&k| k >= regressor.len()) {
            return Err(Error::InvalidInput(format!(
                "keypoint map references joint {k} but regressor has {} rows",
                regressor.len()
            )));
        }
        for c in &capsules {
            if c.bone >= nj || joints[c.bone].parent.is_none() {
                return Err(Error::BadJointIndex {
                    index: c.bone,
                    count: nj,
                });
            }
            if !(c.radius >= 0.0) {
                return Err(Error::InvalidInput(format!("capsule {} has negative radius", c.bone)));
            }
        }
        for b in &bend_joints {
            if b.joint >= nj || b.axis > 2 {
                return Err(Error::BadJointIndex {
                    index: b.joint,
                    count: nj,
                });
            }
        }
        let mut chain: Vec<Vec<usize>> = Vec::with_capacity(nj);
        for j in 0..nj {
            let mut c = match joints[j].parent {
                Some(p) => chain[p].clone(),
                None => Vec::new(),
            };
            c.push(j);
            chain.push(c);
        }
        Ok(Self {
            mesh,
            joints,
            skinning,
            regressor,
            contact_vertices,
            keypoint_map,
            capsules,
            bend_joints,
            chain,
        })
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }
    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }
    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }
    pub fn skinning(&self) -> &[SparseRow] {
        &self.skinning
    }
    pub fn regressor(&self) -> &[SparseRow] {
        &self.regressor
    }
    pub fn contact_vertices(&self) -> &[usize] {
        &self.contact_vertices
    }
    pub fn keypoint_map(&self) -> &[usize] {
        &self.keypoint_map
    }
    pub fn capsules(&self) -> &[Capsule] {
        &self.capsules
    }
    pub fn bend_joints(&self) -> &[BendJoint] {
        &self.bend_joints
    }

    /// Bone `a` and bone `b` share a joint.
    pub fn bones_adjacent(&self, a: usize, b: usize) -> bool {
        let pa = self.joints[a].parent;
        let pb = self.joints[b].parent;
        a == b || pa == Some(b) || pb == Some(a) || (pa.is_some() && pa == pb)
    }

    /// Pose the template.
    pub fn pose(&self, params: &BodyParams) -> PosedBody {
        let s = params.clamped_shape();
        let nj = self.joints.len();
        let mut rest = vec![Vec3::zeros(); nj];
        let mut rot = vec![Mat3::identity(); nj];
        let mut pos = vec![Vec3::zeros(); nj];
        for j in 0..nj {
            let off = s.component_mul(&Vec3::from(self.joints[j].offset));
            let local = axis_angle_matrix(&params.pose_of(j));
            match self.joints[j].parent {
                None => {
                    rest[j] = off;
                    rot[j] = local;
                    pos[j] = off;
                }
                Some(p) => {
                    rest[j] = rest[p] + off;
                    rot[j] = rot[p] * local;
                    pos[j] = pos[p] + rot[p] * off;
                }
            }
        }
        let rg = axis_angle_matrix(&params.global_rotation);
        let t = params.translation;
        let local_vertices: Vec<Vec3> = self
            .mesh
            .vertices()
            .iter()
            .zip(&self.skinning)
            .map(|(v, row)| {
                let vs = s.component_mul(v);
                // written as a displacement so the neutral pose reproduces the template bit for bit
                vs + row.iter().fold(Vec3::zeros(), |acc, &(j, w)| {
                    acc + ((rot[j] - Mat3::identity()) * (vs - rest[j]) + (pos[j] - rest[j])) * w
                })
            })
            .collect();
        let vertices = local_vertices.iter().map(|a| rg * a + t).collect();
        let joints_world = pos.iter().map(|p| rg * p + t).collect();
        PosedBody {
            shape: s,
            translation: t,
            rest,
            rot,
            pos,
            global: rg,
            local_vertices,
            vertices,
            joints_world,
        }
    }

    /// Apply the joint regressor to an arbitrary vertex array.
    pub fn regress(&self, vertices: &[Vec3]) -> Vec<Vec3> {
        self.regressor
            .iter()
            .map(|row| row.iter().fold(Vec3::zeros(), |a, &(v, w)| a + vertices[v] * w))
            .collect()
    }

    /// Reported joints of a posed body. Regresses before the global transform, so a
    /// translation moves every joint by exactly that translation.
    pub fn regress_posed(&self, posed: &PosedBody) -> Vec<Vec3> {
        self.regress(&posed.local_vertices)
            .into_iter()
            .map(|j| posed.global * j + posed.translation)
            .collect()
    }

    /// Vector-Jacobian product of posing.
    ///
    /// Given `dL/dvertex` and `dL/djoint` (world joint positions), returns `dL/dparams`.
    pub fn pose_vjp(
        &self,
        params: &BodyParams,
        posed: &PosedBody,
        d_vertices: &[Vec3],
        d_joints: &[Vec3],
    ) -> BodyGradient {
        let nj = self.joints.len();
        let rg = posed.global;
        let rgt = rg.transpose();
        let mut grad = BodyGradient::zeros(nj);

        // translation and global rotation
        let dg = axis_angle_derivatives(&params.global_rotation);
        for (g, a) in d_vertices.iter().zip(&posed.local_vertices) {
            grad.translation += g;
            for i in 0..3 {
                grad.global_rotation[i] += g.dot(&(dg[i] * a));
            }
        }
        for (g, p) in d_joints.iter().zip(&posed.pos) {
            grad.translation += g;
            for i in 0..3 {
                grad.global_rotation[i] += g.dot(&(dg[i] * p));
            }
        }

        // per-joint sums of h_v = Rgᵀ g_v weighted by skinning
        let s = posed.shape;
        let mut p_sum = vec![Mat3::zeros(); nj];
        let mut q_sum = vec![Vec3::zeros(); nj];
        // u_sum[k].column(a) = Σ_v w_vk v_a h_v
        let mut u_sum = vec![Mat3::zeros(); nj];
        for ((v, row), g) in self.mesh.vertices().iter().zip(&self.skinning).zip(d_vertices) {
            if g.iter().all(|&x| x == 0.0) {
                continue;
            }
            let h = rgt * g;
            let vs = s.component_mul(v);
            for &(k, w) in row {
                let x = posed.rot[k] * (vs - posed.rest[k]) + posed.pos[k];
                p_sum[k] += (h * w) * x.transpose();
                q_sum[k] += h * w;
                for a in 0..3 {
                    let mut col = u_sum[k].column_mut(a);
                    col += h * (w * v[a]);
                }
            }
        }
        // joint-position adjoints enter the same sums with x = pos[k]; keep them apart for shape
        let mut qj = vec![Vec3::zeros(); nj];
        for (k, g) in d_joints.iter().enumerate() {
            if g.iter().all(|&x| x == 0.0) {
                continue;
            }
            let h = rgt * g;
            p_sum[k] += h * posed.pos[k].transpose();
            qj[k] += h;
        }

        // pose: subtree accumulation
        let mut sub_p = p_sum.clone();
        let mut sub_q: Vec<Vec3> = (0..nj).map(|k| q_sum[k] + qj[k]).collect();
        for j in (1..nj).rev() {
            let p = self.joints[j].parent.expect("non-root");
            let (pp, pq) = (sub_p[j], sub_q[j]);
            sub_p[p] += pp;
            sub_q[p] += pq;
        }
        for j in 0..nj {
            let m = sub_p[j] - sub_q[j] * posed.pos[j].transpose();
            let parent_rot = match self.joints[j].parent {
                Some(p) => posed.rot[p],
                None => Mat3::identity(),
            };
            let local = axis_angle_matrix(&params.pose_of(j));
            let dl = axis_angle_derivatives(&params.pose_of(j));
            for i in 0..3 {
                let a = parent_rot * dl[i] * local.transpose() * parent_rot.transpose();
                grad.pose[j][i] = a.component_mul(&m).sum();
            }
        }

        // shape, zero outside the clamp range
        let raw = params.shape_scale;
        for a in 0..3 {
            if raw[a] < SHAPE_MIN || raw[a] > SHAPE_MAX {
                continue;
            }
            let mut e = Vec3::zeros();
            e[a] = 1.0;
            let mut total = 0.0;
            for k in 0..nj {
                let qk = q_sum[k];
                let qjk = qj[k];
                if qk.iter().all(|&x| x == 0.0) && qjk.iter().all(|&x| x == 0.0) {
                    continue;
                }
                // d rest[k] / ds_a and d pos[k] / ds_a along the chain
                let mut drest = 0.0;
                let mut dpos = Vec3::zeros();
                for &m in &self.chain[k] {
                    let off = self.joints[m].offset[a];
                    drest += off;
                    let pr = match self.joints[m].parent {
                        Some(p) => posed.rot[p],
                        None => Mat3::identity(),
                    };
                    dpos += pr * e * off;
                }
                let rk_e = posed.rot[k] * e;
                let u = u_sum[k].column(a).into_owned();
                total += u.dot(&rk_e) - qk.dot(&rk_e) * drest + qk.dot(&dpos);
                total += qjk.dot(&dpos);
            }
            grad.shape[a] = total;
        }
        grad
    }
}

/// Result of posing with the intermediates needed for gradients.
#[derive(Debug, Clone)]
pub struct PosedBody {
    pub shape: Vec3,
    /// Scaled rest-pose joint positions, template frame.
    pub rest: Vec<Vec3>,
    /// Accumulated joint rotations, template frame.
    pub rot: Vec<Mat3>,
    /// Posed joint positions before the global transform.
    pub pos: Vec<Vec3>,
    pub global: Mat3,
    pub translation: Vec3,
    pub local_vertices: Vec<Vec3>,
    pub vertices: Vec<Vec3>,
    pub joints_world: Vec<Vec3>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodyParams {
    #[serde(with = "vec3_array")]
    pub translation: Vec3,
    #[serde(with = "vec3_array")]
    pub global_rotation: Vec3,
    #[serde(with = "vec3_list")]
    pub pose: Vec<Vec3>,
    #[serde(with = "vec3_array")]
    pub shape_scale: Vec3,
}

impl BodyParams {
    pub fn neutral(joint_count: usize) -> Self {
        Self {
            translation: Vec3::zeros(),
            global_rotation: Vec3::zeros(),
            pose: vec![Vec3::zeros(); joint_count],
            shape_scale: Vec3::repeat(1.0),
        }
    }

    pub fn pose_of(&self, j: usize) -> Vec3 {
        self.pose.get(j).copied().unwrap_or_else(Vec3::zeros)
    }

    pub fn clamped_shape(&self) -> Vec3 {
        self.shape_scale.map(|v| v.clamp(SHAPE_MIN, SHAPE_MAX))
    }

    pub fn is_finite(&self) -> bool {
        self.translation.iter().all(|v| v.is_finite())
            && self.global_rotation.iter().all(|v| v.is_finite())
            && self.pose.iter().all(|p| p.iter().all(|v| v.is_finite()))
            && self.shape_scale.iter().all(|v| v.is_finite())
    }
}

/// Gradient with the same shape as [`BodyParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct BodyGradient {
    pub translation: Vec3,
    pub global_rotation: Vec3,
    pub pose: Vec<Vec3>,
    pub shape: Vec3,
}

impl BodyGradient {
    pub fn zeros(joint_count: usize) -> Self {
        Self {
            translation: Vec3::zeros(),
            global_rotation: Vec3::zeros(),
            pose: vec![Vec3::zeros(); joint_count],
            shape: Vec3::zeros(),
        }
    }

    pub fn add_scaled(&mut self, other: &BodyGradient, s: f64) {
        self.translation += other.translation * s;
        self.global_rotation += other.global_rotation * s;
        for (a, b) in self.pose.iter_mut().zip(&other.pose) {
            *a += b * s;
        }
        self.shape += other.shape * s;
    }
}

pub(crate) mod vec3_array {
    use super::Vec3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Vec3, s: S) -> Result<S::Ok, S::Error> {
        [v.x, v.y, v.z].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec3, D::Error> {
        let a = <[f64; 3]>::deserialize(d)?;
        Ok(Vec3::from(a))
    }
}

pub(crate) mod vec3_list {
    use super::Vec3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[Vec3], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|p| [p.x, p.y, p.z]).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec3>, D::Error> {
        let a = Vec::<[f64; 3]>::deserialize(d)?;
        Ok(a.into_iter().map(Vec3::from).collect())
    }
}

/// Posed body mesh.
pub fn body_forward(template: &BodyTemplate, params: &BodyParams) -> TriMesh {
    template.mesh.with_vertices(template.pose(params).vertices)
}

/// Reported 3D joints of the posed body.
pub fn body_joints3d(template: &BodyTemplate, params: &BodyParams) -> Vec<Vec3> {
    template.regress_posed(&template.pose(params))
}

/// Squared norm of all pose angles plus squared deviation of the shape scale from one.
pub fn pose_prior(params: &BodyParams) -> f64 {
    let pose: f64 = params.pose.iter().map(|p| p.norm_squared()).sum();
    let shape = (params.clamped_shape() - Vec3::repeat(1.0)).norm_squared();
    pose + shape
}

/// Exponential penalty on the hyperextension direction of the listed joints.
pub fn bending_prior(params: &BodyParams, spec: &[BendJoint]) -> Result<f64> {
    let mut total = 0.0;
    for b in spec {
        if b.joint >= params.pose.len() || b.axis > 2 {
            return Err(Error::BadJointIndex {
                index: b.joint,
                count: params.pose.len(),
            });
        }
        total += (b.sign * params.pose[b.joint][b.axis]).exp();
    }
    Ok(total)
}

/// Closest points between segments `p0p1` and `q0q1`: returns `(distance, s, t)`.
pub fn segment_distance(p0: &Vec3, p1: &Vec3, q0: &Vec3, q1: &Vec3) -> (f64, f64, f64) {
    let d1 = p1 - p0;
    let d2 = q1 - q0;
    let r = p0 - q0;
    let a = d1.dot(&d1);
    let e = d2.dot(&d2);
    let f = d2.dot(&r);
    let eps = 1e-18;
    let (s, t);
    if a <= eps && e <= eps {
        return ((p0 - q0).norm(), 0.0, 0.0);
    }
    if a <= eps {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= eps {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > eps * a * e {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    let cp = p0 + d1 * s;
    let cq = q0 + d2 * t;
    ((cp - cq).norm(), s, t)
}

/// Endpoints of every capsule's bone in world coordinates.
pub(crate) fn capsule_segments(template: &BodyTemplate, joints_world: &[Vec3]) -> Vec<(Vec3, Vec3)> {
    template
        .capsules
        .iter()
        .map(|c| {
            let p = template.joints[c.bone].parent.expect("validated");
            (joints_world[p], joints_world[c.bone])
        })
        .collect()
}

/// Non-adjacent capsule pairs `(i, j)` with `i < j`, indices into `capsules()`.
pub(crate) fn capsule_pairs(template: &BodyTemplate) -> Vec<(usize, usize)> {
    let caps = &template.capsules;
    let mut out = Vec::new();
    for i in 0..caps.len() {
        for j in i + 1..caps.len() {
            if !template.bones_adjacent(caps[i].bone, caps[j].bone) {
                out.push((i, j));
            }
        }
    }
    out
}

/// Sum over non-adjacent capsule pairs of the squared overlap depth.
pub fn self_penetration(template: &BodyTemplate, params: &BodyParams) -> f64 {
    let posed = template.pose(params);
    self_penetration_posed(template, &posed.joints_world)
}

pub(crate) fn self_penetration_posed(template: &BodyTemplate, joints_world: &[Vec3]) -> f64 {
    let segs = capsule_segments(template, joints_world);
    capsule_pairs(template)
        .into_iter()
        .map(|(i, j)| {
            let r = template.capsules[i].radius + template.capsules[j].radius;
            let (d, _, _) = segment_distance(&segs[i].0, &segs[i].1, &segs[j].0, &segs[j].1);
            let o = (r - d).max(0.0);
            o * o
        })
        .sum()
}
