//! Bundled procedural template and the sidecar JSON format.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BendJoint, BodyTemplate, Capsule, Joint, SparseRow, TemplateParts};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::mesh::{load_mesh, save_obj, TriMesh};

pub const TEMPLATE_FORMAT: &str = "scenefit-body/1";

/// Sidecar JSON contents. Sparse matrices are `[row, column, weight]` triplets.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateFile {
    pub format: String,
    /// Mesh path, relative to the sidecar.
    pub mesh: String,
    pub joints: Vec<Joint>,
    /// `[vertex, joint, weight]`
    pub skinning: Vec<(usize, usize, f64)>,
    /// `[reported joint, vertex, weight]`
    pub regressor: Vec<(usize, usize, f64)>,
    pub regressor_rows: usize,
    pub contact_vertices: Vec<usize>,
    pub keypoint_map: Vec<usize>,
    #[serde(default)]
    pub keypoint_names: Vec<String>,
    #[serde(default)]
    pub capsules: Vec<Capsule>,
    #[serde(default)]
    pub bend_joints: Vec<BendJoint>,
}

fn rows_from_triplets(n: usize, trip: &[(usize, usize, f64)], what: &str) -> Result<Vec<SparseRow>> {
    let mut rows = vec![Vec::new(); n];
    for &(r, c, w) in trip {
        let row = rows.get_mut(r).ok_or_else(|| {
            Error::InvalidInput(format!("{what} triplet row {r} out of range ({n})"))
        })?;
        row.push((c, w));
    }
    Ok(rows)
}

/// Load a template from its sidecar JSON; the mesh is resolved relative to it.
pub fn load_template(path: impl AsRef<Path>) -> Result<BodyTemplate> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let file: TemplateFile = serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
        path: e.path().to_string(),
        reason: e.inner().to_string(),
    })?;
    if file.format != TEMPLATE_FORMAT {
        return Err(Error::Schema {
            path: "format".into(),
            reason: format!("expected `{TEMPLATE_FORMAT}`, got `{}`", file.format),
        });
    }
    let mesh_path = path.parent().unwrap_or(Path::new(".")).join(&file.mesh);
    let mesh = load_mesh(&mesh_path)?;
    let skinning = rows_from_triplets(mesh.vertices().len(), &file.skinning, "skinning")?;
    let regressor = rows_from_triplets(file.regressor_rows, &file.regressor, "regressor")?;
    BodyTemplate::new(TemplateParts {
        mesh,
        joints: file.joints,
        skinning,
        regressor,
        contact_vertices: file.contact_vertices,
        keypoint_map: file.keypoint_map,
        capsules: file.capsules,
        bend_joints: file.bend_joints,
    })
}

/// Write `<dir>/<stem>.json` and `<dir>/<stem>.obj`; returns the JSON path.
pub fn save_template(template: &BodyTemplate, dir: impl AsRef<Path>, stem: &str) -> Result<std::path::PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mesh_name = format!("{stem}.obj");
    save_obj(template.mesh(), dir.join(&mesh_name))?;
    let triplets = |rows: &[SparseRow]| -> Vec<(usize, usize, f64)> {
        rows.iter()
            .enumerate()
            .flat_map(|(r, row)| row.iter().map(move |&(c, w)| (r, c, w)))
            .collect()
    };
    let file = TemplateFile {
        format: TEMPLATE_FORMAT.into(),
        mesh: mesh_name,
        joints: template.joints().to_vec(),
        skinning: triplets(template.skinning()),
        regressor: triplets(template.regressor()),
        regressor_rows: template.regressor().len(),
        contact_vertices: template.contact_vertices().to_vec(),
        keypoint_map: template.keypoint_map().to_vec(),
        keypoint_names: COCO_KEYPOINTS.iter().map(|s| s.to_string()).collect(),
        capsules: template.capsules().to_vec(),
        bend_joints: template.bend_joints().to_vec(),
    };
    let json_path = dir.join(format!("{stem}.json"));
    let text = serde_json::to_string_pretty(&file).expect("template serializes");
    fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))?;
    Ok(json_path)
}

pub const COCO_KEYPOINTS: [&str; 17] = [
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
];

const SIDES: usize = 8;

/// (name, parent, offset, tube radius for the bone ending here)
const SKELETON: [(&str, Option<usize>, [f64; 3], f64); 19] = [
    ("pelvis", None, [0.0, 0.95, 0.0], 0.0),
    ("spine", Some(0), [0.0, 0.12, 0.0], 0.12),
    ("chest", Some(1), [0.0, 0.25, 0.0], 0.13),
    ("neck", Some(2), [0.0, 0.15, 0.0], 0.05),
    ("head", Some(3), [0.0, 0.20, 0.0], 0.10),
    ("left_shoulder", Some(2), [0.19, 0.12, 0.0], 0.05),
    ("left_elbow", Some(5), [0.04, -0.28, 0.0], 0.05),
    ("left_wrist", Some(6), [0.0, -0.25, 0.0], 0.04),
    ("right_shoulder", Some(2), [-0.19, 0.12, 0.0], 0.05),
    ("right_elbow", Some(8), [-0.04, -0.28, 0.0], 0.05),
    ("right_wrist", Some(9), [0.0, -0.25, 0.0], 0.04),
    ("left_hip", Some(0), [0.09, -0.06, 0.0], 0.08),
    ("left_knee", Some(11), [0.0, -0.42, 0.0], 0.07),
    ("left_ankle", Some(12), [0.0, -0.40, 0.0], 0.05),
    ("left_foot", Some(13), [0.0, -0.03, 0.14], 0.04),
    ("right_hip", Some(0), [-0.09, -0.06, 0.0], 0.08),
    ("right_knee", Some(15), [0.0, -0.42, 0.0], 0.07),
    ("right_ankle", Some(16), [0.0, -0.40, 0.0], 0.05),
    ("right_foot", Some(17), [0.0, -0.03, 0.14], 0.04),
];

struct Tube {
    /// Ring vertex indices at t = 0, 0.5, 1.
    rings: [Vec<usize>; 3],
    /// Unit radial direction of each ring vertex (shared by all rings).
    radial: Vec<Vec3>,
}

/// Orthonormal frame with `w` along the bone; `u` prefers the world x axis.
fn frame(w: &Vec3) -> (Vec3, Vec3) {
    let seed = if w.x.abs() < 0.9 { Vec3::x() } else { Vec3::z() };
    let u = (seed - w * w.dot(&seed)).normalize();
    let v = w.cross(&u);
    (u, v)
}

fn push_tube(
    verts: &mut Vec<Vec3>,
    faces: &mut Vec<[usize; 3]>,
    a: Vec3,
    b: Vec3,
    radius: f64,
) -> Tube {
    let w = (b - a).normalize();
    let (u, v) = frame(&w);
    let radial: Vec<Vec3> = (0..SIDES)
        .map(|k| {
            let t = 2.0 * PI * k as f64 / SIDES as f64;
            u * t.cos() + v * t.sin()
        })
        .collect();
    let mut rings: [Vec<usize>; 3] = Default::default();
    for (r, t) in [0.0, 0.5, 1.0].into_iter().enumerate() {
        let c = a + (b - a) * t;
        for d in &radial {
            rings[r].push(verts.len());
            verts.push(c + d * radius);
        }
    }
    let cap_a = verts.len();
    verts.push(a - w * (0.5 * radius));
    let cap_b = verts.len();
    verts.push(b + w * (0.5 * radius));
    // radial[k] = u cos + v sin with w = u × v, so increasing k winds counter-clockwise about w
    for r in 0..2 {
        for k in 0..SIDES {
            let k1 = (k + 1) % SIDES;
            let (p0, p1) = (rings[r][k], rings[r][k1]);
            let (q0, q1) = (rings[r + 1][k], rings[r + 1][k1]);
            faces.push([p0, p1, q1]);
            faces.push([p0, q1, q0]);
        }
    }
    for k in 0..SIDES {
        let k1 = (k + 1) % SIDES;
        faces.push([cap_a, rings[0][k1], rings[0][k]]);
        faces.push([cap_b, rings[2][k], rings[2][k1]]);
    }
    Tube { rings, radial }
}

/// Procedural 19-joint body made of capped octagonal tubes, standing on y = 0 and
/// facing +z, with the subject's left side at +x.
pub fn default_template() -> BodyTemplate {
    let nj = SKELETON.len();
    let joints: Vec<Joint> = SKELETON
        .iter()
        .map(|&(name, parent, offset, _)| Joint {
            name: name.to_string(),
            parent,
            offset,
        })
        .collect();
    let mut rest = vec![Vec3::zeros(); nj];
    for j in 0..nj {
        let off = Vec3::from(SKELETON[j].2);
        rest[j] = match SKELETON[j].1 {
            Some(p) => rest[p] + off,
            None => off,
        };
    }

    let mut verts = Vec::new();
    let mut faces = Vec::new();
    let mut skinning: Vec<SparseRow> = Vec::new();
    let mut tubes: Vec<Option<Tube>> = Vec::with_capacity(nj);
    for (j, &(_, parent, _, radius)) in SKELETON.iter().enumerate() {
        let Some(p) = parent else {
            tubes.push(None);
            continue;
        };
        let start = verts.len();
        let tube = push_tube(&mut verts, &mut faces, rest[p], rest[j], radius);
        // the bone moves with its parent joint; its ends blend with the neighbouring bones
        let start_row: SparseRow = match SKELETON[p].1 {
            Some(g) => vec![(g, 0.5), (p, 0.5)],
            None => vec![(p, 1.0)],
        };
        let end_row: SparseRow = vec![(p, 0.5), (j, 0.5)];
        skinning.resize(verts.len(), Vec::new());
        for &v in &tube.rings[0] {
            skinning[v] = start_row.clone();
        }
        for &v in &tube.rings[1] {
            skinning[v] = vec![(p, 1.0)];
        }
        for &v in &tube.rings[2] {
            skinning[v] = end_row.clone();
        }
        let caps = start + 3 * SIDES;
        skinning[caps] = start_row;
        skinning[caps + 1] = end_row;
        tubes.push(Some(tube));
    }
    let mesh = TriMesh::new(verts, faces).expect("procedural body is valid");

    let ring_mean = |ring: &[usize]| -> SparseRow {
        let w = 1.0 / ring.len() as f64;
        ring.iter().map(|&v| (v, w)).collect()
    };
    let tube = |j: usize| tubes[j].as_ref().expect("bone");
    let id = |name: &str| SKELETON.iter().position(|s| s.0 == name).expect("joint");
    // head features sit on the head tube's middle ring: radial 0 is +x (left), 4 is -x, 6 is +z (front)
    let head = tube(id("head"));
    let face_vertex = |k: usize| vec![(head.rings[1][k], 1.0)];
    let mut regressor: Vec<SparseRow> = vec![
        face_vertex(6),
        face_vertex(7),
        face_vertex(5),
        face_vertex(0),
        face_vertex(4),
    ];
    for name in [
        "left_shoulder",
        "right_shoulder",
        "left_elbow",
        "right_elbow",
        "left_wrist",
        "right_wrist",
        "left_hip",
        "right_hip",
        "left_knee",
        "right_knee",
        "left_ankle",
        "right_ankle",
    ] {
        regressor.push(ring_mean(&tube(id(name)).rings[2]));
    }
    let keypoint_map: Vec<usize> = (0..regressor.len()).collect();

    let mut contact = Vec::new();
    let mut directional = |j: usize, dir: Vec3, rings: &[usize]| {
        let t = tube(j);
        for &r in rings {
            for (k, &v) in t.rings[r].iter().enumerate() {
                if t.radial[k].dot(&dir) > 0.5 {
                    contact.push(v);
                }
            }
        }
    };
    for foot in ["left_foot", "right_foot"] {
        directional(id(foot), -Vec3::y(), &[0, 1, 2]);
    }
    for hip in ["left_hip", "right_hip"] {
        directional(id(hip), -Vec3::z(), &[0, 1, 2]);
    }
    for wrist in ["left_wrist", "right_wrist"] {
        let t = tube(id(wrist));
        contact.extend(&t.rings[2]);
    }
    contact.sort_unstable();
    contact.dedup();

    let capsule = |name: &str, radius: f64| Capsule {
        bone: id(name),
        radius,
    };
    let capsules = vec![
        capsule("chest", 0.11),
        capsule("left_elbow", 0.05),
        capsule("left_wrist", 0.04),
        capsule("right_elbow", 0.05),
        capsule("right_wrist", 0.04),
        capsule("left_knee", 0.07),
        capsule("left_ankle", 0.05),
        capsule("right_knee", 0.07),
        capsule("right_ankle", 0.05),
    ];
    // elbows flex forward (negative x rotation), knees flex backward (positive x rotation)
    let bend = |name: &str, sign: f64| BendJoint {
        joint: id(name),
        axis: 0,
        sign,
    };
    let bend_joints = vec![
        bend("left_elbow", 1.0),
        bend("right_elbow", 1.0),
        bend("left_knee", -1.0),
        bend("right_knee", -1.0),
    ];

    BodyTemplate::new(TemplateParts {
        mesh,
        joints,
        skinning,
        regressor,
        contact_vertices: contact,
        keypoint_map,
        capsules,
        bend_joints,
    })
    .expect("bundled template is valid")
}

/// Load a template file, or the bundled one when `path` is `None`.
pub fn template_or_default(path: Option<&Path>) -> Result<BodyTemplate> {
    match path {
        Some(p) => load_template(p),
        None => Ok(default_template()),
    }
}
