//! The `scenefit/1` scene document: schema, validation, loading and saving.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::body::{template_or_default, BodyParams, BodyTemplate};
use crate::error::{Error, Result};
use crate::geometry::{BBox3D, CameraPose, Intrinsics, Rect2D, RoomLayout, Vec2};
use crate::losses::{HumanState, Keypoint, SceneObject, SceneState};
use crate::mesh::{load_mesh, normalize_unit_cube, shapes, TriMesh};

pub const SCHEMA_VERSION: &str = "scenefit/1";

/// Prefix of mesh references resolved to procedural meshes instead of files.
pub const BUILTIN_PREFIX: &str = "builtin:";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Units {
    pub length: String,
    pub image: String,
}

impl Default for Units {
    fn default() -> Self {
        Self {
            length: "meters".into(),
            image: "pixels".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSection {
    pub intrinsics: Intrinsics,
    /// Radians.
    pub init_pitch: f64,
    /// Radians.
    pub init_roll: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSection {
    pub label: String,
    /// File path relative to the document, or `builtin:cube` / `builtin:sphere`.
    pub mesh: String,
    pub bbox: BBox3D,
    /// `[xmin, ymin, xmax, ymax]` in pixels.
    pub detection: Rect2D,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HumanSection {
    /// Template sidecar JSON relative to the document; the bundled template when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
    /// `[x, y, confidence]` per template keypoint.
    pub keypoints_2d: Vec<[f64; 3]>,
    pub params: BodyParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneDocument {
    pub schema: String,
    #[serde(default)]
    pub units: Units,
    pub camera: CameraSection,
    pub layout: BBox3D,
    pub objects: Vec<ObjectSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human: Option<HumanSection>,
}

/// Deserialize JSON text, reporting syntax problems as parse errors and shape problems as
/// schema errors with the dotted field path.
pub(crate) fn from_json<T: DeserializeOwned>(text: &str, origin: &Path) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let mut path = e.path().to_string();
        let inner = e.into_inner();
        if inner.is_syntax() || inner.is_eof() || inner.is_io() {
            return Error::Parse {
                path: origin.to_path_buf(),
                line: inner.line(),
                reason: inner.to_string(),
            };
        }
        let reason = inner.to_string();
        // point at the missing field itself rather than its parent
        if let Some(field) = reason.strip_prefix("missing field `").and_then(|r| r.split('`').next()) {
            path = if path == "." { field.to_string() } else { format!("{path}.{field}") };
        }
        Error::schema(path, reason)
    })
}

pub(crate) fn to_json_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("document types serialize");
    s.push('\n');
    s
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn absolute_dir(path: &Path) -> Result<PathBuf> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::path::absolute(dir).map_err(|e| Error::io(dir, e))
}

/// Procedural mesh for a `builtin:` reference.
pub fn builtin_mesh(name: &str) -> Option<TriMesh> {
    match name {
        "cube" => Some(shapes::cube(4)),
        "sphere" => Some(shapes::icosphere(0.5, 2)),
        _ => None,
    }
}

fn resolve(base: &Path, reference: &str) -> PathBuf {
    let p = Path::new(reference);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// A validated document with its meshes and body template loaded.
#[derive(Debug, Clone)]
pub struct Scene {
    pub document: SceneDocument,
    /// Directory that relative references in `document` resolve against.
    pub base_dir: PathBuf,
    /// Unit-cube normalized mesh per object.
    pub meshes: Vec<Arc<TriMesh>>,
    pub template: Option<Arc<BodyTemplate>>,
}

impl Scene {
    /// Validate `document` and load everything it references.
    pub fn from_document(document: SceneDocument, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let base_dir = base_dir.into();
        let doc = &document;
        if doc.schema != SCHEMA_VERSION {
            return Err(Error::schema(
                "schema",
                format!("expected `{SCHEMA_VERSION}`, got `{}`", doc.schema),
            ));
        }
        if doc.units.length != "meters" {
            return Err(Error::schema("units.length", format!("only `meters` is supported, got `{}`", doc.units.length)));
        }
        if doc.units.image != "pixels" {
            return Err(Error::schema("units.image", format!("only `pixels` is supported, got `{}`", doc.units.image)));
        }
        for (name, v) in [("camera.init_pitch", doc.camera.init_pitch), ("camera.init_roll", doc.camera.init_roll)] {
            if !v.is_finite() {
                return Err(Error::schema(name, "must be finite"));
            }
        }
        if doc.objects.is_empty() {
            return Err(Error::schema("objects", "at least one object is required"));
        }
        let mut meshes = Vec::with_capacity(doc.objects.len());
        for (i, o) in doc.objects.iter().enumerate() {
            let raw = match o.mesh.strip_prefix(BUILTIN_PREFIX) {
                Some(name) => builtin_mesh(name)
                    .ok_or_else(|| Error::schema(format!("objects[{i}].mesh"), format!("unknown builtin mesh `{name}`")))?,
                None => {
                    let path = resolve(&base_dir, &o.mesh);
                    if !path.is_file() {
                        return Err(Error::schema(
                            format!("objects[{i}].mesh"),
                            format!("file {} does not exist", path.display()),
                        ));
                    }
                    load_mesh(&path)?
                }
            };
            raw.check_watertight()?;
            meshes.push(Arc::new(normalize_unit_cube(&raw)?));
        }
        let template = match &doc.human {
            None => None,
            Some(h) => {
                let path = h.template.as_deref().map(|t| resolve(&base_dir, t));
                if let Some(p) = path.as_deref().filter(|p| !p.is_file()) {
                    return Err(Error::schema("human.template", format!("file {} does not exist", p.display())));
                }
                let t = template_or_default(path.as_deref())?;
                let want = t.keypoint_map().len();
                if h.keypoints_2d.len() != want {
                    return Err(Error::schema(
                        "human.keypoints_2d",
                        format!("template defines {want} keypoints, document has {}", h.keypoints_2d.len()),
                    ));
                }
                for (k, kp) in h.keypoints_2d.iter().enumerate() {
                    if !kp.iter().all(|v| v.is_finite()) || !(0.0..=1.0).contains(&kp[2]) {
                        return Err(Error::schema(
                            format!("human.keypoints_2d[{k}]"),
                            "coordinates must be finite and confidence in [0, 1]",
                        ));
                    }
                }
                if h.params.pose.len() != t.joint_count() {
                    return Err(Error::schema(
                        "human.params.pose",
                        format!("template has {} joints, document has {}", t.joint_count(), h.params.pose.len()),
                    ));
                }
                if !h.params.is_finite() {
                    return Err(Error::schema("human.params", "must be finite"));
                }
                Some(Arc::new(t))
            }
        };
        Ok(Self {
            document,
            base_dir,
            meshes,
            template,
        })
    }

    /// Optimization state at the document's values.
    pub fn to_state(&self, sdf_resolution: usize) -> Result<SceneState> {
        let doc = &self.document;
        let objects = doc
            .objects
            .iter()
            .zip(&self.meshes)
            .map(|(o, m)| SceneObject {
                label: o.label.clone(),
                bbox: o.bbox,
                mesh: Arc::clone(m),
                detection: o.detection,
            })
            .collect();
        let human = match (&doc.human, &self.template) {
            (Some(h), Some(t)) => Some(HumanState {
                template: Arc::clone(t),
                params: h.params.clone(),
                keypoints: h
                    .keypoints_2d
                    .iter()
                    .map(|k| Keypoint {
                        pixel: Vec2::new(k[0], k[1]),
                        confidence: k[2],
                    })
                    .collect(),
            }),
            _ => None,
        };
        SceneState::new(
            doc.camera.intrinsics,
            CameraPose::new(doc.camera.init_pitch, doc.camera.init_roll),
            RoomLayout::new(doc.layout),
            objects,
            human,
            sdf_resolution,
        )
    }

    /// Copy of this scene with the optimizable values taken from `state`.
    pub fn with_state(&self, state: &SceneState) -> Result<Self> {
        if state.objects.len() != self.document.objects.len() {
            return Err(Error::LengthMismatch {
                left: state.objects.len(),
                right: self.document.objects.len(),
            });
        }
        let mut out = self.clone();
        let doc = &mut out.document;
        doc.camera.init_pitch = state.camera.pitch;
        doc.camera.init_roll = state.camera.roll;
        doc.layout = state.layout.bbox;
        for (o, s) in doc.objects.iter_mut().zip(&state.objects) {
            o.bbox = s.bbox;
        }
        if let (Some(h), Some(s)) = (doc.human.as_mut(), state.human.as_ref()) {
            h.params = s.params.clone();
        }
        Ok(out)
    }

    /// The document with file references rewritten relative to `dir`.
    pub fn document_relative_to(&self, dir: &Path) -> Result<SceneDocument> {
        let dir = std::path::absolute(dir).map_err(|e| Error::io(dir, e))?;
        let rel = |r: &str| -> String {
            if r.starts_with(BUILTIN_PREFIX) {
                return r.to_string();
            }
            let abs = resolve(&self.base_dir, r);
            let p = pathdiff::diff_paths(&abs, &dir).unwrap_or(abs);
            p.to_string_lossy().replace('\\', "/")
        };
        let mut doc = self.document.clone();
        for o in &mut doc.objects {
            o.mesh = rel(&o.mesh);
        }
        if let Some(h) = doc.human.as_mut() {
            h.template = h.template.as_deref().map(rel);
        }
        Ok(doc)
    }

    /// Write the document to `path`; file references stay valid from the new location.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let doc = self.document_relative_to(&absolute_dir(path)?)?;
        write_text(path, &to_json_pretty(&doc))
    }
}

/// Parse and validate a scene document; relative references resolve against its directory.
pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: SceneDocument = from_json(&text, path)?;
    Scene::from_document(doc, absolute_dir(path)?)
}

/// Write `scene` with the values of `state` to `path`.
pub fn save_scene(scene: &Scene, state: &SceneState, path: impl AsRef<Path>) -> Result<()> {
    scene.with_state(state)?.save(path)
}
