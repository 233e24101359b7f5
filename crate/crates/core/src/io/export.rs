//! OBJ export of the placed object meshes, the body and the layout box.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::document::{to_json_pretty, write_text};
use crate::error::{Error, Result};
use crate::losses::SceneState;
use crate::mesh::{save_obj, shapes};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeshKind {
    Object,
    Body,
    Layout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub kind: MeshKind,
    /// Relative to the manifest.
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportManifest {
    pub meshes: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn file_stem(label: &str) -> String {
    let s: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    if s.is_empty() {
        "object".into()
    } else {
        s
    }
}

/// Write every mesh of `state` into `dir` plus a `manifest.json` listing them.
pub fn export_meshes(state: &SceneState, dir: impl AsRef<Path>) -> Result<ExportManifest> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut meshes = Vec::new();
    for (i, o) in state.objects.iter().enumerate() {
        let file = format!("object_{i:02}_{}.obj", file_stem(&o.label));
        save_obj(&o.placed_mesh(), dir.join(&file))?;
        meshes.push(ManifestEntry {
            name: o.label.clone(),
            kind: MeshKind::Object,
            file,
        });
    }
    if let Some(body) = state.body_mesh() {
        let file = "body.obj".to_string();
        save_obj(&body, dir.join(&file))?;
        meshes.push(ManifestEntry {
            name: "body".into(),
            kind: MeshKind::Body,
            file,
        });
    }
    let file = "layout.obj".to_string();
    save_obj(&shapes::box_mesh(&state.layout.bbox), dir.join(&file))?;
    meshes.push(ManifestEntry {
        name: "layout".into(),
        kind: MeshKind::Layout,
        file,
    });
    let manifest = ExportManifest { meshes };
    write_text(&dir.join(MANIFEST_FILE), &to_json_pretty(&manifest))?;
    Ok(manifest)
}
