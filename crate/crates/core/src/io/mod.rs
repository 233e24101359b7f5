//! Scene documents, run configuration, synthetic scenes and mesh export.

mod config;
mod document;
mod export;
mod synth;

pub use config::{load_config, OutputPaths, RunConfig, DEFAULT_SDF_RESOLUTION};
pub use document::{
    builtin_mesh, load_scene, save_scene, CameraSection, HumanSection, ObjectSection, Scene, SceneDocument, Units,
    BUILTIN_PREFIX, SCHEMA_VERSION,
};
pub(crate) use document::from_json;
pub use export::{export_meshes, ExportManifest, ManifestEntry, MeshKind, MANIFEST_FILE};
pub use synth::{load_synth_spec, synth_scene, FixtureKind, Perturbation, SynthSpec, MAX_PLACEMENT_ATTEMPTS};

#[cfg(test)]
mod tests;
