//! Run configuration: loss weights, schedule, field resolution, output names and seed.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::document::from_json;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::optim::ScheduleConfig;

pub const DEFAULT_SDF_RESOLUTION: usize = 32;

/// File names written under the `--out` directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputPaths {
    pub scene: String,
    pub trajectory: String,
    pub losses: String,
}

impl Default for OutputPaths {
    fn default() -> Self {
        Self {
            scene: "refined_scene.json".into(),
            trajectory: "trajectory.jsonl".into(),
            losses: "losses.json".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub weights: LossWeights,
    pub schedule: ScheduleConfig,
    /// Cells per axis of every signed distance field.
    pub sdf_resolution: usize,
    pub outputs: OutputPaths,
    /// Only read by `synth`.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            schedule: ScheduleConfig::default(),
            sdf_resolution: DEFAULT_SDF_RESOLUTION,
            outputs: OutputPaths::default(),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.schedule.validate()?;
        if self.sdf_resolution < 2 {
            return Err(Error::schema("sdf_resolution", format!("must be at least 2, got {}", self.sdf_resolution)));
        }
        for (field, name) in [
            ("outputs.scene", &self.outputs.scene),
            ("outputs.trajectory", &self.outputs.trajectory),
            ("outputs.losses", &self.outputs.losses),
        ] {
            if name.is_empty() || Path::new(name).is_absolute() {
                return Err(Error::schema(field, "must be a non-empty relative file name"));
            }
        }
        Ok(())
    }
}

/// Read and validate a configuration file. Every field is optional.
pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg: RunConfig = from_json(&text, path)?;
    cfg.validate()?;
    Ok(cfg)
}
