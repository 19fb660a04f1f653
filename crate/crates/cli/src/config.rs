use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use tpa_nrsfm::pipeline::PipelineConfig;

/// How the camera path is initialised.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    /// Rank-3k factorisation of the tracks.
    #[default]
    Bmm,
    /// World-to-camera rotations read from `cameras`.
    File,
}

/// Everything a `reconstruct` run depends on, as one flat JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(flatten)]
    pub pipeline: PipelineConfig,
    pub init: InitMode,
    pub input: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    pub cameras: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub rotations: Option<PathBuf>,
    pub canonical: Option<PathBuf>,
    pub diagnostics: Option<PathBuf>,
    pub seed: u64,
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            init: InitMode::Bmm,
            input: None,
            mask: None,
            cameras: None,
            out: None,
            rotations: None,
            canonical: None,
            diagnostics: None,
            seed: 0,
            threads: 1,
        }
    }
}

/// Reads a JSON config, or the default when `path` is `None`.
pub fn load<T: Default + for<'de> Deserialize<'de>>(path: Option<&Path>) -> anyhow::Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("config {}: {e}", path.display()))
}

/// Writes `value` as pretty JSON.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n")
        .map_err(|e| anyhow::anyhow!("cannot write {}: {e}", path.display()))
}
