//! The JSON run configuration shared by every subcommand.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tps::render::Rgb8;
use tps::synth::{DatasetManifest, GenConfig, MANIFEST_FILE};
use tps::train::TrainConfig;
use tps::{Error, Result};

/// Paths are taken as given, relative to the working directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Dataset directory: written by `gen-data`, read by everything else.
    pub dataset: Option<PathBuf>,
    /// Run directory for checkpoints, logs, reports and images.
    pub out_dir: Option<PathBuf>,
    /// Checkpoint read by `eval` and `render`.
    pub checkpoint: Option<PathBuf>,
    pub train: TrainConfig,
    pub generate: GenConfig,
    pub render: RenderOptions,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderOptions {
    /// Index into the evaluation split.
    pub clip: usize,
    /// One colour per class; evenly spaced hues when absent.
    pub palette: Option<Vec<Rgb8>>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn dataset_path(&self) -> Result<&Path> {
        self.dataset
            .as_deref()
            .ok_or_else(|| Error::Config("missing field `dataset`: no dataset directory given".into()))
    }

    /// Loads the manifest, treating an absent dataset as a config error.
    pub fn manifest(&self) -> Result<DatasetManifest> {
        let path = self.dataset_path()?;
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        if !file.is_file() {
            return Err(Error::Config(format!(
                "field `dataset`: no dataset manifest at {}",
                file.display()
            )));
        }
        DatasetManifest::load(path)
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.out_dir
            .as_deref()
            .ok_or_else(|| Error::Config("missing field `out_dir`: no output directory given".into()))
    }

    /// The configured checkpoint, else the one inside `out_dir`.
    pub fn checkpoint_path(&self) -> Result<PathBuf> {
        if let Some(p) = &self.checkpoint {
            return Ok(p.clone());
        }
        let dir = self
            .out_dir
            .as_deref()
            .ok_or_else(|| Error::Config("missing field `checkpoint`: no checkpoint or out_dir given".into()))?;
        Ok(dir.join(tps::harness::CHECKPOINT_FILE))
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()
    }
}
