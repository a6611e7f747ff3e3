//! Dataset manifest: one entry per clip, paths relative to the manifest file.
//!
//! Unknown keys are captured in `extra` maps so that rewriting a manifest
//! produced by a newer tool keeps them.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Real,
    Synthetic,
}

impl Source {
    pub fn as_str(&self) -> &'static str {
        match self {
            Source::Real => "real",
            Source::Synthetic => "synthetic",
        }
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub clip_id: String,
    pub source: Source,
    /// Forward flows, frame n -> n+1.
    #[serde(default)]
    pub flow_paths: Vec<String>,
    /// Backward flows, frame n+1 -> n.
    #[serde(default)]
    pub backward_flow_paths: Vec<String>,
    #[serde(default)]
    pub frame_paths: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub encoded_paths: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory_path: Option<String>,
    #[serde(default = "default_true")]
    pub kept: bool,
    /// Cycle-consistency score in pixels; `None` when unscored.
    #[serde(default)]
    pub error: Option<f64>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl ManifestEntry {
    pub fn new(clip_id: impl Into<String>, source: Source) -> Self {
        Self {
            clip_id: clip_id.into(),
            source,
            flow_paths: Vec::new(),
            backward_flow_paths: Vec::new(),
            frame_paths: Vec::new(),
            encoded_paths: Vec::new(),
            trajectory_path: None,
            kept: true,
            error: None,
            extra: Map::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<usize>,
    /// Dataset-level flow scale factor.
    #[serde(default)]
    pub scale_factor_px: Option<f64>,
    #[serde(default)]
    pub entries: Vec<ManifestEntry>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn kept(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(|e| e.kept)
    }

    pub fn count(&self, source: Source) -> usize {
        self.entries.iter().filter(|e| e.source == source).count()
    }
}

/// Resolves a manifest-relative path.
pub fn resolve(root: &Path, rel: &str) -> PathBuf {
    root.join(rel)
}
