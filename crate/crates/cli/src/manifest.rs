//! Machine-readable record of a run directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use isobench_core::blocks::ModelConfig;
use isobench_core::probing::LayerProbe;
use serde::{Deserialize, Serialize};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CommandRecord {
    pub command: String,
    pub config: BTreeMap<String, String>,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub threads: usize,
    pub deterministic: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub epochs: usize,
    pub steps: u64,
    pub initial_loss: Option<f64>,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbeSummary {
    pub report: String,
    pub best_layer: usize,
    pub best_accuracy: f64,
    pub val_loss: Option<f64>,
    pub layers: Vec<LayerProbe>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub model: Option<ModelConfig>,
    pub commands: Vec<CommandRecord>,
    pub final_metrics: Option<FinalMetrics>,
    pub probe: Option<ProbeSummary>,
    pub files: Vec<FileEntry>,
}

pub fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

fn inventory(root: &Path, dir: &Path, out: &mut Vec<FileEntry>) -> Result<()> {
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let entry = entry?;
        let path = entry.path();
        if path.is_dir() {
            inventory(root, &path, out)?;
            continue;
        }
        let rel = path
            .strip_prefix(root)
            .unwrap_or(&path)
            .to_string_lossy()
            .replace('\\', "/");
        if rel == MANIFEST || rel.ends_with(".tmp") {
            continue;
        }
        out.push(FileEntry {
            path: rel,
            bytes: entry.metadata()?.len(),
        });
    }
    Ok(())
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", Path::new(&tmp).display()))?;
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Option<Manifest>> {
        let path = dir.join(MANIFEST);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
        Ok(Some(
            serde_json::from_slice(&text).with_context(|| format!("parsing {}", path.display()))?,
        ))
    }

    /// Loads (or starts) the manifest in `dir`, applies `edit`, refreshes the
    /// file inventory and writes it back atomically.
    pub fn update(dir: &Path, edit: impl FnOnce(&mut Manifest)) -> Result<Manifest> {
        let mut m = Self::load(dir)?.unwrap_or_default();
        m.tool = "isobench".into();
        m.version = env!("CARGO_PKG_VERSION").into();
        edit(&mut m);
        m.files.clear();
        inventory(dir, dir, &mut m.files)?;
        m.files.sort_by(|a, b| a.path.cmp(&b.path));
        write_atomic(&dir.join(MANIFEST), &serde_json::to_vec_pretty(&m)?)?;
        Ok(m)
    }
}
