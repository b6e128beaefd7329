use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::format::{read_feature_file, FeatureSequence};
use crate::error::{ProbeError, Result};

/// One line of a JSON-lines manifest: where the features of one
/// (model, utterance, layer) triple live, relative to the manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub model: String,
    pub utterance_id: String,
    pub layer: u32,
    pub path: String,
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| ProbeError::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| ProbeError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(&line)
            .map_err(|e| ProbeError::Format(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[ManifestRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).expect("manifest records serialize");
        buf.push(b'\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| ProbeError::io(path, e))
}

type Key = (String, String, u32);

/// Index of feature files described by a manifest. Files are read on demand.
#[derive(Debug, Clone, Default)]
pub struct FeatureStore {
    entries: BTreeMap<Key, PathBuf>,
}

impl FeatureStore {
    /// Opens a manifest; relative paths resolve against its directory.
    pub fn open(manifest: impl AsRef<Path>) -> Result<Self> {
        let manifest = manifest.as_ref();
        let root = manifest.parent().unwrap_or_else(|| Path::new("."));
        let mut store = FeatureStore::default();
        for rec in read_manifest(manifest)? {
            let key = (rec.model.clone(), rec.utterance_id.clone(), rec.layer);
            if store.entries.insert(key, root.join(&rec.path)).is_some() {
                return Err(ProbeError::Format(format!(
                    "duplicate manifest entry for model {} utterance {} layer {}",
                    rec.model, rec.utterance_id, rec.layer
                )));
            }
        }
        Ok(store)
    }

    /// Merges another store's entries; later entries win.
    pub fn extend(&mut self, other: FeatureStore) {
        self.entries.extend(other.entries);
    }

    pub fn insert(&mut self, model: &str, utterance_id: &str, layer: u32, path: PathBuf) {
        self.entries
            .insert((model.to_string(), utterance_id.to_string(), layer), path);
    }

    pub fn models(&self) -> BTreeSet<&str> {
        self.entries.keys().map(|(m, _, _)| m.as_str()).collect()
    }

    pub fn layers(&self, model: &str) -> BTreeSet<u32> {
        self.entries
            .keys()
            .filter(|(m, _, _)| m == model)
            .map(|&(_, _, l)| l)
            .collect()
    }

    pub fn utterances(&self, model: &str, layer: u32) -> BTreeSet<&str> {
        self.entries
            .keys()
            .filter(|(m, _, l)| m == model && *l == layer)
            .map(|(_, u, _)| u.as_str())
            .collect()
    }

    pub fn path(&self, model: &str, utterance_id: &str, layer: u32) -> Option<&Path> {
        self.entries
            .get(&(model.to_string(), utterance_id.to_string(), layer))
            .map(PathBuf::as_path)
    }

    pub fn contains(&self, model: &str, utterance_id: &str, layer: u32) -> bool {
        self.path(model, utterance_id, layer).is_some()
    }

    pub fn paths(&self) -> impl Iterator<Item = (&str, &str, u32, &Path)> {
        self.entries
            .iter()
            .map(|((m, u, l), p)| (m.as_str(), u.as_str(), *l, p.as_path()))
    }

    pub fn load(&self, model: &str, utterance_id: &str, layer: u32) -> Result<FeatureSequence> {
        let path = self.path(model, utterance_id, layer).ok_or_else(|| {
            ProbeError::Config(format!(
                "no features for model {model} utterance {utterance_id} layer {layer}"
            ))
        })?;
        Ok(read_feature_file(path)?.with_identity(utterance_id, layer))
    }
}
