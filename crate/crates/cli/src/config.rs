//! Run configuration: a single versioned JSON document.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use layerprobe::cca::CcaProtocolConfig;
use layerprobe::wordseg::{DistanceMetric, SegGrid, DEFAULT_TOLERANCE_S};
use layerprobe::{AttributeKind, PoolingSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// JSON-lines feature manifests, merged into one store.
    #[serde(default)]
    pub manifests: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alignments: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_sts: Option<PathBuf>,
    /// Attribute tables by property; word identity needs none.
    #[serde(default)]
    pub attributes: BTreeMap<AttributeKind, PathBuf>,
    /// Models to analyse; empty means every model in the manifests.
    #[serde(default)]
    pub models: Vec<ModelSelection>,
    /// Layers for models that do not list their own; absent means all.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<u32>>,
    #[serde(default)]
    pub analyses: Vec<Analysis>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Directory that relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSelection {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Analysis {
    Cca(CcaParams),
    Awd(AwdParams),
    Segment(SegmentParams),
    SegmentGrid(SegmentGridParams),
    Sts(StsParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CcaParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default = "default_property")]
    pub property: AttributeKind,
    #[serde(default = "default_pool")]
    pub pool: PoolingSpec,
    #[serde(default = "default_splits")]
    pub splits: usize,
    #[serde(default = "default_vocab")]
    pub vocab_size: usize,
    #[serde(default = "default_max_instances")]
    pub max_instances: usize,
    #[serde(default = "default_ridge_grid")]
    pub ridge_grid: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub svd_energy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AwdParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default = "default_awd_mode")]
    pub mode: layerprobe::awd::AwdMode,
    #[serde(default = "default_pool")]
    pub pool: PoolingSpec,
    #[serde(default = "default_min_dur")]
    pub min_dur: f64,
    #[serde(default = "default_max_dur")]
    pub max_dur: f64,
    /// Most frequent words to keep; absent keeps every word.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_size: Option<usize>,
    /// Per-word instance cap; absent keeps every instance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_instances: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<DistanceMetric>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prominence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
    #[serde(default = "default_tolerance")]
    pub tolerance_s: f64,
    /// Per-layer settings written by a grid search; overrides the fields above.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_config: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentGridParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<DistanceMetric>,
    #[serde(default = "default_prominences")]
    pub prominences: Vec<f64>,
    #[serde(default = "default_windows")]
    pub windows: Vec<usize>,
    #[serde(default = "default_tolerance")]
    pub tolerance_s: f64,
    /// Development manifests; empty means the run's manifests.
    #[serde(default)]
    pub dev_manifests: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev_alignments: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    Fbank,
    Text,
}

impl std::str::FromStr for Baseline {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        match s {
            "fbank" => Ok(Baseline::Fbank),
            "text" => Ok(Baseline::Text),
            other => bail!("unknown baseline '{other}' (expected fbank or text)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StsParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default = "default_baselines")]
    pub baselines: Vec<Baseline>,
    /// Manifest model holding the filterbank stream.
    #[serde(default = "default_fbank_model")]
    pub fbank_model: String,
}

fn default_property() -> AttributeKind {
    AttributeKind::WordId
}
fn default_pool() -> PoolingSpec {
    PoolingSpec::MeanFull
}
fn default_splits() -> usize {
    CcaProtocolConfig::default().n_splits
}
fn default_vocab() -> usize {
    500
}
fn default_max_instances() -> usize {
    20
}
fn default_ridge_grid() -> Vec<f64> {
    CcaProtocolConfig::default().ridge_grid
}
fn default_awd_mode() -> layerprobe::awd::AwdMode {
    layerprobe::awd::AwdMode::Pool
}
fn default_min_dur() -> f64 {
    0.5
}
fn default_max_dur() -> f64 {
    2.0
}
fn default_tolerance() -> f64 {
    DEFAULT_TOLERANCE_S
}
fn default_metrics() -> Vec<DistanceMetric> {
    SegGrid::default().metrics
}
fn default_prominences() -> Vec<f64> {
    SegGrid::default().prominences
}
fn default_windows() -> Vec<usize> {
    SegGrid::default().windows
}
fn default_baselines() -> Vec<Baseline> {
    vec![Baseline::Fbank, Baseline::Text]
}
fn default_fbank_model() -> String {
    "fbank".into()
}

impl CcaParams {
    pub fn new(property: AttributeKind, pool: PoolingSpec) -> Self {
        CcaParams {
            name: None,
            property,
            pool,
            splits: default_splits(),
            vocab_size: default_vocab(),
            max_instances: default_max_instances(),
            ridge_grid: default_ridge_grid(),
            svd_energy: None,
        }
    }
}

impl Default for AwdParams {
    fn default() -> Self {
        AwdParams {
            name: None,
            mode: default_awd_mode(),
            pool: default_pool(),
            min_dur: default_min_dur(),
            max_dur: default_max_dur(),
            vocab_size: None,
            max_instances: None,
        }
    }
}

impl Default for SegmentParams {
    fn default() -> Self {
        SegmentParams {
            name: None,
            metric: None,
            prominence: None,
            window: None,
            tolerance_s: default_tolerance(),
            best_config: None,
        }
    }
}

impl Default for SegmentGridParams {
    fn default() -> Self {
        SegmentGridParams {
            name: None,
            metrics: default_metrics(),
            prominences: default_prominences(),
            windows: default_windows(),
            tolerance_s: default_tolerance(),
            dev_manifests: Vec::new(),
            dev_alignments: None,
        }
    }
}

impl Default for StsParams {
    fn default() -> Self {
        StsParams {
            name: None,
            baselines: default_baselines(),
            fbank_model: default_fbank_model(),
        }
    }
}

impl Analysis {
    pub fn kind(&self) -> &'static str {
        match self {
            Analysis::Cca(_) => "cca",
            Analysis::Awd(_) => "awd",
            Analysis::Segment(_) => "segment",
            Analysis::SegmentGrid(_) => "segment_grid",
            Analysis::Sts(_) => "sts",
        }
    }

    /// Output file stem: the explicit name, or one derived from the parameters.
    pub fn name(&self) -> String {
        let explicit = match self {
            Analysis::Cca(p) => &p.name,
            Analysis::Awd(p) => &p.name,
            Analysis::Segment(p) => &p.name,
            Analysis::SegmentGrid(p) => &p.name,
            Analysis::Sts(p) => &p.name,
        };
        if let Some(n) = explicit {
            return n.clone();
        }
        match self {
            Analysis::Cca(p) => format!("cca_{}_{}", p.property, p.pool),
            Analysis::Awd(p) => format!("awd_{}_{}", p.mode, p.pool),
            other => other.kind().to_string(),
        }
    }
}

impl RunConfig {
    pub fn new(output_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            manifests: Vec::new(),
            alignments: None,
            gold_sts: None,
            attributes: BTreeMap::new(),
            models: Vec::new(),
            layers: None,
            analyses: Vec::new(),
            output_dir: output_dir.into(),
            seed: 0,
            base_dir: PathBuf::from("."),
        }
    }

    /// Parses a config file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut config =
            Self::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(config)
    }

    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        let mut config: RunConfig = serde_json::from_str(text)?;
        config.base_dir = PathBuf::from(".");
        Ok(config)
    }

    /// Resolves a path from the config against the config's directory.
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() || self.base_dir.as_os_str().is_empty() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    /// SHA-256 over the canonical JSON form of the config, output directory excluded.
    ///
    /// Defaults are filled in before hashing, so spelling out a default value
    /// does not change the hash.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = value.as_object_mut() {
            obj.remove("output_dir");
        }
        let canonical = serde_json::to_string(&value).expect("value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// One (model, layer) best setting from a grid search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestConfig {
    pub model: String,
    pub layer: u32,
    pub metric: DistanceMetric,
    pub prominence: f64,
    pub window: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub rvalue: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestConfigFile {
    pub tolerance_s: f64,
    pub configs: Vec<BestConfig>,
}

impl BestConfigFile {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn get(&self, model: &str, layer: u32) -> Option<&BestConfig> {
        self.configs
            .iter()
            .find(|c| c.model == model && c.layer == layer)
    }
}
