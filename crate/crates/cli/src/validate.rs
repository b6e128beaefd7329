//! Static checks on a run configuration and its inputs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use layerprobe::featurestore::{
    load_alignments, read_attribute_table, read_feature_header, read_gold_sts,
};
use layerprobe::{AttributeKind, FeatureStore};
use serde::{Deserialize, Serialize};

use crate::config::{Analysis, Baseline, BestConfigFile, RunConfig, SCHEMA_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    /// The run cannot start.
    Error,
    /// Affects individual (model, layer) tasks, which will be marked failed.
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub message: String,
}

impl Diagnostic {
    fn error(message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Error,
            message: message.into(),
        }
    }

    fn warning(message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Warning,
            message: message.into(),
        }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{tag}: {}", self.message)
    }
}

/// Formats a sorted layer set compactly, e.g. `0-11` or `0-3, 5`.
pub(crate) fn layer_ranges(layers: &BTreeSet<u32>) -> String {
    let mut parts = Vec::new();
    let mut iter = layers.iter().copied().peekable();
    while let Some(start) = iter.next() {
        let mut end = start;
        while iter.peek() == Some(&(end + 1)) {
            end = iter.next().unwrap();
        }
        parts.push(if start == end {
            start.to_string()
        } else {
            format!("{start}-{end}")
        });
    }
    parts.join(", ")
}

/// The (model, layers) pairs a config selects, restricted to what the store has.
pub fn selected_layers(config: &RunConfig, store: &FeatureStore) -> Vec<(String, Vec<u32>)> {
    let pick = |model: &str, layers: &Option<Vec<u32>>| -> Vec<u32> {
        let available = store.layers(model);
        match layers.as_ref().or(config.layers.as_ref()) {
            Some(ls) => {
                let mut ls: Vec<u32> = ls
                    .iter()
                    .copied()
                    .filter(|l| available.contains(l))
                    .collect();
                ls.sort_unstable();
                ls.dedup();
                ls
            }
            None => available.into_iter().collect(),
        }
    };
    if config.models.is_empty() {
        store
            .models()
            .into_iter()
            .map(|m| (m.to_string(), pick(m, &None)))
            .collect()
    } else {
        config
            .models
            .iter()
            .map(|m| (m.name.clone(), pick(&m.name, &m.layers)))
            .collect()
    }
}

fn open_store(
    config: &RunConfig,
    manifests: &[std::path::PathBuf],
    out: &mut Vec<Diagnostic>,
) -> Option<FeatureStore> {
    let mut store = FeatureStore::default();
    let mut ok = true;
    for m in manifests {
        match FeatureStore::open(config.resolve(m)) {
            Ok(s) => store.extend(s),
            Err(e) => {
                out.push(Diagnostic::error(format!("manifest {}: {e}", m.display())));
                ok = false;
            }
        }
    }
    ok.then_some(store)
}

/// Checks every feature file header; reports unreadable files and
/// per-(model, layer) dimension or frame-shift mismatches.
fn check_feature_files(
    store: &FeatureStore,
    selection: &[(String, Vec<u32>)],
    out: &mut Vec<Diagnostic>,
) {
    let wanted: BTreeSet<(&str, u32)> = selection
        .iter()
        .flat_map(|(m, ls)| ls.iter().map(move |l| (m.as_str(), *l)))
        .collect();
    let mut shapes: BTreeMap<(&str, u32), BTreeMap<(usize, u64), Vec<&str>>> = BTreeMap::new();
    for (model, utt, layer, path) in store.paths() {
        if !wanted.contains(&(model, layer)) {
            continue;
        }
        match read_feature_header(path) {
            Ok(h) => {
                let shift_us = (h.frame_shift.secs() * 1e6).round() as u64;
                shapes
                    .entry((model, layer))
                    .or_default()
                    .entry((h.cols, shift_us))
                    .or_default()
                    .push(utt);
            }
            Err(e) => out.push(Diagnostic::warning(format!(
                "model {model} layer {layer} utterance {utt}: unreadable feature file: {e}"
            ))),
        }
    }
    for ((model, layer), by_shape) in shapes {
        if by_shape.len() > 1 {
            let desc: Vec<String> = by_shape
                .iter()
                .map(|((d, s), utts)| {
                    format!(
                        "dim {d} at {s} us shift ({} files, e.g. {})",
                        utts.len(),
                        utts[0]
                    )
                })
                .collect();
            out.push(Diagnostic::warning(format!(
                "model {model} layer {layer}: dimension mismatch: {}",
                desc.join("; ")
            )));
        }
    }
}

fn check_path(config: &RunConfig, what: &str, path: &Path, out: &mut Vec<Diagnostic>) -> bool {
    let resolved = config.resolve(path);
    match std::fs::metadata(&resolved) {
        Ok(m) if m.is_file() => true,
        Ok(_) => {
            out.push(Diagnostic::error(format!(
                "{what} {} is not a file",
                path.display()
            )));
            false
        }
        Err(e) => {
            out.push(Diagnostic::error(format!("{what} {}: {e}", path.display())));
            false
        }
    }
}

fn check_params(analysis: &Analysis, config: &RunConfig, out: &mut Vec<Diagnostic>) {
    let name = analysis.name();
    let mut bad = |msg: String| out.push(Diagnostic::error(format!("analysis {name}: {msg}")));
    match analysis {
        Analysis::Cca(p) => {
            if p.splits < 2 {
                bad(format!("splits must be at least 2, got {}", p.splits));
            }
            if p.vocab_size == 0 || p.max_instances == 0 {
                bad("vocab_size and max_instances must be at least 1".into());
            }
            if p.ridge_grid.is_empty() || p.ridge_grid.iter().any(|r| !(r.is_finite() && *r >= 0.0))
            {
                bad("ridge_grid must be a non-empty list of finite non-negative values".into());
            }
            if let Some(e) = p.svd_energy {
                if !(e > 0.0 && e <= 1.0) {
                    bad(format!("svd_energy must be in (0, 1], got {e}"));
                }
            }
        }
        Analysis::Awd(p) => {
            if !(p.min_dur >= 0.0 && p.min_dur <= p.max_dur) {
                bad(format!(
                    "duration range [{}, {}] is empty",
                    p.min_dur, p.max_dur
                ));
            }
            if p.vocab_size == Some(0) || p.max_instances == Some(0) {
                bad("vocab_size and max_instances must be at least 1".into());
            }
        }
        Analysis::Segment(p) => {
            if p.best_config.is_none() {
                match (p.metric, p.prominence, p.window) {
                    (Some(_), Some(th), Some(w)) => {
                        if !(th > 0.0 && th.is_finite()) {
                            bad(format!("prominence must be positive, got {th}"));
                        }
                        if w == 0 || w % 2 == 0 {
                            bad(format!("window must be an odd integer >= 1, got {w}"));
                        }
                    }
                    _ => bad("set metric, prominence and window, or best_config".into()),
                }
            }
            if !(p.tolerance_s > 0.0) {
                bad(format!(
                    "tolerance_s must be positive, got {}",
                    p.tolerance_s
                ));
            }
        }
        Analysis::SegmentGrid(p) => {
            if p.metrics.is_empty() || p.prominences.is_empty() || p.windows.is_empty() {
                bad("grid has no cells".into());
            }
            if p.prominences.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
                bad("prominences must be positive".into());
            }
            if p.windows.iter().any(|w| *w == 0 || w % 2 == 0) {
                bad("windows must be odd integers >= 1".into());
            }
            if !(p.tolerance_s > 0.0) {
                bad(format!(
                    "tolerance_s must be positive, got {}",
                    p.tolerance_s
                ));
            }
        }
        Analysis::Sts(p) => {
            if p.baselines.contains(&Baseline::Text) && config.gold_sts.is_none() {
                bad("text baseline needs gold_sts".into());
            }
        }
    }
}

/// Reports every problem found in `config` and the inputs it references,
/// without running any analysis. An empty list means the config is valid.
pub fn validate(config: &RunConfig) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    if config.schema_version != SCHEMA_VERSION {
        out.push(Diagnostic::error(format!(
            "unsupported schema_version {} (expected {SCHEMA_VERSION})",
            config.schema_version
        )));
    }
    if config.analyses.is_empty() {
        out.push(Diagnostic::error("no analyses selected"));
    }
    if config.output_dir.as_os_str().is_empty() {
        out.push(Diagnostic::error("output_dir is empty"));
    }
    let mut names = BTreeSet::new();
    for a in &config.analyses {
        if !names.insert(a.name()) {
            out.push(Diagnostic::error(format!(
                "duplicate analysis name {}; set distinct names",
                a.name()
            )));
        }
        check_params(a, config, &mut out);
    }

    let needs = |pred: fn(&Analysis) -> bool| config.analyses.iter().any(pred);
    let needs_spans = needs(|a| !matches!(a, Analysis::Sts(_)));
    let needs_gold = needs(|a| matches!(a, Analysis::Sts(_)));
    let needs_features =
        needs(|a| !matches!(a, Analysis::SegmentGrid(p) if !p.dev_manifests.is_empty()));

    if needs_features && config.manifests.is_empty() {
        out.push(Diagnostic::error("no manifests given"));
    }
    if needs_spans {
        match &config.alignments {
            Some(p) => {
                if check_path(config, "alignments", p, &mut out) {
                    if let Err(e) = load_alignments(config.resolve(p)) {
                        out.push(Diagnostic::error(format!(
                            "alignments {}: {e}",
                            p.display()
                        )));
                    }
                }
            }
            None if needs(|a| !matches!(a, Analysis::Sts(_) | Analysis::SegmentGrid(_))) => {
                out.push(Diagnostic::error(
                    "alignments are required for cca, awd and segment",
                ));
            }
            None => {}
        }
    }
    if needs_gold {
        match &config.gold_sts {
            Some(p) => {
                if check_path(config, "gold_sts", p, &mut out) {
                    if let Err(e) = read_gold_sts(config.resolve(p)) {
                        out.push(Diagnostic::error(format!("gold_sts {}: {e}", p.display())));
                    }
                }
            }
            None => out.push(Diagnostic::error("gold_sts is required for sts")),
        }
    }
    for a in &config.analyses {
        match a {
            Analysis::Cca(p) if p.property != AttributeKind::WordId => {
                match config.attributes.get(&p.property) {
                    Some(path) => {
                        if check_path(config, "attribute table", path, &mut out) {
                            if let Err(e) = read_attribute_table(config.resolve(path), p.property) {
                                out.push(Diagnostic::error(format!(
                                    "attribute table {}: {e}",
                                    path.display()
                                )));
                            }
                        }
                    }
                    None => out.push(Diagnostic::error(format!(
                        "analysis {}: no attribute table for property {}",
                        a.name(),
                        p.property
                    ))),
                }
            }
            Analysis::Segment(p) => {
                if let Some(path) = &p.best_config {
                    if check_path(config, "best_config", path, &mut out) {
                        if let Err(e) = BestConfigFile::load(&config.resolve(path)) {
                            out.push(Diagnostic::error(format!("{e:#}")));
                        }
                    }
                }
            }
            Analysis::SegmentGrid(p) => {
                if let Some(path) = &p.dev_alignments {
                    check_path(config, "dev_alignments", path, &mut out);
                } else if config.alignments.is_none() {
                    out.push(Diagnostic::error(format!(
                        "analysis {}: no alignments for the dev set",
                        a.name()
                    )));
                }
                if let Some(store) = open_store(config, &p.dev_manifests, &mut out) {
                    let sel = selected_layers(config, &store);
                    if !p.dev_manifests.is_empty() {
                        check_feature_files(&store, &sel, &mut out);
                    }
                }
            }
            _ => {}
        }
    }

    for path in &config.manifests {
        check_path(config, "manifest", path, &mut out);
    }
    let Some(store) = open_store(config, &config.manifests, &mut out) else {
        return out;
    };
    let models = store.models();
    for sel in &config.models {
        if !models.contains(sel.name.as_str()) {
            let known: Vec<&str> = models.iter().copied().collect();
            out.push(Diagnostic::error(format!(
                "model {} not in manifests (available: {})",
                sel.name,
                known.join(", ")
            )));
        }
    }
    let check_layers = |model: &str, layers: &[u32], out: &mut Vec<Diagnostic>| {
        let available = store.layers(model);
        for l in layers {
            if !available.contains(l) {
                out.push(Diagnostic::error(format!(
                    "model {model}: layer {l} out of range (manifest has layers {})",
                    layer_ranges(&available)
                )));
            }
        }
    };
    if config.models.is_empty() {
        if let Some(ls) = &config.layers {
            for m in &models {
                check_layers(m, ls, &mut out);
            }
        }
    } else {
        for sel in config
            .models
            .iter()
            .filter(|s| models.contains(s.name.as_str()))
        {
            if let Some(ls) = sel.layers.as_ref().or(config.layers.as_ref()) {
                check_layers(&sel.name, ls, &mut out);
            }
        }
    }
    for a in &config.analyses {
        if let Analysis::Sts(p) = a {
            if p.baselines.contains(&Baseline::Fbank) && !models.contains(p.fbank_model.as_str()) {
                out.push(Diagnostic::error(format!(
                    "analysis {}: fbank baseline model {} not in manifests",
                    a.name(),
                    p.fbank_model
                )));
            }
        }
    }
    let mut selection = selected_layers(config, &store);
    if let Some(fbank) = config.analyses.iter().find_map(|a| match a {
        Analysis::Sts(p) if p.baselines.contains(&Baseline::Fbank) => Some(p.fbank_model.clone()),
        _ => None,
    }) {
        if !selection.iter().any(|(m, _)| *m == fbank) {
            let layers = store.layers(&fbank).into_iter().collect();
            selection.push((fbank, layers));
        }
    }
    check_feature_files(&store, &selection, &mut out);
    out
}
