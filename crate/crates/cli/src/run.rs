//! Executes a validated run configuration.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use layerprobe::awd::awd_run;
use layerprobe::cca::{cca_protocol, CcaProtocolConfig, CcaProtocolReport};
use layerprobe::featurestore::{
    load_alignments, one_hot_table, read_attribute_table, read_gold_sts, sample_word_instances,
    spans_by_utterance, SamplingConfig, SentencePair,
};
use layerprobe::pooling::{pool_samples, pool_utterance};
use layerprobe::report::{write_csv, write_json, AwdRow, CcaRow, SegRow, StsRow, Table};
use layerprobe::sts::{referenced_utterances, score_stream, text_baseline};
use layerprobe::wordseg::{
    evaluate_corpus, grid_search, reference_boundaries, SegConfig, SegGrid, SegUtterance,
};
use layerprobe::{AttributeKind, FeatureStore, ProbeError, WordSpan};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{
    Analysis, AwdParams, Baseline, BestConfig, BestConfigFile, CcaParams, RunConfig,
    SegmentGridParams, SegmentParams, StsParams, SCHEMA_VERSION,
};
use crate::validate::{selected_layers, validate, Diagnostic};

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// A task that produced no row. `model` and `layer` are absent when the
/// failure hit every task of the analysis or of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFailure {
    pub model: Option<String>,
    pub layer: Option<u32>,
    pub error: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisSummary {
    pub name: String,
    pub kind: String,
    pub csv: String,
    /// Extra JSON outputs (per-split details, best configurations).
    pub extra: Vec<String>,
    pub rows: usize,
    pub failures: Vec<TaskFailure>,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub toolkit_version: String,
    pub config_hash: String,
    pub warnings: Vec<String>,
    pub analyses: Vec<AnalysisSummary>,
    pub elapsed_s: f64,
}

impl RunSummary {
    /// True when every analysis wrote at least one row.
    pub fn complete(&self) -> bool {
        self.analyses.iter().all(|a| a.rows > 0)
    }
}

/// Worker count from `PROBE_WORKERS`; absent, empty or 0 means one per core.
pub fn workers_from_env() -> anyhow::Result<Option<usize>> {
    match std::env::var("PROBE_WORKERS") {
        Ok(v) if v.trim().is_empty() => Ok(None),
        Ok(v) => {
            let n: usize = v.trim().parse().with_context(|| {
                format!("PROBE_WORKERS must be a non-negative integer, got '{v}'")
            })?;
            Ok((n > 0).then_some(n))
        }
        Err(_) => Ok(None),
    }
}

struct Inputs {
    store: FeatureStore,
    spans: Option<Vec<WordSpan>>,
    gold: Option<Vec<SentencePair>>,
    selection: Vec<(String, Vec<u32>)>,
}

fn open_store(config: &RunConfig, manifests: &[PathBuf]) -> anyhow::Result<FeatureStore> {
    let mut store = FeatureStore::default();
    for m in manifests {
        let path = config.resolve(m);
        store.extend(
            FeatureStore::open(&path).with_context(|| format!("opening {}", path.display()))?,
        );
    }
    Ok(store)
}

impl Inputs {
    fn load(config: &RunConfig) -> anyhow::Result<Self> {
        let store = open_store(config, &config.manifests)?;
        let spans = config
            .alignments
            .as_ref()
            .map(|p| load_alignments(config.resolve(p)))
            .transpose()?;
        let gold = config
            .gold_sts
            .as_ref()
            .map(|p| read_gold_sts(config.resolve(p)))
            .transpose()?;
        let selection = selected_layers(config, &store);
        Ok(Inputs {
            store,
            spans,
            gold,
            selection,
        })
    }

    fn spans(&self) -> anyhow::Result<&[WordSpan]> {
        self.spans.as_deref().context("no alignments configured")
    }

    /// Spans of utterances the model has features for in any selected layer.
    fn model_spans(&self, model: &str, layers: &[u32]) -> anyhow::Result<Vec<WordSpan>> {
        let utts: BTreeSet<&str> = layers
            .iter()
            .flat_map(|l| self.store.utterances(model, *l))
            .collect();
        Ok(self
            .spans()?
            .iter()
            .filter(|s| utts.contains(s.utterance_id.as_str()))
            .cloned()
            .collect())
    }
}

fn failure(model: Option<&str>, layer: Option<u32>, error: impl ToString) -> TaskFailure {
    TaskFailure {
        model: model.map(str::to_string),
        layer,
        error: error.to_string(),
    }
}

/// Runs `task` for every (model, layer) in parallel and collects rows in
/// task order. Failed tasks are recorded and skipped.
fn run_tasks<S, R, F>(tasks: Vec<(String, u32, S)>, task: F) -> (Vec<R>, Vec<TaskFailure>)
where
    S: Sync + Send,
    R: Send,
    F: Fn(&str, u32, &S) -> Result<Vec<R>, ProbeError> + Sync,
{
    let results: Vec<_> = tasks
        .par_iter()
        .map(|(model, layer, state)| {
            let r = task(model, *layer, state);
            match &r {
                Ok(_) => log::info!("{model} layer {layer}: done"),
                Err(e) => log::warn!("{model} layer {layer}: {e}"),
            }
            r
        })
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for ((model, layer, _), r) in tasks.iter().zip(results) {
        match r {
            Ok(mut rs) => rows.append(&mut rs),
            Err(e) => failures.push(failure(Some(model), Some(*layer), e)),
        }
    }
    (rows, failures)
}

struct Produced<R> {
    rows: Vec<R>,
    failures: Vec<TaskFailure>,
    extra: Vec<(String, serde_json::Value)>,
}

impl<R> Produced<R> {
    fn failed(error: impl ToString) -> Self {
        Produced {
            rows: Vec::new(),
            failures: vec![failure(None, None, error)],
            extra: Vec::new(),
        }
    }
}

#[derive(Serialize)]
struct CcaDetail<'a> {
    model: &'a str,
    layer: u32,
    report: &'a CcaProtocolReport,
}

fn run_cca(p: &CcaParams, config: &RunConfig, inputs: &Inputs) -> Produced<CcaRow> {
    let shared_table = match p.property {
        AttributeKind::WordId => None,
        kind => {
            let Some(path) = config.attributes.get(&kind) else {
                return Produced::failed(format!("no attribute table for {kind}"));
            };
            match read_attribute_table(config.resolve(path), kind) {
                Ok(t) => Some(t),
                Err(e) => return Produced::failed(e),
            }
        }
    };
    let sampling = |model: &str, layers: &[u32]| -> anyhow::Result<_> {
        let spans = inputs.model_spans(model, layers)?;
        let samples = sample_word_instances(
            &spans,
            &SamplingConfig {
                vocab_size: p.vocab_size,
                max_instances: p.max_instances,
                duration_range: None,
                seed: config.seed,
            },
        )?;
        let table = match &shared_table {
            Some(t) => t.clone(),
            None => {
                let vocab: BTreeSet<&str> = samples.iter().map(|s| s.word()).collect();
                one_hot_table(&vocab.into_iter().collect::<Vec<_>>())?
            }
        };
        Ok((samples, table))
    };
    let mut tasks = Vec::new();
    let mut failures = Vec::new();
    for (model, layers) in &inputs.selection {
        match sampling(model, layers) {
            Ok(state) => {
                let state = std::sync::Arc::new(state);
                tasks.extend(layers.iter().map(|l| (model.clone(), *l, state.clone())));
            }
            Err(e) => failures.push(failure(Some(model), None, format!("{e:#}"))),
        }
    }
    let protocol = CcaProtocolConfig {
        n_splits: p.splits,
        ridge_grid: p.ridge_grid.clone(),
        seed: config.seed,
        svd_energy: p.svd_energy,
    };
    let (reports, mut task_failures) = run_tasks(tasks, |model, layer, state| {
        let (samples, table) = &**state;
        let pooled = pool_samples(samples, layer, p.pool, |u| {
            inputs.store.load(model, u, layer)
        })?;
        let report = cca_protocol(&pooled, table, &protocol)?;
        Ok(vec![(model.to_string(), layer, report)])
    });
    failures.append(&mut task_failures);
    let rows = reports
        .iter()
        .map(|(model, layer, r)| CcaRow {
            model: model.clone(),
            layer: *layer,
            property: p.property.to_string(),
            pool: p.pool.to_string(),
            mean: r.test.mean,
            min: r.test.min,
            max: r.test.max,
        })
        .collect();
    let details: Vec<CcaDetail> = reports
        .iter()
        .map(|(model, layer, report)| CcaDetail {
            model,
            layer: *layer,
            report,
        })
        .collect();
    Produced {
        rows,
        failures,
        extra: vec![(
            "splits".into(),
            serde_json::to_value(details).expect("details serialize"),
        )],
    }
}

fn run_awd(p: &AwdParams, config: &RunConfig, inputs: &Inputs) -> Produced<AwdRow> {
    let range = Some((p.min_dur, p.max_dur));
    let sampling = |model: &str, layers: &[u32]| -> anyhow::Result<_> {
        let spans = inputs.model_spans(model, layers)?;
        let vocab_size = match p.vocab_size {
            Some(v) => v,
            None => {
                let eligible: BTreeSet<&str> = spans
                    .iter()
                    .filter(|s| {
                        s.duration() >= p.min_dur - 1e-9 && s.duration() <= p.max_dur + 1e-9
                    })
                    .map(|s| s.word.as_str())
                    .collect();
                eligible.len().max(1)
            }
        };
        Ok(sample_word_instances(
            &spans,
            &SamplingConfig {
                vocab_size,
                max_instances: p.max_instances.unwrap_or(usize::MAX),
                duration_range: range,
                seed: config.seed,
            },
        )?)
    };
    let mut tasks = Vec::new();
    let mut failures = Vec::new();
    for (model, layers) in &inputs.selection {
        match sampling(model, layers) {
            Ok(samples) => {
                let samples = std::sync::Arc::new(samples);
                tasks.extend(layers.iter().map(|l| (model.clone(), *l, samples.clone())));
            }
            Err(e) => failures.push(failure(Some(model), None, format!("{e:#}"))),
        }
    }
    let (rows, mut task_failures) = run_tasks(tasks, |model, layer, samples| {
        let out = awd_run(samples, p.mode, p.pool, range, |u| {
            inputs.store.load(model, u, layer)
        })?;
        Ok(vec![AwdRow {
            model: model.to_string(),
            layer,
            mode: p.mode.to_string(),
            ap: out.ap,
        }])
    });
    failures.append(&mut task_failures);
    Produced {
        rows,
        failures,
        extra: Vec::new(),
    }
}

/// Loads every utterance of (model, layer) that has alignments.
fn seg_corpus(
    store: &FeatureStore,
    spans: &[WordSpan],
    model: &str,
    layer: u32,
) -> Result<Vec<SegUtterance>, ProbeError> {
    let by_utt = spans_by_utterance(spans);
    let available = store.utterances(model, layer);
    let corpus: Vec<SegUtterance> = by_utt
        .iter()
        .filter(|(u, _)| available.contains(*u))
        .map(|(u, ss)| {
            Ok(SegUtterance {
                features: store.load(model, u, layer)?,
                reference: reference_boundaries(ss.iter().copied()),
            })
        })
        .collect::<Result<_, ProbeError>>()?;
    if corpus.is_empty() {
        return Err(ProbeError::InsufficientData(format!(
            "no aligned utterances for {model} layer {layer}"
        )));
    }
    Ok(corpus)
}

fn layer_tasks(selection: &[(String, Vec<u32>)]) -> Vec<(String, u32, ())> {
    selection
        .iter()
        .flat_map(|(m, ls)| ls.iter().map(move |l| (m.clone(), *l, ())))
        .collect()
}

fn run_segment(p: &SegmentParams, config: &RunConfig, inputs: &Inputs) -> Produced<SegRow> {
    let spans = match inputs.spans() {
        Ok(s) => s,
        Err(e) => return Produced::failed(e),
    };
    let best = match &p.best_config {
        Some(path) => match BestConfigFile::load(&config.resolve(path)) {
            Ok(b) => Some(b),
            Err(e) => return Produced::failed(format!("{e:#}")),
        },
        None => None,
    };
    let (rows, failures) = run_tasks(layer_tasks(&inputs.selection), |model, layer, _| {
        let seg = match &best {
            Some(b) => {
                let c = b.get(model, layer).ok_or_else(|| {
                    ProbeError::Config(format!(
                        "best_config has no entry for {model} layer {layer}"
                    ))
                })?;
                SegConfig {
                    metric: c.metric,
                    prominence: c.prominence,
                    window: c.window,
                }
            }
            None => match (p.metric, p.prominence, p.window) {
                (Some(metric), Some(prominence), Some(window)) => SegConfig {
                    metric,
                    prominence,
                    window,
                },
                _ => {
                    return Err(ProbeError::Config(
                        "incomplete segmentation settings".into(),
                    ))
                }
            },
        };
        let corpus = seg_corpus(&inputs.store, spans, model, layer)?;
        let score = evaluate_corpus(&corpus, &seg, p.tolerance_s)?;
        Ok(vec![SegRow {
            model: model.to_string(),
            layer,
            metric: seg.metric.to_string(),
            prominence: seg.prominence,
            window: seg.window,
            precision: score.precision,
            recall: score.recall,
            f1: score.f1,
            rvalue: score.r_value,
        }])
    });
    Produced {
        rows,
        failures,
        extra: Vec::new(),
    }
}

fn run_segment_grid(
    p: &SegmentGridParams,
    config: &RunConfig,
    inputs: &Inputs,
) -> Produced<SegRow> {
    let dev_store;
    let (store, selection) = if p.dev_manifests.is_empty() {
        (&inputs.store, inputs.selection.clone())
    } else {
        match open_store(config, &p.dev_manifests) {
            Ok(s) => {
                dev_store = s;
                let sel = selected_layers(config, &dev_store);
                (&dev_store, sel)
            }
            Err(e) => return Produced::failed(format!("{e:#}")),
        }
    };
    let dev_spans;
    let spans: &[WordSpan] = match &p.dev_alignments {
        Some(path) => match load_alignments(config.resolve(path)) {
            Ok(s) => {
                dev_spans = s;
                &dev_spans
            }
            Err(e) => return Produced::failed(e),
        },
        None => match inputs.spans() {
            Ok(s) => s,
            Err(e) => return Produced::failed(e),
        },
    };
    let grid = SegGrid {
        metrics: p.metrics.clone(),
        prominences: p.prominences.clone(),
        windows: p.windows.clone(),
    };
    let (results, failures) = run_tasks(layer_tasks(&selection), |model, layer, _| {
        let corpus = seg_corpus(store, spans, model, layer)?;
        Ok(vec![(
            model.to_string(),
            layer,
            grid_search(&corpus, &grid, p.tolerance_s)?,
        )])
    });
    let mut rows = Vec::new();
    let mut best = Vec::new();
    for (model, layer, result) in &results {
        for cell in &result.cells {
            rows.push(SegRow {
                model: model.clone(),
                layer: *layer,
                metric: cell.config.metric.to_string(),
                prominence: cell.config.prominence,
                window: cell.config.window,
                precision: cell.score.precision,
                recall: cell.score.recall,
                f1: cell.score.f1,
                rvalue: cell.score.r_value,
            });
        }
        let b = &result.best;
        best.push(BestConfig {
            model: model.clone(),
            layer: *layer,
            metric: b.config.metric,
            prominence: b.config.prominence,
            window: b.config.window,
            precision: b.score.precision,
            recall: b.score.recall,
            f1: b.score.f1,
            rvalue: b.score.r_value,
        });
    }
    let file = BestConfigFile {
        tolerance_s: p.tolerance_s,
        configs: best,
    };
    Produced {
        rows,
        failures,
        extra: vec![(
            "best".into(),
            serde_json::to_value(file).expect("best configs serialize"),
        )],
    }
}

/// Utterance vectors for every rendition the store has for (model, layer).
fn utterance_vectors(
    store: &FeatureStore,
    utts: &BTreeSet<&str>,
    model: &str,
    layer: u32,
) -> Result<BTreeMap<String, Vec<f32>>, ProbeError> {
    utts.iter()
        .filter(|u| store.contains(model, u, layer))
        .map(|u| Ok((u.to_string(), pool_utterance(&store.load(model, u, layer)?))))
        .collect()
}

fn run_sts(p: &StsParams, inputs: &Inputs) -> Produced<StsRow> {
    let Some(pairs) = inputs.gold.as_deref() else {
        return Produced::failed("no gold_sts configured");
    };
    let utts = referenced_utterances(pairs);
    let with_fbank = p.baselines.contains(&Baseline::Fbank);
    let mut tasks = layer_tasks(&inputs.selection);
    tasks.retain(|(m, _, _)| !(with_fbank && *m == p.fbank_model));
    if with_fbank {
        tasks.extend(
            inputs
                .store
                .layers(&p.fbank_model)
                .into_iter()
                .map(|l| (p.fbank_model.clone(), l, ())),
        );
    }
    let (mut rows, mut failures) = run_tasks(tasks, |model, layer, _| {
        let vectors = utterance_vectors(&inputs.store, &utts, model, layer)?;
        let out = score_stream(pairs, &vectors)?;
        if !out.skipped.is_empty() {
            log::warn!(
                "{model} layer {layer}: {} pairs skipped for missing renditions",
                out.skipped.len()
            );
        }
        Ok(vec![StsRow {
            model: if with_fbank && model == p.fbank_model {
                "fbank".into()
            } else {
                model.to_string()
            },
            layer: Some(layer),
            rho: out.rho,
            n_pairs: out.n_scored,
        }])
    });
    if with_fbank && inputs.store.layers(&p.fbank_model).is_empty() {
        failures.push(failure(
            Some(&p.fbank_model),
            None,
            "fbank stream not in manifests",
        ));
    }
    if p.baselines.contains(&Baseline::Text) {
        match text_baseline(pairs) {
            Ok(out) => rows.push(StsRow {
                model: "text".into(),
                layer: None,
                rho: out.rho,
                n_pairs: out.n_scored,
            }),
            Err(e) => failures.push(failure(Some("text"), None, e)),
        }
    }
    Produced {
        rows,
        failures,
        extra: Vec::new(),
    }
}

fn finish<R: Table>(
    name: &str,
    kind: &str,
    out_dir: &Path,
    produced: Produced<R>,
    start: Instant,
) -> anyhow::Result<AnalysisSummary> {
    let csv = format!("{name}.csv");
    write_csv(&out_dir.join(&csv), &produced.rows)?;
    let mut extra = Vec::new();
    for (suffix, value) in &produced.extra {
        let file = format!("{name}_{suffix}.json");
        write_json(&out_dir.join(&file), value)?;
        extra.push(file);
    }
    Ok(AnalysisSummary {
        name: name.to_string(),
        kind: kind.to_string(),
        csv,
        extra,
        rows: produced.rows.len(),
        failures: produced.failures,
        elapsed_s: start.elapsed().as_secs_f64(),
    })
}

/// Output directory of a config, resolved against the config's location.
pub fn output_dir(config: &RunConfig) -> PathBuf {
    config.resolve(&config.output_dir)
}

/// Validates, then runs every analysis and writes one CSV per analysis plus
/// `summary.json` into the output directory.
///
/// Fails only when the config does not validate or outputs cannot be
/// written; per-(model, layer) failures are recorded in the summary.
pub fn run(config: &RunConfig, workers: Option<usize>) -> anyhow::Result<RunSummary> {
    let diagnostics = validate(config);
    let (errors, warnings): (Vec<Diagnostic>, Vec<Diagnostic>) =
        diagnostics.into_iter().partition(|d| d.is_error());
    if !errors.is_empty() {
        let lines: Vec<String> = errors.iter().map(|d| d.to_string()).collect();
        bail!("invalid configuration:\n  {}", lines.join("\n  "));
    }
    for w in &warnings {
        log::warn!("{}", w.message);
    }
    let started = Instant::now();
    let out_dir = output_dir(config);
    std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().context("building worker pool")?;

    let inputs = Inputs::load(config)?;
    let mut analyses = Vec::new();
    for analysis in &config.analyses {
        let name = analysis.name();
        let kind = analysis.kind();
        log::info!("running {name}");
        let start = Instant::now();
        let summary = pool.install(|| match analysis {
            Analysis::Cca(p) => finish(&name, kind, &out_dir, run_cca(p, config, &inputs), start),
            Analysis::Awd(p) => finish(&name, kind, &out_dir, run_awd(p, config, &inputs), start),
            Analysis::Segment(p) => finish(
                &name,
                kind,
                &out_dir,
                run_segment(p, config, &inputs),
                start,
            ),
            Analysis::SegmentGrid(p) => finish(
                &name,
                kind,
                &out_dir,
                run_segment_grid(p, config, &inputs),
                start,
            ),
            Analysis::Sts(p) => finish(&name, kind, &out_dir, run_sts(p, &inputs), start),
        })?;
        analyses.push(summary);
    }
    let summary = RunSummary {
        schema_version: SCHEMA_VERSION,
        toolkit_version: TOOLKIT_VERSION.to_string(),
        config_hash: config.hash(),
        warnings: warnings.into_iter().map(|d| d.message).collect(),
        analyses,
        elapsed_s: started.elapsed().as_secs_f64(),
    };
    write_json(&out_dir.join("summary.json"), &summary)?;
    Ok(summary)
}
