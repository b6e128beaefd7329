use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use layerprobe::awd::AwdMode;
use layerprobe::wordseg::{DistanceMetric, SegGrid, DEFAULT_TOLERANCE_S};
use layerprobe::{AttributeKind, PoolingSpec};
use layerprobe_cli::config::{
    Analysis, AwdParams, Baseline, CcaParams, ModelSelection, RunConfig, SegmentGridParams,
    SegmentParams, StsParams,
};
use layerprobe_cli::run::{output_dir, run, RunSummary};
use layerprobe_cli::validate::validate;

#[derive(Parser)]
#[command(
    name = "probe",
    version,
    about = "Layer-wise analysis of speech model representations"
)]
struct Cli {
    /// Worker threads; 0 uses one per core.
    #[arg(long, env = "PROBE_WORKERS", global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a run config and its inputs without running anything.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run every analysis of a config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// PWCCA between pooled word segments and a linguistic property.
    Cca(CcaArgs),
    /// Acoustic word discrimination scored by average precision.
    Awd(AwdArgs),
    /// Word segmentation with fixed settings.
    Segment(SegmentArgs),
    /// Grid search for segmentation settings on a development set.
    SegmentGrid(SegmentGridArgs),
    /// Spoken sentence similarity scored by Spearman correlation.
    Sts(StsArgs),
}

#[derive(Args)]
struct Common {
    /// Feature manifest; repeat to merge several.
    #[arg(long = "manifest")]
    manifests: Vec<PathBuf>,
    /// Word alignments CSV.
    #[arg(long)]
    alignments: Option<PathBuf>,
    /// Model to analyse; repeat for several. Default: every model in the manifests.
    #[arg(long = "model")]
    models: Vec<String>,
    /// `all`, or a list such as `0,3,5-8`.
    #[arg(long, default_value = "all")]
    layers: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = "probe-out")]
    out: PathBuf,
}

#[derive(Args)]
struct CcaArgs {
    #[command(flatten)]
    common: Common,
    /// word_id, agwe, ptb or semcor.
    #[arg(long, default_value = "word_id")]
    property: AttributeKind,
    /// Attribute table TSV; not needed for word_id.
    #[arg(long)]
    attributes: Option<PathBuf>,
    /// mean, q1..q4 or f0..f4.
    #[arg(long, default_value = "mean")]
    pool: PoolingSpec,
    #[arg(long, default_value_t = 5)]
    splits: usize,
    #[arg(long, default_value_t = 500)]
    vocab_size: usize,
    #[arg(long, default_value_t = 20)]
    max_instances: usize,
    /// Keep this fraction of variance via SVD before CCA.
    #[arg(long)]
    svd_energy: Option<f64>,
}

#[derive(Args)]
struct AwdArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "pool")]
    mode: AwdMode,
    #[arg(long, default_value = "mean")]
    pool: PoolingSpec,
    #[arg(long, default_value_t = 0.5)]
    min_dur: f64,
    #[arg(long, default_value_t = 2.0)]
    max_dur: f64,
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    max_instances: Option<usize>,
}

#[derive(Args)]
struct SegmentArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    metric: Option<DistanceMetric>,
    #[arg(long)]
    prominence: Option<f64>,
    #[arg(long)]
    window: Option<usize>,
    /// Per-layer settings written by segment-grid.
    #[arg(long)]
    best_config: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TOLERANCE_S)]
    tolerance: f64,
}

#[derive(Args)]
struct SegmentGridArgs {
    #[command(flatten)]
    common: Common,
    /// Development-set manifest; repeat to merge several.
    #[arg(long = "dev-manifest", required = true)]
    dev_manifests: Vec<PathBuf>,
    /// Comma-separated metrics.
    #[arg(long, value_delimiter = ',')]
    metrics: Vec<DistanceMetric>,
    /// Comma-separated prominence thresholds.
    #[arg(long, value_delimiter = ',')]
    prominences: Vec<f64>,
    /// Comma-separated odd window sizes.
    #[arg(long, value_delimiter = ',')]
    windows: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_TOLERANCE_S)]
    tolerance: f64,
}

#[derive(Args)]
struct StsArgs {
    #[command(flatten)]
    common: Common,
    /// Gold similarity TSV.
    #[arg(long)]
    gold: PathBuf,
    /// Comma-separated baselines: fbank, text.
    #[arg(long, value_delimiter = ',', default_value = "fbank,text")]
    baselines: Vec<Baseline>,
    /// Manifest model holding the filterbank stream.
    #[arg(long, default_value = "fbank")]
    fbank_model: String,
}

fn parse_layers(spec: &str) -> anyhow::Result<Option<Vec<u32>>> {
    let spec = spec.trim();
    if spec == "all" {
        return Ok(None);
    }
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u32, u32) = (a.trim().parse()?, b.trim().parse()?);
                if a > b {
                    bail!("empty layer range {part}");
                }
                out.extend(a..=b);
            }
            None => out.push(
                part.parse()
                    .with_context(|| format!("bad layer '{part}'"))?,
            ),
        }
    }
    if out.is_empty() {
        bail!("no layers in '{spec}'");
    }
    Ok(Some(out))
}

fn base_config(common: &Common, analysis: Analysis) -> anyhow::Result<RunConfig> {
    let mut config = RunConfig::new(&common.out);
    config.manifests = common.manifests.clone();
    config.alignments = common.alignments.clone();
    config.layers = parse_layers(&common.layers)?;
    config.models = common
        .models
        .iter()
        .map(|m| ModelSelection {
            name: m.clone(),
            layers: None,
        })
        .collect();
    config.seed = common.seed;
    config.analyses = vec![analysis];
    Ok(config)
}

fn build_config(command: Command) -> anyhow::Result<RunConfig> {
    match command {
        Command::Cca(a) => {
            let mut params = CcaParams::new(a.property, a.pool);
            params.splits = a.splits;
            params.vocab_size = a.vocab_size;
            params.max_instances = a.max_instances;
            params.svd_energy = a.svd_energy;
            let mut config = base_config(&a.common, Analysis::Cca(params))?;
            if let Some(path) = a.attributes {
                config.attributes.insert(a.property, path);
            }
            Ok(config)
        }
        Command::Awd(a) => base_config(
            &a.common,
            Analysis::Awd(AwdParams {
                mode: a.mode,
                pool: a.pool,
                min_dur: a.min_dur,
                max_dur: a.max_dur,
                vocab_size: a.vocab_size,
                max_instances: a.max_instances,
                ..AwdParams::default()
            }),
        ),
        Command::Segment(a) => base_config(
            &a.common,
            Analysis::Segment(SegmentParams {
                metric: a.metric,
                prominence: a.prominence,
                window: a.window,
                tolerance_s: a.tolerance,
                best_config: a.best_config,
                ..SegmentParams::default()
            }),
        ),
        Command::SegmentGrid(a) => {
            let defaults = SegGrid::default();
            let params = SegmentGridParams {
                metrics: if a.metrics.is_empty() {
                    defaults.metrics
                } else {
                    a.metrics
                },
                prominences: if a.prominences.is_empty() {
                    defaults.prominences
                } else {
                    a.prominences
                },
                windows: if a.windows.is_empty() {
                    defaults.windows
                } else {
                    a.windows
                },
                tolerance_s: a.tolerance,
                ..SegmentGridParams::default()
            };
            let mut config = base_config(&a.common, Analysis::SegmentGrid(params))?;
            config.manifests = a.dev_manifests;
            Ok(config)
        }
        Command::Sts(a) => {
            let mut config = base_config(
                &a.common,
                Analysis::Sts(StsParams {
                    baselines: a.baselines,
                    fbank_model: a.fbank_model,
                    ..StsParams::default()
                }),
            )?;
            config.gold_sts = Some(a.gold);
            Ok(config)
        }
        Command::Validate { .. } | Command::Run { .. } => unreachable!("handled by the caller"),
    }
}

fn report(summary: &RunSummary, config: &RunConfig) -> ExitCode {
    let dir = output_dir(config);
    for a in &summary.analyses {
        println!(
            "{}: {} rows -> {}",
            a.name,
            a.rows,
            dir.join(&a.csv).display()
        );
        for f in &a.failures {
            let what = match (&f.model, f.layer) {
                (Some(m), Some(l)) => format!("{m} layer {l}"),
                (Some(m), None) => m.clone(),
                _ => "all tasks".into(),
            };
            println!("  failed: {what}: {}", f.error);
        }
    }
    println!("config hash {}", summary.config_hash);
    if summary.complete() {
        ExitCode::SUCCESS
    } else {
        eprintln!("error: at least one analysis produced no output");
        ExitCode::from(1)
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<ExitCode> {
    let workers = cli.workers.filter(|n| *n > 0);
    match cli.command {
        Command::Validate { config } => {
            let config = RunConfig::load(&config)?;
            let diagnostics = validate(&config);
            for d in &diagnostics {
                println!("{d}");
            }
            if diagnostics.is_empty() {
                println!("config is valid");
            }
            Ok(if diagnostics.iter().any(|d| d.is_error()) {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            })
        }
        Command::Run { config, out } => {
            let mut config = RunConfig::load(&config)?;
            if let Some(out) = out {
                config.output_dir = std::path::absolute(out)?;
            }
            let summary = run(&config, workers)?;
            Ok(report(&summary, &config))
        }
        command => {
            let config = build_config(command)?;
            let summary = run(&config, workers)?;
            Ok(report(&summary, &config))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
