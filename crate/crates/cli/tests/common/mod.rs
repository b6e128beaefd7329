//! Synthetic fixture set: feature dumps, alignments, gold pairs and a run config.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use layerprobe::featurestore::{
    write_alignments, write_feature_file, write_gold_sts, write_manifest, FrameShift,
    ManifestRecord, SentencePair,
};
use layerprobe::{FeatureSequence, WordSpan};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const VOCAB: [&str; 10] = [
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel", "india", "juliet",
];
pub const MODEL: &str = "synth";
pub const LAYERS: u32 = 3;
pub const DIM: usize = 8;
pub const N_UTTS: usize = 16;
pub const WORDS_PER_UTT: usize = 6;
const SHIFT_S: f64 = 0.02;

pub struct Fixture {
    pub root: PathBuf,
    pub config: PathBuf,
    pub manifest: PathBuf,
    pub alignments: PathBuf,
    pub gold: PathBuf,
}

impl Fixture {
    pub fn feature_path(&self, model: &str, layer: u32, utt: &str) -> PathBuf {
        self.root
            .join("features")
            .join(model)
            .join(layer.to_string())
            .join(format!("{utt}.s3mf"))
    }
}

fn centroids(seed: u64, scale: f64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, scale).unwrap();
    VOCAB
        .iter()
        .map(|_| (0..DIM).map(|_| n.sample(&mut rng)).collect())
        .collect()
}

/// Per utterance: (word index, start frame, end frame).
fn utterance_plan(rng: &mut ChaCha8Rng) -> Vec<Vec<(usize, usize, usize)>> {
    (0..N_UTTS)
        .map(|_| {
            let mut t = 0;
            (0..WORDS_PER_UTT)
                .map(|_| {
                    let w = rng.random_range(0..VOCAB.len());
                    let len = rng.random_range(25..=40);
                    let span = (w, t, t + len);
                    t += len;
                    span
                })
                .collect()
        })
        .collect()
}

fn render(
    plan: &[(usize, usize, usize)],
    centroids: &[Vec<f64>],
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<f32>> {
    let noise = Normal::new(0.0, sigma).unwrap();
    let mut frames = Vec::new();
    for &(w, a, b) in plan {
        for _ in a..b {
            frames.push(
                centroids[w]
                    .iter()
                    .map(|c| (c + noise.sample(rng)) as f32)
                    .collect(),
            );
        }
    }
    frames
}

pub fn utt_id(i: usize) -> String {
    format!("utt{i:02}")
}

/// Writes the fixture under `root` with a config running every analysis.
pub fn write_fixture(root: &Path) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let plan = utterance_plan(&mut rng);
    let shift = FrameShift::from_secs(SHIFT_S).unwrap();

    let mut records = Vec::new();
    let mut streams: Vec<(&str, u32, Vec<Vec<f64>>, f64)> = (0..LAYERS)
        .map(|l| {
            (
                MODEL,
                l,
                centroids(100 + l as u64, 1.0),
                0.5 * 3f64.powi(l as i32),
            )
        })
        .collect();
    streams.push(("fbank", 0, centroids(99, 1.0), 0.8));
    for (model, layer, cents, sigma) in &streams {
        let dir = root.join("features").join(model).join(layer.to_string());
        std::fs::create_dir_all(&dir).unwrap();
        let mut noise_rng = ChaCha8Rng::seed_from_u64(
            1000 + *layer as u64 + if *model == "fbank" { 50 } else { 0 },
        );
        for (i, p) in plan.iter().enumerate() {
            let id = utt_id(i);
            let frames = render(p, cents, *sigma, &mut noise_rng);
            let f = FeatureSequence::from_frames(id.clone(), *layer, shift, &frames).unwrap();
            write_feature_file(dir.join(format!("{id}.s3mf")), &f).unwrap();
            records.push(ManifestRecord {
                model: model.to_string(),
                utterance_id: id.clone(),
                layer: *layer,
                path: format!("features/{model}/{layer}/{id}.s3mf"),
            });
        }
    }
    let manifest = root.join("manifest.jsonl");
    write_manifest(&manifest, &records).unwrap();

    let mut spans = Vec::new();
    for (i, p) in plan.iter().enumerate() {
        for &(w, a, b) in p {
            spans.push(
                WordSpan::new(utt_id(i), VOCAB[w], a as f64 * SHIFT_S, b as f64 * SHIFT_S).unwrap(),
            );
        }
    }
    let alignments = root.join("alignments.csv");
    write_alignments(&alignments, &spans).unwrap();

    let transcript = |i: usize| {
        plan[i]
            .iter()
            .map(|(w, _, _)| VOCAB[*w])
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut pairs = Vec::new();
    for k in 0..24 {
        let a = k % N_UTTS;
        let b = (k * 5 + 3) % N_UTTS;
        let wa: std::collections::BTreeSet<usize> = plan[a].iter().map(|x| x.0).collect();
        let wb: std::collections::BTreeSet<usize> = plan[b].iter().map(|x| x.0).collect();
        let shared = wa.intersection(&wb).count() as f64;
        pairs.push(SentencePair {
            pair_id: format!("p{k:02}"),
            gold_score: 5.0 * shared / wa.union(&wb).count() as f64 + 0.01 * k as f64,
            side_a: vec![utt_id(a)],
            side_b: if k % 3 == 0 {
                vec![utt_id(b), utt_id((b + 1) % N_UTTS)]
            } else {
                vec![utt_id(b)]
            },
            text_a: Some(transcript(a)),
            text_b: Some(transcript(b)),
        });
    }
    let gold = root.join("gold.tsv");
    write_gold_sts(&gold, &pairs).unwrap();

    let config = root.join("config.json");
    let config_json = serde_json::json!({
        "schema_version": 1,
        "manifests": ["manifest.jsonl"],
        "alignments": "alignments.csv",
        "gold_sts": "gold.tsv",
        "models": [{"name": MODEL}],
        "seed": 3,
        "output_dir": "out",
        "analyses": [
            {"kind": "cca", "vocab_size": 8, "max_instances": 20, "splits": 3},
            {"kind": "awd", "min_dur": 0.5, "max_dur": 0.8},
            {"kind": "segment", "metric": "euclidean", "prominence": 1.0, "window": 3},
            {"kind": "segment_grid", "prominences": [0.25, 1.0, 4.0], "windows": [1, 3]},
            {"kind": "sts"}
        ]
    });
    std::fs::write(&config, serde_json::to_string_pretty(&config_json).unwrap()).unwrap();
    Fixture {
        root: root.to_path_buf(),
        config,
        manifest,
        alignments,
        gold,
    }
}

/// Writes a config with the given analyses next to the fixture's inputs.
pub fn write_config(fixture: &Fixture, name: &str, body: serde_json::Value) -> PathBuf {
    let path = fixture.root.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(&body).unwrap()).unwrap();
    path
}
