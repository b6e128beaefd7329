use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::alignments::WordSpan;
use crate::error::{ProbeError, Result};

/// Identifies the feature matrix a segment is drawn from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FeatureRef {
    pub utterance_id: String,
    pub layer: u32,
}

/// A sampled word instance and, once pooled, its fixed-size representation.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSample {
    pub span: WordSpan,
    pub feature: FeatureRef,
    /// Empty until filled by [`crate::pooling::pool_samples`].
    pub pooled: Vec<f32>,
}

impl SegmentSample {
    pub fn new(span: WordSpan) -> Self {
        let feature = FeatureRef {
            utterance_id: span.utterance_id.clone(),
            layer: 0,
        };
        SegmentSample {
            span,
            feature,
            pooled: Vec::new(),
        }
    }

    pub fn word(&self) -> &str {
        &self.span.word
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub vocab_size: usize,
    /// Per-word instance cap.
    pub max_instances: usize,
    /// Inclusive duration bounds in seconds, applied before vocabulary selection.
    pub duration_range: Option<(f64, f64)>,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            vocab_size: 500,
            max_instances: 20,
            duration_range: None,
            seed: 0,
        }
    }
}

const DURATION_EPS: f64 = 1e-9;

/// Draws word instances for the `vocab_size` most frequent words.
///
/// Frequency ties are broken lexicographically. At most `max_instances` per
/// word are drawn uniformly without replacement. Output is ordered by
/// utterance and start time, and depends only on the inputs and the seed.
pub fn sample_word_instances(
    spans: &[WordSpan],
    config: &SamplingConfig,
) -> Result<Vec<SegmentSample>> {
    if config.vocab_size == 0 {
        return Err(ProbeError::Config("vocab_size must be at least 1".into()));
    }
    if config.max_instances == 0 {
        return Err(ProbeError::Config(
            "max_instances must be at least 1".into(),
        ));
    }
    let keep = |s: &WordSpan| match config.duration_range {
        Some((lo, hi)) => {
            let d = s.duration();
            d >= lo - DURATION_EPS && d <= hi + DURATION_EPS
        }
        None => true,
    };

    let mut by_word: BTreeMap<&str, Vec<&WordSpan>> = BTreeMap::new();
    for s in spans.iter().filter(|s| keep(s)) {
        by_word.entry(s.word.as_str()).or_default().push(s);
    }
    if by_word.len() < config.vocab_size {
        return Err(ProbeError::Config(format!(
            "requested {} words but only {} distinct words are available",
            config.vocab_size,
            by_word.len()
        )));
    }

    let mut ranked: Vec<(&str, usize)> = by_word.iter().map(|(w, v)| (*w, v.len())).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let mut vocab: Vec<&str> = ranked[..config.vocab_size]
        .iter()
        .map(|(w, _)| *w)
        .collect();
    vocab.sort_unstable();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = Vec::new();
    for word in vocab {
        let instances = &by_word[word];
        let take = instances.len().min(config.max_instances);
        let mut picked = rand::seq::index::sample(&mut rng, instances.len(), take).into_vec();
        picked.sort_unstable();
        out.extend(
            picked
                .into_iter()
                .map(|i| SegmentSample::new(instances[i].clone())),
        );
    }
    out.sort_by(|a, b| {
        a.span
            .utterance_id
            .cmp(&b.span.utterance_id)
            .then(a.span.start_s.total_cmp(&b.span.start_s))
    });
    Ok(out)
}
