//! Spoken sentence similarity.
//!
//! Each rendition of a sentence is reduced to one vector (mean over frames, or
//! a 1-frame summary token stream). A pair's predicted similarity is the mean
//! cosine similarity over all rendition combinations, and predictions are
//! scored against gold judgments with Spearman's rank correlation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{ProbeError, Result};
use crate::featurestore::normalize_word;
pub use crate::featurestore::SentencePair;
use crate::numeric::dot;

/// Cosine similarity of two non-zero vectors.
pub fn cosine_similarity(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(ProbeError::Precondition(format!(
            "vectors have lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    let denom = (dot(u, u) * dot(v, v)).sqrt();
    if denom == 0.0 {
        return Err(ProbeError::Degenerate(
            "cosine similarity of a zero vector".into(),
        ));
    }
    Ok((dot(u, v) / denom).clamp(-1.0, 1.0))
}

/// Mean cosine similarity over all `|A| x |B|` rendition combinations.
///
/// `vector` returns the utterance vector of a rendition, or `None` if it has
/// no features; a missing rendition is an error naming it.
pub fn pair_similarity<'a, F>(pair: &SentencePair, vector: F) -> Result<f64>
where
    F: Fn(&str) -> Option<&'a [f32]>,
{
    let fetch = |id: &str| {
        vector(id).ok_or_else(|| {
            ProbeError::Config(format!(
                "pair {}: no features for rendition {id}",
                pair.pair_id
            ))
        })
    };
    let a: Vec<&[f32]> = pair
        .side_a
        .iter()
        .map(|id| fetch(id))
        .collect::<Result<_>>()?;
    let b: Vec<&[f32]> = pair
        .side_b
        .iter()
        .map(|id| fetch(id))
        .collect::<Result<_>>()?;
    if a.is_empty() || b.is_empty() {
        return Err(ProbeError::Validation(format!(
            "pair {} has an empty side",
            pair.pair_id
        )));
    }
    let mut sum = 0.0;
    for u in &a {
        for v in &b {
            sum += cosine_similarity(u, v)?;
        }
    }
    Ok(sum / (a.len() * b.len()) as f64)
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && x[order[end + 1]] == x[order[start]] {
            end += 1;
        }
        let r = (start + end) as f64 / 2.0 + 1.0;
        for &i in &order[start..=end] {
            ranks[i] = r;
        }
        start = end + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(ProbeError::UndefinedMetric(
            "a ranking has zero variance".into(),
        ));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rank correlation: Pearson correlation of average ranks.
pub fn spearman(predicted: &[f64], gold: &[f64]) -> Result<f64> {
    if predicted.len() != gold.len() {
        return Err(ProbeError::Precondition(format!(
            "{} predictions for {} gold scores",
            predicted.len(),
            gold.len()
        )));
    }
    if predicted.len() < 3 {
        return Err(ProbeError::Precondition(
            "Spearman needs at least 3 pairs".into(),
        ));
    }
    if predicted.iter().chain(gold).any(|v| !v.is_finite()) {
        return Err(ProbeError::Data("non-finite score".into()));
    }
    pearson(&average_ranks(predicted), &average_ranks(gold))
}

fn word_types(text: &str) -> BTreeSet<String> {
    text.split_whitespace()
        .map(normalize_word)
        .filter(|w| !w.is_empty())
        .collect()
}

/// Dice overlap `2|A ∩ B| / (|A| + |B|)` of the case-folded word types of the
/// two transcripts.
pub fn text_overlap(pair: &SentencePair) -> Result<f64> {
    let (Some(a), Some(b)) = (&pair.text_a, &pair.text_b) else {
        return Err(ProbeError::Precondition(format!(
            "pair {} has no transcripts",
            pair.pair_id
        )));
    };
    let (a, b) = (word_types(a), word_types(b));
    if a.is_empty() || b.is_empty() {
        log::warn!("pair {}: empty transcript, overlap set to 0", pair.pair_id);
        return Ok(0.0);
    }
    let shared = a.intersection(&b).count();
    Ok(2.0 * shared as f64 / (a.len() + b.len()) as f64)
}

/// Spearman correlation of one stream of predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StsOutcome {
    pub rho: f64,
    pub n_scored: usize,
    /// Pairs skipped for missing renditions.
    pub skipped: Vec<String>,
}

fn correlate(pairs: &[SentencePair], predicted: Vec<Option<f64>>) -> Result<StsOutcome> {
    let mut pred = Vec::new();
    let mut gold = Vec::new();
    let mut skipped = Vec::new();
    for (p, s) in pairs.iter().zip(predicted) {
        match s {
            Some(s) => {
                pred.push(s);
                gold.push(p.gold_score);
            }
            None => skipped.push(p.pair_id.clone()),
        }
    }
    if pred.len() < 3 {
        return Err(ProbeError::InsufficientData(format!(
            "{} scored pairs; need at least 3",
            pred.len()
        )));
    }
    Ok(StsOutcome {
        rho: spearman(&pred, &gold)?,
        n_scored: pred.len(),
        skipped,
    })
}

/// Scores every pair with utterance vectors from `vectors`, skipping pairs
/// with missing renditions.
pub fn score_stream(
    pairs: &[SentencePair],
    vectors: &BTreeMap<String, Vec<f32>>,
) -> Result<StsOutcome> {
    let predicted = pairs
        .iter()
        .map(
            |p| match pair_similarity(p, |id| vectors.get(id).map(Vec::as_slice)) {
                Ok(s) => Ok(Some(s)),
                Err(ProbeError::Config(msg)) => {
                    log::warn!("{msg}; pair skipped");
                    Ok(None)
                }
                Err(e) => Err(e),
            },
        )
        .collect::<Result<Vec<_>>>()?;
    correlate(pairs, predicted)
}

/// The transcript word-overlap baseline.
pub fn text_baseline(pairs: &[SentencePair]) -> Result<StsOutcome> {
    let predicted = pairs
        .iter()
        .map(|p| text_overlap(p).map(Some))
        .collect::<Result<Vec<_>>>()?;
    correlate(pairs, predicted)
}

/// All utterance ids referenced by the pairs.
pub fn referenced_utterances(pairs: &[SentencePair]) -> BTreeSet<&str> {
    pairs
        .iter()
        .flat_map(|p| p.side_a.iter().chain(&p.side_b))
        .map(String::as_str)
        .collect()
}
