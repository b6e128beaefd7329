//! Acoustic word discrimination.
//!
//! Every pair of word segments gets a distance, either the cosine distance of
//! pooled vectors or a DTW distance over frames, and the ranking of same-word
//! pairs among all pairs is scored by average precision.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ProbeError, Result};
use crate::featurestore::{FeatureSequence, SegmentSample};
use crate::numeric::dot;
use crate::pooling::{frames_in_span, pool, PoolingSpec};

/// Rows per work unit in the pairwise kernels.
const BLOCK_ROWS: usize = 16;

/// `1 - <u, v> / (|u| |v|)` given squared norms, clamped to `[0, 2]`.
///
/// Written with squared norms so that `u == v` gives exactly 0.
#[inline]
fn cosine_with_sq_norms(u: &[f32], v: &[f32], u_sq: f64, v_sq: f64) -> f64 {
    (1.0 - dot(u, v) / (u_sq * v_sq).sqrt()).clamp(0.0, 2.0)
}

/// Cosine distance between two non-zero vectors of equal length.
pub fn cosine_distance(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(ProbeError::Precondition(format!(
            "vectors have lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    let (u_sq, v_sq) = (dot(u, u), dot(v, v));
    if u_sq == 0.0 || v_sq == 0.0 {
        return Err(ProbeError::Degenerate(
            "cosine distance of a zero vector".into(),
        ));
    }
    Ok(cosine_with_sq_norms(u, v, u_sq, v_sq))
}

/// A contiguous block of frames with cached squared norms.
#[derive(Debug, Clone, PartialEq)]
pub struct Frames {
    dim: usize,
    data: Vec<f32>,
    sq_norms: Vec<f64>,
}

impl Frames {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 || data.is_empty() || data.len() % dim != 0 {
            return Err(ProbeError::Precondition(format!(
                "{} values do not form frames of dimension {dim}",
                data.len()
            )));
        }
        let sq_norms: Vec<f64> = data.chunks_exact(dim).map(|f| dot(f, f)).collect();
        if sq_norms.contains(&0.0) {
            return Err(ProbeError::Degenerate(
                "segment contains an all-zero frame".into(),
            ));
        }
        Ok(Frames {
            dim,
            data,
            sq_norms,
        })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(ProbeError::Precondition(
                "frames have unequal lengths".into(),
            ));
        }
        Frames::new(dim, rows.concat())
    }

    /// Frames `range` of a feature sequence.
    pub fn slice(features: &FeatureSequence, range: std::ops::Range<usize>) -> Result<Self> {
        let d = features.dim();
        Frames::new(
            d,
            features.as_slice()[range.start * d..range.end * d].to_vec(),
        )
    }

    pub fn len(&self) -> usize {
        self.sq_norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sq_norms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    /// Cosine distance between frame `s` of `self` and frame `t` of `other`.
    #[inline]
    pub fn local_cost(&self, s: usize, other: &Frames, t: usize) -> f64 {
        cosine_with_sq_norms(
            self.frame(s),
            other.frame(t),
            self.sq_norms[s],
            other.sq_norms[t],
        )
    }
}

/// Path cost paired with path length; ordered lexicographically.
#[derive(Debug, Clone, Copy)]
struct Cell {
    cost: f64,
    len: u32,
}

impl Cell {
    fn better(self, other: Cell) -> Cell {
        if other.cost < self.cost || (other.cost == self.cost && other.len < self.len) {
            other
        } else {
            self
        }
    }
}

/// DTW distance with cosine local cost, normalized by path length.
///
/// Steps (1,0), (0,1) and (1,1) each add the local cost of the cell they enter.
/// The minimum-cost path (shortest among equal costs) is divided by the number
/// of cells it visits.
pub fn dtw_distance(a: &Frames, b: &Frames) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(ProbeError::Precondition(
            "DTW needs non-empty sequences".into(),
        ));
    }
    if a.dim() != b.dim() {
        return Err(ProbeError::Precondition(format!(
            "frame dimensions {} and {} differ",
            a.dim(),
            b.dim()
        )));
    }
    let cols = b.len();
    let mut prev: Vec<Cell> = Vec::with_capacity(cols);
    let mut cur: Vec<Cell> = Vec::with_capacity(cols);
    for s in 0..a.len() {
        cur.clear();
        for t in 0..cols {
            let best = match (s, t) {
                (0, 0) => Cell { cost: 0.0, len: 0 },
                (0, _) => cur[t - 1],
                (_, 0) => prev[0],
                _ => prev[t].better(cur[t - 1]).better(prev[t - 1]),
            };
            let c = a.local_cost(s, b, t);
            cur.push(if s == 0 && t == 0 {
                Cell { cost: c, len: 1 }
            } else {
                Cell {
                    cost: best.cost + c,
                    len: best.len + 1,
                }
            });
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let end = prev[cols - 1];
    Ok(end.cost / f64::from(end.len))
}

/// A scored segment pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredPair {
    pub i: usize,
    pub j: usize,
    pub distance: f64,
    pub same: bool,
}

/// Average precision of same-word pairs ranked by ascending distance.
///
/// At equal distance, different-word pairs rank first.
pub fn average_precision(pairs: &[ScoredPair]) -> Result<f64> {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for p in pairs {
        if !p.distance.is_finite() {
            return Err(ProbeError::Data(format!(
                "pair ({}, {}) has distance {}",
                p.i, p.j, p.distance
            )));
        }
        if p.same {
            pos.push(p.distance);
        } else {
            neg.push(p.distance);
        }
    }
    average_precision_split(pos, neg)
}

/// Average precision from the distances of positive and negative pairs.
pub fn average_precision_split(mut pos: Vec<f64>, mut neg: Vec<f64>) -> Result<f64> {
    if pos.is_empty() {
        return Err(ProbeError::UndefinedMetric("no same-word pairs".into()));
    }
    if neg.is_empty() {
        return Err(ProbeError::UndefinedMetric(
            "no different-word pairs".into(),
        ));
    }
    pos.par_sort_unstable_by(f64::total_cmp);
    neg.par_sort_unstable_by(f64::total_cmp);
    Ok(merge_sorted_runs(&pos, &neg))
}

/// Mean precision at each positive, walking both sorted lists once.
fn merge_sorted_runs(pos: &[f64], neg: &[f64]) -> f64 {
    let mut neg_le = 0usize;
    let mut sum = 0.0;
    for (k, &d) in pos.iter().enumerate() {
        while neg_le < neg.len() && neg[neg_le] <= d {
            neg_le += 1;
        }
        let hits = (k + 1) as f64;
        sum += hits / (hits + neg_le as f64);
    }
    sum / pos.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AwdMode {
    Pool,
    Dtw,
}

impl fmt::Display for AwdMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AwdMode::Pool => "pool",
            AwdMode::Dtw => "dtw",
        })
    }
}

impl FromStr for AwdMode {
    type Err = ProbeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pool" => Ok(AwdMode::Pool),
            "dtw" => Ok(AwdMode::Dtw),
            other => Err(ProbeError::Config(format!("unknown AWD mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AwdOutcome {
    pub ap: f64,
    pub n_segments: usize,
    pub n_pairs: usize,
    pub n_same: usize,
}

fn label_ids(labels: &[&str]) -> Vec<u32> {
    let mut ids: BTreeMap<&str, u32> = BTreeMap::new();
    labels
        .iter()
        .map(|l| {
            let next = ids.len() as u32;
            *ids.entry(l).or_insert(next)
        })
        .collect()
}

/// Scores all `i < j` pairs with `distance` in parallel blocks and returns the AP.
fn score_all_pairs<F>(n: usize, labels: &[&str], distance: F) -> Result<AwdOutcome>
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    if n < 2 {
        return Err(ProbeError::InsufficientData(format!(
            "{n} segments; need at least 2"
        )));
    }
    let ids = label_ids(labels);
    let blocks: Vec<(Vec<f64>, Vec<f64>)> = (0..n.div_ceil(BLOCK_ROWS))
        .into_par_iter()
        .map(|b| {
            let mut pos = Vec::new();
            let mut neg = Vec::new();
            for i in b * BLOCK_ROWS..((b + 1) * BLOCK_ROWS).min(n) {
                for j in i + 1..n {
                    let d = distance(i, j);
                    if ids[i] == ids[j] {
                        pos.push(d);
                    } else {
                        neg.push(d);
                    }
                }
            }
            (pos, neg)
        })
        .collect();
    let n_same: usize = blocks.iter().map(|(p, _)| p.len()).sum();
    let n_pairs = n * (n - 1) / 2;
    let mut pos = Vec::with_capacity(n_same);
    let mut neg = Vec::with_capacity(n_pairs - n_same);
    for (p, q) in blocks {
        pos.extend(p);
        neg.extend(q);
    }
    Ok(AwdOutcome {
        ap: average_precision_split(pos, neg)?,
        n_segments: n,
        n_pairs,
        n_same,
    })
}

/// Pool-mode AWD: cosine distances between pooled vectors.
pub fn awd_pool(vectors: &[Vec<f32>], labels: &[&str]) -> Result<AwdOutcome> {
    if vectors.len() != labels.len() {
        return Err(ProbeError::Validation(
            "one label per vector required".into(),
        ));
    }
    let dim = vectors.first().map_or(0, Vec::len);
    if vectors.iter().any(|v| v.len() != dim) {
        return Err(ProbeError::Validation(
            "pooled vectors have unequal lengths".into(),
        ));
    }
    let sq: Vec<f64> = vectors.iter().map(|v| dot(v, v)).collect();
    if sq.contains(&0.0) {
        return Err(ProbeError::Degenerate(
            "a pooled vector is all zeros".into(),
        ));
    }
    score_all_pairs(vectors.len(), labels, |i, j| {
        cosine_with_sq_norms(&vectors[i], &vectors[j], sq[i], sq[j])
    })
}

/// DTW-mode AWD over frame sequences.
pub fn awd_dtw(segments: &[Frames], labels: &[&str]) -> Result<AwdOutcome> {
    if segments.len() != labels.len() {
        return Err(ProbeError::Validation(
            "one label per segment required".into(),
        ));
    }
    let dim = segments.first().map_or(0, Frames::dim);
    if segments.iter().any(|s| s.dim() != dim) {
        return Err(ProbeError::Validation(
            "segments have unequal frame dimensions".into(),
        ));
    }
    score_all_pairs(segments.len(), labels, |i, j| {
        dtw_distance(&segments[i], &segments[j]).expect("validated segments")
    })
}

/// Keeps samples whose duration lies in the inclusive range.
pub fn filter_by_duration(
    samples: &[SegmentSample],
    range: Option<(f64, f64)>,
) -> Vec<SegmentSample> {
    samples
        .iter()
        .filter(|s| match range {
            Some((lo, hi)) => {
                let d = s.span.duration();
                d >= lo - 1e-9 && d <= hi + 1e-9
            }
            None => true,
        })
        .cloned()
        .collect()
}

/// Runs AWD on word samples of one layer.
///
/// `load` fetches an utterance's features; each is loaded once. Pool mode pools
/// with `spec`; DTW mode uses every frame of the span.
pub fn awd_run<F>(
    samples: &[SegmentSample],
    mode: AwdMode,
    spec: PoolingSpec,
    duration_range: Option<(f64, f64)>,
    load: F,
) -> Result<AwdOutcome>
where
    F: Fn(&str) -> Result<FeatureSequence> + Sync,
{
    let kept = filter_by_duration(samples, duration_range);
    if kept.len() < 2 {
        return Err(ProbeError::InsufficientData(format!(
            "{} segments after duration filtering",
            kept.len()
        )));
    }
    let mut by_utt: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in kept.iter().enumerate() {
        by_utt
            .entry(s.span.utterance_id.as_str())
            .or_default()
            .push(i);
    }
    let groups: Vec<_> = by_utt.into_iter().collect();
    let labels: Vec<&str> = kept.iter().map(|s| s.span.word.as_str()).collect();
    match mode {
        AwdMode::Pool => {
            let parts: Vec<Vec<(usize, Vec<f32>)>> = groups
                .par_iter()
                .map(|(utt, idx)| {
                    let f = load(utt)?;
                    idx.iter()
                        .map(|&i| {
                            let r = frames_in_span(
                                &kept[i].span,
                                f.frame_shift_secs(),
                                f.num_frames(),
                            )?;
                            Ok((i, pool(&f, r, spec)?))
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<_>>()?;
            let mut vectors = vec![Vec::new(); kept.len()];
            for (i, v) in parts.into_iter().flatten() {
                vectors[i] = v;
            }
            awd_pool(&vectors, &labels)
        }
        AwdMode::Dtw => {
            let parts: Vec<Vec<(usize, Frames)>> = groups
                .par_iter()
                .map(|(utt, idx)| {
                    let f = load(utt)?;
                    idx.iter()
                        .map(|&i| {
                            let r = frames_in_span(
                                &kept[i].span,
                                f.frame_shift_secs(),
                                f.num_frames(),
                            )?;
                            Ok((i, Frames::slice(&f, r)?))
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<_>>()?;
            let mut slots: Vec<Option<Frames>> = vec![None; kept.len()];
            for (i, fr) in parts.into_iter().flatten() {
                slots[i] = Some(fr);
            }
            let frames: Vec<Frames> = slots
                .into_iter()
                .map(|s| s.expect("every segment loaded"))
                .collect();
            awd_dtw(&frames, &labels)
        }
    }
}
