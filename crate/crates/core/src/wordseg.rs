//! Training-free word segmentation.
//!
//! Per utterance: standardize each channel, measure the dissimilarity of every
//! pair of adjacent frames, smooth with a centered moving average, and place a
//! word boundary at each peak whose prominence exceeds a threshold. Boundaries
//! are scored against reference word boundaries with a tolerance window.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ProbeError, Result};
use crate::featurestore::{FeatureSequence, WordSpan};
use crate::numeric::round_half_even;

/// Default boundary tolerance in seconds.
pub const DEFAULT_TOLERANCE_S: f64 = 0.02;

/// Slack for comparing times that went through decimal arithmetic.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMetric {
    Euclidean,
    Cosine,
}

impl fmt::Display for DistanceMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistanceMetric::Euclidean => "euclidean",
            DistanceMetric::Cosine => "cosine",
        })
    }
}

impl FromStr for DistanceMetric {
    type Err = ProbeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" | "euclid" => Ok(DistanceMetric::Euclidean),
            "cosine" | "cos" => Ok(DistanceMetric::Cosine),
            other => Err(ProbeError::Config(format!(
                "unknown distance metric '{other}'"
            ))),
        }
    }
}

/// Standardizes every channel to zero mean and unit (population) variance.
///
/// Constant channels become all zeros.
pub fn normalize_utterance(features: &FeatureSequence) -> Result<FeatureSequence> {
    let (t, d) = (features.num_frames(), features.dim());
    if t < 2 {
        return Err(ProbeError::TooShort(format!(
            "utterance {} has {t} frame(s); normalization needs 2",
            features.utterance_id
        )));
    }
    let x = features.as_slice();
    let mut out = vec![0.0f32; t * d];
    for c in 0..d {
        let col = || (0..t).map(|i| f64::from(x[i * d + c]));
        let (lo, hi) = col().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
        if lo == hi {
            continue;
        }
        let mean = col().sum::<f64>() / t as f64;
        let var = col().map(|v| (v - mean) * (v - mean)).sum::<f64>() / t as f64;
        let std = var.max(1e-8).sqrt();
        for (i, v) in col().enumerate() {
            out[i * d + c] = ((v - mean) / std) as f32;
        }
    }
    FeatureSequence::new(
        features.utterance_id.clone(),
        features.layer,
        features.frame_shift(),
        t,
        d,
        out,
    )
}

/// Smoothed dissimilarity between adjacent frames; entry `t` compares frames
/// `t` and `t + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DissimilarityCurve {
    pub values: Vec<f64>,
    pub metric: DistanceMetric,
    pub window: usize,
    pub frame_shift_s: f64,
}

fn frame_distance(a: &[f32], b: &[f32], metric: DistanceMetric) -> f64 {
    match metric {
        DistanceMetric::Euclidean => a
            .iter()
            .zip(b)
            .map(|(&x, &y)| {
                let d = f64::from(x) - f64::from(y);
                d * d
            })
            .sum::<f64>()
            .sqrt(),
        DistanceMetric::Cosine => {
            let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
            for (&x, &y) in a.iter().zip(b) {
                let (x, y) = (f64::from(x), f64::from(y));
                ab += x * y;
                aa += x * x;
                bb += y * y;
            }
            match (aa == 0.0, bb == 0.0) {
                (true, true) => 0.0,
                (true, false) | (false, true) => 1.0,
                _ => (1.0 - ab / (aa * bb).sqrt()).clamp(0.0, 2.0),
            }
        }
    }
}

/// Centered moving average; the window shrinks symmetrically at the edges.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    let n = values.len();
    (0..n)
        .map(|t| {
            let h = half.min(t).min(n - 1 - t);
            let s = &values[t - h..=t + h];
            s.iter().sum::<f64>() / s.len() as f64
        })
        .collect()
}

/// Adjacent-frame dissimilarity of (already normalized) features, smoothed
/// with an odd moving-average `window`.
pub fn dissimilarity_curve(
    normalized: &FeatureSequence,
    metric: DistanceMetric,
    window: usize,
) -> Result<DissimilarityCurve> {
    if window == 0 || window % 2 == 0 {
        return Err(ProbeError::Config(format!(
            "smoothing window {window} must be odd"
        )));
    }
    if normalized.num_frames() < 2 {
        return Err(ProbeError::TooShort(format!(
            "utterance {} has fewer than 2 frames",
            normalized.utterance_id
        )));
    }
    let raw: Vec<f64> = (0..normalized.num_frames() - 1)
        .map(|t| frame_distance(normalized.row(t + 1), normalized.row(t), metric))
        .collect();
    Ok(DissimilarityCurve {
        values: moving_average(&raw, window),
        metric,
        window,
        frame_shift_s: normalized.frame_shift_secs(),
    })
}

/// Indices of local maxima. A flat peak reports its middle index (ties to
/// even); the first and last samples are never peaks.
pub fn find_peaks(x: &[f64]) -> Vec<usize> {
    let mut peaks = Vec::new();
    if x.len() < 3 {
        return peaks;
    }
    let last = x.len() - 1;
    let mut i = 1;
    while i < last {
        if x[i - 1] < x[i] {
            let mut ahead = i + 1;
            while ahead < last && x[ahead] == x[i] {
                ahead += 1;
            }
            if x[ahead] < x[i] {
                let mid = round_half_even((i + ahead - 1) as f64 / 2.0) as usize;
                peaks.push(mid);
                i = ahead;
                continue;
            }
        }
        i += 1;
    }
    peaks
}

/// Nearest index on each side holding a strictly larger value.
fn nearest_higher(x: &[f64]) -> (Vec<Option<usize>>, Vec<Option<usize>>) {
    let n = x.len();
    let mut left = vec![None; n];
    let mut right = vec![None; n];
    let mut stack: Vec<usize> = Vec::new();
    for i in 0..n {
        while stack.last().is_some_and(|&j| x[j] <= x[i]) {
            stack.pop();
        }
        left[i] = stack.last().copied();
        stack.push(i);
    }
    stack.clear();
    for i in (0..n).rev() {
        while stack.last().is_some_and(|&j| x[j] <= x[i]) {
            stack.pop();
        }
        right[i] = stack.last().copied();
        stack.push(i);
    }
    (left, right)
}

/// Sparse table for O(1) range minima.
struct RangeMin {
    levels: Vec<Vec<f64>>,
}

impl RangeMin {
    fn new(x: &[f64]) -> Self {
        let mut levels = vec![x.to_vec()];
        let mut w = 1;
        while 2 * w <= x.len() {
            let prev = levels.last().expect("non-empty");
            let next = (0..=x.len() - 2 * w)
                .map(|i| prev[i].min(prev[i + w]))
                .collect();
            levels.push(next);
            w *= 2;
        }
        RangeMin { levels }
    }

    /// Minimum over `lo..=hi`.
    fn min(&self, lo: usize, hi: usize) -> f64 {
        let k = (usize::BITS - 1 - (hi - lo + 1).leading_zeros()) as usize;
        self.levels[k][lo].min(self.levels[k][hi + 1 - (1 << k)])
    }
}

/// Topographic prominence of each peak: its height above the higher of the
/// two bases, each base being the minimum between the peak and the nearest
/// strictly higher sample on that side (or the signal edge).
pub fn prominences(x: &[f64], peaks: &[usize]) -> Vec<f64> {
    if peaks.is_empty() {
        return Vec::new();
    }
    let (left, right) = nearest_higher(x);
    let rmq = RangeMin::new(x);
    peaks
        .iter()
        .map(|&p| {
            let lo = left[p].map_or(0, |j| j + 1);
            let hi = right[p].map_or(x.len() - 1, |j| j - 1);
            x[p] - rmq.min(lo, p).max(rmq.min(p, hi))
        })
        .collect()
}

/// Hypothesized word boundaries of one utterance, in seconds.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SegHypothesis {
    pub boundaries: Vec<f64>,
}

/// Peaks of the curve with prominence above `threshold`, as boundary times.
///
/// Curve entry `t` sits between frames `t` and `t + 1`, so its boundary is at
/// `(t + 1) * shift`.
pub fn detect_peaks(curve: &DissimilarityCurve, threshold: f64) -> Result<SegHypothesis> {
    if !(threshold > 0.0) {
        return Err(ProbeError::Config(format!(
            "prominence threshold {threshold} must be > 0"
        )));
    }
    let peaks = find_peaks(&curve.values);
    let prom = prominences(&curve.values, &peaks);
    Ok(SegHypothesis {
        boundaries: peaks
            .iter()
            .zip(&prom)
            .filter(|(_, &p)| p > threshold)
            .map(|(&t, _)| (t + 1) as f64 * curve.frame_shift_s)
            .collect(),
    })
}

/// Match counts; additive over utterances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BoundaryCounts {
    pub matches: usize,
    pub hypothesized: usize,
    pub reference: usize,
}

impl std::ops::Add for BoundaryCounts {
    type Output = BoundaryCounts;

    fn add(self, o: BoundaryCounts) -> BoundaryCounts {
        BoundaryCounts {
            matches: self.matches + o.matches,
            hypothesized: self.hypothesized + o.hypothesized,
            reference: self.reference + o.reference,
        }
    }
}

impl std::iter::Sum for BoundaryCounts {
    fn sum<I: Iterator<Item = BoundaryCounts>>(iter: I) -> Self {
        iter.fold(BoundaryCounts::default(), |a, b| a + b)
    }
}

impl BoundaryCounts {
    pub fn score(&self) -> SegScore {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        SegScore::from_precision_recall(
            100.0 * ratio(self.matches, self.hypothesized),
            100.0 * ratio(self.matches, self.reference),
        )
    }
}

/// Boundary detection quality, in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub r_value: f64,
}

impl SegScore {
    /// Derives F1 and R-value from precision and recall given in percent.
    pub fn from_precision_recall(precision: f64, recall: f64) -> SegScore {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        SegScore {
            precision,
            recall,
            f1,
            r_value: r_value(precision, recall),
        }
    }
}

/// R-value in percent from precision and recall in percent, clipped to `[0, 100]`.
///
/// With over-segmentation `OS = R/P - 1`:
/// `r1 = sqrt((1 - R)^2 + OS^2)`, `r2 = (-OS + R - 1) / sqrt(2)`,
/// `R-value = 1 - (|r1| + |r2|) / 2`.
pub fn r_value(precision: f64, recall: f64) -> f64 {
    if precision <= 0.0 {
        return 0.0;
    }
    let (p, r) = (precision / 100.0, recall / 100.0);
    let os = r / p - 1.0;
    let r1 = ((1.0 - r).powi(2) + os * os).sqrt();
    let r2 = (-os + r - 1.0) / std::f64::consts::SQRT_2;
    (100.0 * (1.0 - (r1.abs() + r2.abs()) / 2.0)).clamp(0.0, 100.0)
}

/// One-to-one greedy matching, closest pairs first. Returns the number of
/// matched boundaries.
pub fn match_boundaries(hyp: &[f64], reference: &[f64], tolerance_s: f64) -> usize {
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (i, h) in hyp.iter().enumerate() {
        for (j, r) in reference.iter().enumerate() {
            let gap = (h - r).abs();
            if gap <= tolerance_s + TIME_EPS {
                candidates.push((gap, i, j));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_h = vec![false; hyp.len()];
    let mut used_r = vec![false; reference.len()];
    let mut matches = 0;
    for (_, i, j) in candidates {
        if !used_h[i] && !used_r[j] {
            used_h[i] = true;
            used_r[j] = true;
            matches += 1;
        }
    }
    matches
}

/// Drops boundaries within the tolerance of the utterance edges.
fn interior(boundaries: &[f64], duration_s: f64, tolerance_s: f64) -> Vec<f64> {
    boundaries
        .iter()
        .copied()
        .filter(|&b| b > tolerance_s + TIME_EPS && b < duration_s - tolerance_s - TIME_EPS)
        .collect()
}

/// Counts matches between hypothesized and reference boundaries of one
/// utterance. Boundaries at the utterance edges are excluded from both sets.
pub fn count_boundaries(
    hyp: &SegHypothesis,
    reference: &[f64],
    duration_s: f64,
    tolerance_s: f64,
) -> BoundaryCounts {
    let h = interior(&hyp.boundaries, duration_s, tolerance_s);
    let r = interior(reference, duration_s, tolerance_s);
    BoundaryCounts {
        matches: match_boundaries(&h, &r, tolerance_s),
        hypothesized: h.len(),
        reference: r.len(),
    }
}

/// Scores a single utterance's hypothesis.
pub fn evaluate_boundaries(
    hyp: &SegHypothesis,
    reference: &[f64],
    duration_s: f64,
    tolerance_s: f64,
) -> SegScore {
    count_boundaries(hyp, reference, duration_s, tolerance_s).score()
}

/// Word onsets and offsets of an utterance's spans, de-duplicated and sorted.
pub fn reference_boundaries<'a>(spans: impl IntoIterator<Item = &'a WordSpan>) -> Vec<f64> {
    let mut b: Vec<f64> = spans
        .into_iter()
        .flat_map(|s| [s.start_s, s.end_s])
        .collect();
    b.sort_by(f64::total_cmp);
    b.dedup_by(|a, b| (*a - *b).abs() < TIME_EPS);
    b
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegConfig {
    pub metric: DistanceMetric,
    pub prominence: f64,
    pub window: usize,
}

/// Runs the full pipeline on one utterance.
pub fn segment_utterance(features: &FeatureSequence, config: &SegConfig) -> Result<SegHypothesis> {
    let normalized = normalize_utterance(features)?;
    let curve = dissimilarity_curve(&normalized, config.metric, config.window)?;
    detect_peaks(&curve, config.prominence)
}

/// An utterance with its reference boundaries.
#[derive(Debug, Clone)]
pub struct SegUtterance {
    pub features: FeatureSequence,
    pub reference: Vec<f64>,
}

/// Segments and scores a set of utterances with one configuration.
pub fn evaluate_corpus(
    utterances: &[SegUtterance],
    config: &SegConfig,
    tolerance_s: f64,
) -> Result<SegScore> {
    let counts = utterances
        .par_iter()
        .map(|u| {
            let hyp = segment_utterance(&u.features, config)?;
            Ok(count_boundaries(
                &hyp,
                &u.reference,
                u.features.duration_secs(),
                tolerance_s,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(counts.into_iter().sum::<BoundaryCounts>().score())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegGrid {
    pub metrics: Vec<DistanceMetric>,
    pub prominences: Vec<f64>,
    pub windows: Vec<usize>,
}

impl Default for SegGrid {
    /// Both metrics, 16 log-spaced thresholds in `[0.05, 4.0]`, windows 1..=9 (odd).
    fn default() -> Self {
        let (lo, hi) = (0.05f64, 4.0f64);
        let prominences = (0..16)
            .map(|i| lo * (hi / lo).powf(i as f64 / 15.0))
            .collect();
        SegGrid {
            metrics: vec![DistanceMetric::Euclidean, DistanceMetric::Cosine],
            prominences,
            windows: vec![1, 3, 5, 7, 9],
        }
    }
}

impl SegGrid {
    pub fn single(config: SegConfig) -> Self {
        SegGrid {
            metrics: vec![config.metric],
            prominences: vec![config.prominence],
            windows: vec![config.window],
        }
    }

    pub fn len(&self) -> usize {
        self.metrics.len() * self.prominences.len() * self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub config: SegConfig,
    pub counts: BoundaryCounts,
    pub score: SegScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    /// Every cell, ordered by window, prominence, then metric.
    pub cells: Vec<GridCell>,
    pub best: GridCell,
}

/// Exhaustive search for the configuration with the highest corpus F1.
///
/// Ties go to the smaller window, then the smaller threshold, then euclidean.
pub fn grid_search(dev: &[SegUtterance], grid: &SegGrid, tolerance_s: f64) -> Result<GridResult> {
    if dev.is_empty() {
        return Err(ProbeError::InsufficientData("empty development set".into()));
    }
    if grid.is_empty() {
        return Err(ProbeError::Config("empty segmentation grid".into()));
    }
    if let Some(p) = grid.prominences.iter().find(|p| !(**p > 0.0)) {
        return Err(ProbeError::Config(format!(
            "prominence threshold {p} must be > 0"
        )));
    }
    let mut windows = grid.windows.clone();
    windows.sort_unstable();
    windows.dedup();
    let mut thresholds = grid.prominences.clone();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let mut metrics = grid.metrics.clone();
    metrics.sort();
    metrics.dedup();

    // Peaks and prominences depend only on (metric, window); thresholds filter them.
    let per_utt: Vec<BTreeMap<(usize, DistanceMetric, usize), BoundaryCounts>> = dev
        .par_iter()
        .map(|u| {
            let normalized = normalize_utterance(&u.features)?;
            let duration = u.features.duration_secs();
            let mut out = BTreeMap::new();
            for &w in &windows {
                for &m in &metrics {
                    let curve = dissimilarity_curve(&normalized, m, w)?;
                    let peaks = find_peaks(&curve.values);
                    let prom = prominences(&curve.values, &peaks);
                    for (ti, &th) in thresholds.iter().enumerate() {
                        let hyp = SegHypothesis {
                            boundaries: peaks
                                .iter()
                                .zip(&prom)
                                .filter(|(_, &p)| p > th)
                                .map(|(&t, _)| (t + 1) as f64 * curve.frame_shift_s)
                                .collect(),
                        };
                        out.insert(
                            (w, m, ti),
                            count_boundaries(&hyp, &u.reference, duration, tolerance_s),
                        );
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut cells = Vec::with_capacity(grid.len());
    for &w in &windows {
        for (ti, &th) in thresholds.iter().enumerate() {
            for &m in &metrics {
                let counts: BoundaryCounts = per_utt.iter().map(|u| u[&(w, m, ti)]).sum();
                cells.push(GridCell {
                    config: SegConfig {
                        metric: m,
                        prominence: th,
                        window: w,
                    },
                    counts,
                    score: counts.score(),
                });
            }
        }
    }
    let mut best = &cells[0];
    for c in &cells[1..] {
        if c.score.f1 > best.score.f1 {
            best = c;
        }
    }
    let best = best.clone();
    Ok(GridResult { cells, best })
}
