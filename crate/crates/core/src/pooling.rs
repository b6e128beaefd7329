//! Fixed-size representations of word spans and whole utterances.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ProbeError, Result};
use crate::featurestore::{FeatureSequence, SegmentSample, WordSpan};
use crate::numeric::{round_half_even, snap};

/// How the frames of a span are reduced to one vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PoolingSpec {
    /// Mean over all frames of the span.
    MeanFull,
    /// Mean over the `q`-th quarter (1..=4) of the span.
    Quarter(u8),
    /// A single frame at location `loc` (0..=4) of five equidistant
    /// locations, the first and last frames included.
    SingleFrame(u8),
}

impl PoolingSpec {
    pub fn quarter(q: u8) -> Result<Self> {
        if (1..=4).contains(&q) {
            Ok(PoolingSpec::Quarter(q))
        } else {
            Err(ProbeError::Config(format!("quarter {q} outside 1..=4")))
        }
    }

    pub fn single_frame(loc: u8) -> Result<Self> {
        if loc <= 4 {
            Ok(PoolingSpec::SingleFrame(loc))
        } else {
            Err(ProbeError::Config(format!(
                "frame location {loc} outside 0..=4"
            )))
        }
    }

    /// All ten strategies, in CLI order.
    pub fn all() -> Vec<PoolingSpec> {
        let mut v = vec![PoolingSpec::MeanFull];
        v.extend((1..=4).map(PoolingSpec::Quarter));
        v.extend((0..=4).map(PoolingSpec::SingleFrame));
        v
    }
}

impl fmt::Display for PoolingSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PoolingSpec::MeanFull => f.write_str("mean"),
            PoolingSpec::Quarter(q) => write!(f, "q{q}"),
            PoolingSpec::SingleFrame(l) => write!(f, "f{l}"),
        }
    }
}

impl FromStr for PoolingSpec {
    type Err = ProbeError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            ProbeError::Config(format!(
                "unknown pooling '{s}', expected mean|q1..q4|f0..f4"
            ))
        };
        if s == "mean" {
            return Ok(PoolingSpec::MeanFull);
        }
        let (head, tail) = s.split_at_checked(1).ok_or_else(bad)?;
        let n: u8 = tail.parse().map_err(|_| bad())?;
        match head {
            "q" => PoolingSpec::quarter(n),
            "f" => PoolingSpec::single_frame(n),
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for PoolingSpec {
    type Error = ProbeError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<PoolingSpec> for String {
    fn from(p: PoolingSpec) -> String {
        p.to_string()
    }
}

/// Maps a time span to the frame range `[a, b)` it covers.
///
/// Frame `i` covers `[i * shift, (i + 1) * shift)`. The range always holds at
/// least one frame and is clipped to `num_frames`.
pub fn frames_in_span(
    span: &WordSpan,
    frame_shift_s: f64,
    num_frames: usize,
) -> Result<Range<usize>> {
    if !(frame_shift_s > 0.0) {
        return Err(ProbeError::Precondition(format!(
            "frame shift {frame_shift_s} must be positive"
        )));
    }
    let start = snap(span.start_s / frame_shift_s).floor();
    let end = snap(span.end_s / frame_shift_s).ceil();
    if start < 0.0 || start >= num_frames as f64 {
        return Err(ProbeError::OutOfRange(format!(
            "span '{}' [{}, {}] in {} starts beyond {num_frames} frames",
            span.word, span.start_s, span.end_s, span.utterance_id
        )));
    }
    let a = start as usize;
    let b = (end.max(0.0) as usize).min(num_frames);
    Ok(a..b.max(a + 1))
}

fn mean_rows(features: &FeatureSequence, range: Range<usize>) -> Vec<f32> {
    let mut acc = vec![0.0f64; features.dim()];
    let n = range.len() as f64;
    for t in range {
        for (a, &x) in acc.iter_mut().zip(features.row(t)) {
            *a += f64::from(x);
        }
    }
    acc.into_iter().map(|a| (a / n) as f32).collect()
}

/// Frame range of quarter `q` (1-based) of `range`.
pub fn quarter_range(range: &Range<usize>, q: u8) -> Range<usize> {
    let n = range.len() as f64;
    let edge = |k: u8| range.start + round_half_even(f64::from(k) * n / 4.0) as usize;
    let mut lo = edge(q - 1);
    let mut hi = edge(q);
    if hi <= lo {
        hi = lo + 1;
    }
    if hi > range.end {
        hi = range.end;
        lo = range.end - 1;
    }
    lo..hi
}

/// Frame index of single-frame location `loc` in `range`.
pub fn single_frame_index(range: &Range<usize>, loc: u8) -> usize {
    let last = (range.len() - 1) as f64;
    range.start + round_half_even(f64::from(loc) * last / 4.0) as usize
}

/// Pools the frames `range` of `features` according to `spec`.
pub fn pool(
    features: &FeatureSequence,
    range: Range<usize>,
    spec: PoolingSpec,
) -> Result<Vec<f32>> {
    if range.start >= range.end || range.end > features.num_frames() {
        return Err(ProbeError::Precondition(format!(
            "frame range {range:?} invalid for {} frames",
            features.num_frames()
        )));
    }
    Ok(match spec {
        PoolingSpec::MeanFull => mean_rows(features, range),
        PoolingSpec::Quarter(q) => {
            if !(1..=4).contains(&q) {
                return Err(ProbeError::Config(format!("quarter {q} outside 1..=4")));
            }
            mean_rows(features, quarter_range(&range, q))
        }
        PoolingSpec::SingleFrame(loc) => {
            if loc > 4 {
                return Err(ProbeError::Config(format!(
                    "frame location {loc} outside 0..=4"
                )));
            }
            features.row(single_frame_index(&range, loc)).to_vec()
        }
    })
}

/// Pools a word span of an utterance.
pub fn pool_span(
    features: &FeatureSequence,
    span: &WordSpan,
    spec: PoolingSpec,
) -> Result<Vec<f32>> {
    let range = frames_in_span(span, features.frame_shift_secs(), features.num_frames())?;
    pool(features, range, spec)
}

/// Mean over every frame of an utterance.
pub fn pool_utterance(features: &FeatureSequence) -> Vec<f32> {
    mean_rows(features, 0..features.num_frames())
}

/// Fills `pooled` for every sample from the given layer.
///
/// `load` fetches one utterance's features; each utterance is loaded once.
pub fn pool_samples<F>(
    samples: &[SegmentSample],
    layer: u32,
    spec: PoolingSpec,
    load: F,
) -> Result<Vec<SegmentSample>>
where
    F: Fn(&str) -> Result<FeatureSequence> + Sync,
{
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        groups
            .entry(s.span.utterance_id.as_str())
            .or_default()
            .push(i);
    }
    let groups: Vec<_> = groups.into_iter().collect();
    let pooled: Vec<Vec<(usize, Vec<f32>)>> = groups
        .par_iter()
        .map(|(utt, idx)| {
            let features = load(utt)?;
            idx.iter()
                .map(|&i| Ok((i, pool_span(&features, &samples[i].span, spec)?)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut out = samples.to_vec();
    for (i, v) in pooled.into_iter().flatten() {
        out[i].pooled = v;
        out[i].feature.layer = layer;
    }
    Ok(out)
}
