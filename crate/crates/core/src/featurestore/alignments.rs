use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::text::normalize_word;
use crate::error::{ProbeError, Result};

const COLUMNS: [&str; 4] = ["utterance_id", "word", "start_s", "end_s"];

/// A word occurrence inside an utterance, in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordSpan {
    pub utterance_id: String,
    pub word: String,
    pub start_s: f64,
    pub end_s: f64,
}

impl WordSpan {
    /// Builds a span with a normalized word, rejecting empty words and
    /// non-positive durations.
    pub fn new(
        utterance_id: impl Into<String>,
        word: &str,
        start_s: f64,
        end_s: f64,
    ) -> Result<Self> {
        let utterance_id = utterance_id.into();
        let word = normalize_word(word);
        if word.is_empty() {
            return Err(ProbeError::Validation(format!(
                "empty word in utterance {utterance_id} at {start_s}"
            )));
        }
        if !(start_s.is_finite() && end_s.is_finite()) || start_s < 0.0 || end_s <= start_s {
            return Err(ProbeError::Validation(format!(
                "span '{word}' in {utterance_id} has start {start_s} and end {end_s}"
            )));
        }
        Ok(WordSpan {
            utterance_id,
            word,
            start_s,
            end_s,
        })
    }

    pub fn duration(&self) -> f64 {
        self.end_s - self.start_s
    }
}

/// Loads word alignments from CSV with header `utterance_id,word,start_s,end_s`.
///
/// Spans come back sorted by utterance and start time. Overlapping spans within
/// one utterance are rejected.
pub fn load_alignments(path: impl AsRef<Path>) -> Result<Vec<WordSpan>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| ProbeError::io(path, e))?;
    parse_alignments(file)
}

pub(crate) fn parse_alignments(reader: impl std::io::Read) -> Result<Vec<WordSpan>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| ProbeError::Format(format!("alignment header: {e}")))?
        .clone();
    let mut index = [usize::MAX; 4];
    for (i, h) in headers.iter().enumerate() {
        match COLUMNS.iter().position(|c| *c == h) {
            Some(k) => index[k] = i,
            None => {
                return Err(ProbeError::Format(format!(
                    "unknown alignment column '{h}'"
                )))
            }
        }
    }
    if let Some(k) = index.iter().position(|&i| i == usize::MAX) {
        return Err(ProbeError::Format(format!(
            "missing alignment column '{}'",
            COLUMNS[k]
        )));
    }

    let mut spans = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| ProbeError::Format(format!("alignment row: {e}")))?;
        let field = |k: usize| record.get(index[k]).unwrap_or("");
        let time = |k: usize| -> Result<f64> {
            field(k).parse::<f64>().map_err(|_| {
                ProbeError::Format(format!(
                    "row {}: {} '{}' is not a number",
                    line + 2,
                    COLUMNS[k],
                    field(k)
                ))
            })
        };
        spans.push(WordSpan::new(field(0), field(1), time(2)?, time(3)?)?);
    }
    sort_and_check(&mut spans)?;
    Ok(spans)
}

fn sort_and_check(spans: &mut [WordSpan]) -> Result<()> {
    spans.sort_by(|a, b| {
        a.utterance_id
            .cmp(&b.utterance_id)
            .then(a.start_s.total_cmp(&b.start_s))
            .then(a.end_s.total_cmp(&b.end_s))
    });
    for pair in spans.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if a.utterance_id == b.utterance_id && b.start_s < a.end_s - 1e-9 {
            return Err(ProbeError::Validation(format!(
                "overlapping spans in {}: '{}' [{}, {}] and '{}' [{}, {}]",
                a.utterance_id, a.word, a.start_s, a.end_s, b.word, b.start_s, b.end_s
            )));
        }
    }
    Ok(())
}

pub fn write_alignments(path: impl AsRef<Path>, spans: &[WordSpan]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| ProbeError::Format(format!("{}: {e}", path.display())))?;
    for s in spans {
        w.serialize(s)
            .map_err(|e| ProbeError::Format(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| ProbeError::io(path, e))
}

/// Groups spans by utterance id, keeping time order.
pub fn spans_by_utterance(spans: &[WordSpan]) -> BTreeMap<&str, Vec<&WordSpan>> {
    let mut out: BTreeMap<&str, Vec<&WordSpan>> = BTreeMap::new();
    for s in spans {
        out.entry(s.utterance_id.as_str()).or_default().push(s);
    }
    for v in out.values_mut() {
        v.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    }
    out
}
