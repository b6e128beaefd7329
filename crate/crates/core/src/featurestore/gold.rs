//! Gold sentence-similarity file.
//!
//! Tab-separated with a header line:
//!
//! ```text
//! pair_id  gold_score  side_a        side_b        [text_a  text_b]
//! p001     3.8         a_s1,a_s2     b_s1,b_s2      ...     ...
//! ```
//!
//! `side_a`/`side_b` list the utterance ids of each speaker rendition,
//! comma-separated. The optional transcript columns feed the text baseline.

use std::io::Write;
use std::path::Path;

use crate::error::{ProbeError, Result};

/// A sentence pair with its human similarity judgment.
#[derive(Debug, Clone, PartialEq)]
pub struct SentencePair {
    pub pair_id: String,
    pub gold_score: f64,
    pub side_a: Vec<String>,
    pub side_b: Vec<String>,
    pub text_a: Option<String>,
    pub text_b: Option<String>,
}

impl SentencePair {
    pub fn validate(&self) -> Result<()> {
        if self.side_a.is_empty() || self.side_b.is_empty() {
            return Err(ProbeError::Validation(format!(
                "pair {} needs at least one rendition per side",
                self.pair_id
            )));
        }
        if !self.gold_score.is_finite() {
            return Err(ProbeError::Validation(format!(
                "pair {} has non-finite gold",
                self.pair_id
            )));
        }
        Ok(())
    }
}

fn split_refs(field: &str) -> Vec<String> {
    field
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

pub fn read_gold_sts(path: impl AsRef<Path>) -> Result<Vec<SentencePair>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| ProbeError::io(path, e))?;
    parse_gold_sts(&text).map_err(|e| match e {
        ProbeError::Format(m) => ProbeError::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub(crate) fn parse_gold_sts(text: &str) -> Result<Vec<SentencePair>> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| ProbeError::Format("empty gold file".into()))?;
    let cols: Vec<&str> = header.split('\t').map(str::trim).collect();
    let with_text = match cols.as_slice() {
        ["pair_id", "gold_score", "side_a", "side_b"] => false,
        ["pair_id", "gold_score", "side_a", "side_b", "text_a", "text_b"] => true,
        _ => {
            return Err(ProbeError::Format(format!(
                "unexpected gold header '{header}'"
            )))
        }
    };
    let mut out = Vec::new();
    for (n, line) in lines {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != cols.len() {
            return Err(ProbeError::Format(format!(
                "line {}: expected {} fields, found {}",
                n + 1,
                cols.len(),
                f.len()
            )));
        }
        let gold_score = f[1].trim().parse::<f64>().map_err(|_| {
            ProbeError::Format(format!(
                "line {}: gold score '{}' is not a number",
                n + 1,
                f[1]
            ))
        })?;
        let pair = SentencePair {
            pair_id: f[0].trim().to_string(),
            gold_score,
            side_a: split_refs(f[2]),
            side_b: split_refs(f[3]),
            text_a: with_text.then(|| f[4].to_string()),
            text_b: with_text.then(|| f[5].to_string()),
        };
        pair.validate()?;
        out.push(pair);
    }
    Ok(out)
}

pub fn write_gold_sts(path: impl AsRef<Path>, pairs: &[SentencePair]) -> Result<()> {
    let path = path.as_ref();
    let with_text = pairs
        .iter()
        .any(|p| p.text_a.is_some() || p.text_b.is_some());
    let mut out = String::from("pair_id\tgold_score\tside_a\tside_b");
    if with_text {
        out.push_str("\ttext_a\ttext_b");
    }
    out.push('\n');
    for p in pairs {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}",
            p.pair_id,
            p.gold_score,
            p.side_a.join(","),
            p.side_b.join(",")
        ));
        if with_text {
            out.push_str(&format!(
                "\t{}\t{}",
                p.text_a.as_deref().unwrap_or(""),
                p.text_b.as_deref().unwrap_or("")
            ));
        }
        out.push('\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| ProbeError::io(path, e))
}
