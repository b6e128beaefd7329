use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::text::normalize_word;
use crate::error::{ProbeError, Result};

/// Tolerance on row sums of probability-valued tables.
const SUM_TOL: f64 = 1e-6;

/// The linguistic property an attribute table encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeKind {
    /// One-hot word identity over a selected vocabulary.
    WordId,
    /// Acoustically grounded written-word embeddings (precomputed).
    Agwe,
    /// Part-of-speech tag distribution.
    #[serde(alias = "ptb")]
    PtbPos,
    /// Coarse word-sense (supersense) distribution.
    Semcor,
}

impl AttributeKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AttributeKind::WordId => "word_id",
            AttributeKind::Agwe => "agwe",
            AttributeKind::PtbPos => "ptb_pos",
            AttributeKind::Semcor => "semcor",
        }
    }

    fn is_distribution(&self) -> bool {
        matches!(self, AttributeKind::PtbPos | AttributeKind::Semcor)
    }
}

impl fmt::Display for AttributeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttributeKind {
    type Err = ProbeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "word_id" | "word" => Ok(AttributeKind::WordId),
            "agwe" => Ok(AttributeKind::Agwe),
            "ptb" | "ptb_pos" | "pos" => Ok(AttributeKind::PtbPos),
            "semcor" => Ok(AttributeKind::Semcor),
            other => Err(ProbeError::Config(format!(
                "unknown attribute property '{other}'"
            ))),
        }
    }
}

/// Word to attribute-vector map for one linguistic property.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeTable {
    pub kind: AttributeKind,
    dim: usize,
    rows: BTreeMap<String, Vec<f64>>,
}

impl AttributeTable {
    /// Builds a table and checks the per-kind invariants.
    pub fn new(kind: AttributeKind, dim: usize, rows: BTreeMap<String, Vec<f64>>) -> Result<Self> {
        let table = AttributeTable { kind, dim, rows };
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(ProbeError::Validation(
                "attribute dimension must be positive".into(),
            ));
        }
        for (word, v) in &self.rows {
            if v.len() != self.dim {
                return Err(ProbeError::Validation(format!(
                    "{} row '{word}' has length {}, expected {}",
                    self.kind,
                    v.len(),
                    self.dim
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(ProbeError::Validation(format!(
                    "{} row '{word}' is not finite",
                    self.kind
                )));
            }
            if self.kind.is_distribution() {
                let sum: f64 = v.iter().sum();
                if v.iter().any(|&x| x < 0.0) || (sum - 1.0).abs() > SUM_TOL {
                    return Err(ProbeError::Validation(format!(
                        "{} row '{word}' is not a distribution (sum {sum})",
                        self.kind
                    )));
                }
            }
            if self.kind == AttributeKind::WordId {
                let ones = v.iter().filter(|&&x| x == 1.0).count();
                let zeros = v.iter().filter(|&&x| x == 0.0).count();
                if ones != 1 || ones + zeros != v.len() {
                    return Err(ProbeError::Validation(format!(
                        "word_id row '{word}' is not one-hot"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Looks up a word after normalization.
    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.rows.get(&normalize_word(word)).map(Vec::as_slice)
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.rows.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.rows.iter().map(|(w, v)| (w.as_str(), v.as_slice()))
    }
}

/// One-hot word-identity vectors over `vocab`, coordinates in the given order.
pub fn one_hot_table<S: AsRef<str>>(vocab: &[S]) -> Result<AttributeTable> {
    let mut rows = BTreeMap::new();
    for (i, w) in vocab.iter().enumerate() {
        let mut v = vec![0.0; vocab.len()];
        v[i] = 1.0;
        if rows.insert(normalize_word(w.as_ref()), v).is_some() {
            return Err(ProbeError::Validation(format!(
                "duplicate vocabulary word '{}'",
                w.as_ref()
            )));
        }
    }
    AttributeTable::new(AttributeKind::WordId, vocab.len(), rows)
}

/// Outcome of building a probability table from tag counts.
#[derive(Debug, Clone)]
pub struct ProbTableBuild {
    pub table: AttributeTable,
    /// Words whose total count was zero.
    pub skipped: Vec<String>,
}

/// Normalizes per-word tag counts into empirical tag distributions.
///
/// `tag_order` fixes the vector dimension and coordinate order. Counts for tags
/// outside `tag_order` are a configuration error.
pub fn build_prob_attribute_table<W, T>(
    kind: AttributeKind,
    tag_counts: &BTreeMap<(W, T), u64>,
    tag_order: &[&str],
) -> Result<ProbTableBuild>
where
    W: AsRef<str> + Ord,
    T: AsRef<str> + Ord,
{
    let tag_index: BTreeMap<&str, usize> =
        tag_order.iter().enumerate().map(|(i, t)| (*t, i)).collect();
    let mut counts: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    for ((word, tag), &c) in tag_counts {
        let &k = tag_index.get(tag.as_ref()).ok_or_else(|| {
            ProbeError::Config(format!("tag '{}' is not in the tag order", tag.as_ref()))
        })?;
        counts
            .entry(normalize_word(word.as_ref()))
            .or_insert_with(|| vec![0; tag_order.len()])[k] += c;
    }
    let mut rows = BTreeMap::new();
    let mut skipped = Vec::new();
    for (word, c) in counts {
        let total: u64 = c.iter().sum();
        if total == 0 {
            skipped.push(word);
            continue;
        }
        let row = c.iter().map(|&x| x as f64 / total as f64).collect();
        rows.insert(word, row);
    }
    Ok(ProbTableBuild {
        table: AttributeTable::new(kind, tag_order.len(), rows)?,
        skipped,
    })
}

/// Reads a TSV table: one word followed by `dim` reals per line.
///
/// Blank lines and lines starting with `#` are ignored.
pub fn read_attribute_table(path: impl AsRef<Path>, kind: AttributeKind) -> Result<AttributeTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| ProbeError::io(path, e))?;
    let mut rows = BTreeMap::new();
    let mut dim = None;
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| ProbeError::io(path, e))?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        let word = normalize_word(fields.next().unwrap_or(""));
        let values = fields
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| ProbeError::Format(format!("{}:{}: {e}", path.display(), n + 1)))?;
        if word.is_empty() {
            return Err(ProbeError::Format(format!(
                "{}:{}: empty word",
                path.display(),
                n + 1
            )));
        }
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(ProbeError::Format(format!(
                    "{}:{}: expected {d} values, found {}",
                    path.display(),
                    n + 1,
                    values.len()
                )))
            }
            _ => {}
        }
        rows.insert(word, values);
    }
    let dim = dim.ok_or_else(|| ProbeError::Format(format!("{} is empty", path.display())))?;
    AttributeTable::new(kind, dim, rows)
}

pub fn write_attribute_table(path: impl AsRef<Path>, table: &AttributeTable) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for (word, v) in table.iter() {
        out.push_str(word);
        for x in v {
            out.push('\t');
            out.push_str(&x.to_string());
        }
        out.push('\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| ProbeError::io(path, e))
}
