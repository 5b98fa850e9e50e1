//! Labeled text segments, tokenization, vectorization and splits.

mod segment;
mod split;
mod synth;
mod tokenize;
mod vocab;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub use segment::{segment_documents, DEFAULT_MAX_TOKENS};
pub use split::{stratified_holdout, stratified_splits, FoldIndices};
pub use synth::{synthesize_corpus, GeneratorConfig};
pub use tokenize::{token_pieces, tokenize, Piece, TokenizerConfig};
pub use vocab::{build_vocab, extract_ngrams, tfidf_vectorize, FeatureVector, Vocabulary};

/// Source domain of a segment.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum Domain {
    Gtc,
    Ptsd,
    Counseling,
    Incel,
    Synthetic,
    Mixed,
    Other(String),
}

impl From<String> for Domain {
    fn from(s: String) -> Self {
        match s.to_ascii_lowercase().as_str() {
            "gtc" => Domain::Gtc,
            "ptsd" => Domain::Ptsd,
            "counseling" => Domain::Counseling,
            "incel" | "incels" => Domain::Incel,
            "synthetic" => Domain::Synthetic,
            "mixed" => Domain::Mixed,
            _ => Domain::Other(s),
        }
    }
}

impl From<&str> for Domain {
    fn from(s: &str) -> Self {
        Domain::from(s.to_string())
    }
}

impl From<Domain> for String {
    fn from(d: Domain) -> Self {
        d.as_str().to_string()
    }
}

impl Domain {
    pub fn as_str(&self) -> &str {
        match self {
            Domain::Gtc => "gtc",
            Domain::Ptsd => "ptsd",
            Domain::Counseling => "counseling",
            Domain::Incel => "incel",
            Domain::Synthetic => "synthetic",
            Domain::Mixed => "mixed",
            Domain::Other(s) => s,
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One labeled unit of text. Split segments remember their parent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub id: String,
    pub text: String,
    pub label: Option<u8>,
    pub domain: Domain,
    #[serde(default)]
    pub parent_id: Option<String>,
    /// Keys this crate does not know about, kept for round-trips.
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl Segment {
    pub fn new(id: impl Into<String>, text: impl Into<String>, label: Option<u8>, domain: Domain) -> Self {
        Segment {
            id: id.into(),
            text: text.into(),
            label,
            domain,
            parent_id: None,
            extra: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::invalid("segment id is empty"));
        }
        if self.text.trim().is_empty() {
            return Err(Error::invalid(format!("segment {:?} has empty text", self.id)));
        }
        if let Some(l) = self.label {
            if l > 1 {
                return Err(Error::invalid(format!("segment {:?} has label {l}, expected 0 or 1", self.id)));
            }
        }
        if self.parent_id.as_deref() == Some(self.id.as_str()) {
            return Err(Error::invalid(format!("segment {:?} is its own parent", self.id)));
        }
        Ok(())
    }

    pub fn tokens(&self) -> Vec<String> {
        tokenize(&self.text, &TokenizerConfig::default())
    }
}

/// Ordered, id-unique collection of segments.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    segments: Vec<Segment>,
    domain: Domain,
}

impl Corpus {
    pub fn new(segments: Vec<Segment>, domain: Domain) -> Result<Self> {
        let mut seen = HashSet::with_capacity(segments.len());
        for s in &segments {
            s.validate()?;
            if !seen.insert(s.id.as_str()) {
                return Err(Error::invalid(format!("duplicate segment id {:?}", s.id)));
            }
        }
        Ok(Corpus { segments, domain })
    }

    /// Builds a corpus, using the common domain of the segments or
    /// [`Domain::Mixed`].
    pub fn from_segments(segments: Vec<Segment>) -> Result<Self> {
        let domain = match segments.first() {
            Some(first) if segments.iter().all(|s| s.domain == first.domain) => first.domain.clone(),
            Some(_) => Domain::Mixed,
            None => Domain::Mixed,
        };
        Corpus::new(segments, domain)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Segment> {
        self.segments.iter()
    }

    pub fn into_segments(self) -> Vec<Segment> {
        self.segments
    }

    /// Labels of all segments; errors if any segment is unlabeled.
    pub fn labels(&self) -> Result<Vec<u8>> {
        self.segments
            .iter()
            .map(|s| s.label.ok_or_else(|| Error::invalid(format!("segment {:?} is unlabeled", s.id))))
            .collect()
    }

    pub fn n_labeled(&self) -> usize {
        self.segments.iter().filter(|s| s.label.is_some()).count()
    }

    pub fn n_positive(&self) -> usize {
        self.segments.iter().filter(|s| s.label == Some(1)).count()
    }

    /// Fraction of labeled segments that are positive, `None` without labels.
    pub fn class_balance(&self) -> Option<f64> {
        let labeled = self.n_labeled();
        (labeled > 0).then(|| self.n_positive() as f64 / labeled as f64)
    }

    /// Sub-corpus in the order of `indices`.
    pub fn subset(&self, indices: &[usize]) -> Corpus {
        Corpus {
            segments: indices.iter().map(|&i| self.segments[i].clone()).collect(),
            domain: self.domain.clone(),
        }
    }

    /// Concatenation; segment ids must stay unique.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a Corpus>) -> Result<Corpus> {
        let segments: Vec<Segment> = parts.into_iter().flat_map(|c| c.segments.iter().cloned()).collect();
        Corpus::from_segments(segments)
    }

    pub fn ids(&self) -> HashSet<&str> {
        self.segments.iter().map(|s| s.id.as_str()).collect()
    }

    /// One segment per line. Blank lines and lines starting with `#` are
    /// skipped; errors cite the 1-based line number.
    pub fn read_jsonl(reader: impl BufRead) -> Result<Corpus> {
        let mut segments = Vec::new();
        let mut errors = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            match serde_json::from_str::<Segment>(&line)
                .map_err(|e| e.to_string())
                .and_then(|s| s.validate().map(|_| s).map_err(|e| e.to_string()))
            {
                Ok(s) => segments.push(s),
                Err(message) => errors.push(Error::Parse { line: i + 1, message }),
            }
        }
        if let Some(first) = errors.into_iter().next() {
            return Err(first);
        }
        Corpus::from_segments(segments)
    }

    pub fn write_jsonl(&self, mut writer: impl Write) -> Result<()> {
        for s in &self.segments {
            serde_json::to_writer(&mut writer, s)?;
            writer.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Corpus> {
        let f = std::fs::File::open(path)?;
        Corpus::read_jsonl(std::io::BufReader::new(f))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_jsonl(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub(crate) fn require_both_classes(&self) -> Result<(usize, usize)> {
        let pos = self.n_positive();
        let neg = self.segments.iter().filter(|s| s.label == Some(0)).count();
        if pos == 0 || neg == 0 {
            return Err(Error::DegeneratePrior);
        }
        Ok((neg, pos))
    }
}

impl<'a> IntoIterator for &'a Corpus {
    type Item = &'a Segment;
    type IntoIter = std::slice::Iter<'a, Segment>;

    fn into_iter(self) -> Self::IntoIter {
        self.segments.iter()
    }
}
