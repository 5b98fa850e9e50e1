use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{Corpus, TokenizerConfig};
use crate::error::{Error, Result};

/// Dense token index with document frequencies.
///
/// Indices follow lexicographic token order, so two vocabularies built from
/// the same documents are identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VocabRepr", into = "VocabRepr")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    df: Vec<usize>,
    n_docs: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    tokens: Vec<String>,
    df: Vec<usize>,
    n_docs: usize,
}

impl From<Vocabulary> for VocabRepr {
    fn from(v: Vocabulary) -> Self {
        VocabRepr {
            tokens: v.tokens,
            df: v.df,
            n_docs: v.n_docs,
        }
    }
}

impl TryFrom<VocabRepr> for Vocabulary {
    type Error = Error;

    fn try_from(r: VocabRepr) -> Result<Self> {
        if r.tokens.len() != r.df.len() {
            return Err(Error::invalid("vocabulary tokens and df differ in length"));
        }
        if r.df.iter().any(|&d| d > r.n_docs) {
            return Err(Error::invalid("document frequency exceeds document count"));
        }
        let index: HashMap<String, usize> = r.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        if index.len() != r.tokens.len() {
            return Err(Error::invalid("vocabulary contains duplicate tokens"));
        }
        Ok(Vocabulary {
            tokens: r.tokens,
            index,
            df: r.df,
            n_docs: r.n_docs,
        })
    }
}

impl Vocabulary {
    /// Vocabulary over pre-tokenized documents keeping terms with
    /// document frequency of at least `min_df`.
    pub fn from_documents<S: AsRef<str>>(docs: &[Vec<S>], min_df: usize) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut df: BTreeMap<&str, usize> = BTreeMap::new();
        for doc in docs {
            let mut seen: Vec<&str> = doc.iter().map(|t| t.as_ref()).collect();
            seen.sort_unstable();
            seen.dedup();
            for t in seen {
                *df.entry(t).or_default() += 1;
            }
        }
        let kept: Vec<(&str, usize)> = df.into_iter().filter(|&(_, d)| d >= min_df.max(1)).collect();
        let tokens: Vec<String> = kept.iter().map(|(t, _)| t.to_string()).collect();
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(Vocabulary {
            tokens,
            index,
            df: kept.iter().map(|&(_, d)| d).collect(),
            n_docs: docs.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn df(&self, token: &str) -> Option<usize> {
        self.get(token).map(|i| self.df[i])
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    /// Smoothed inverse document frequency `ln((1 + N) / (1 + df)) + 1`.
    pub fn idf(&self, index: usize) -> f64 {
        ((1.0 + self.n_docs as f64) / (1.0 + self.df[index] as f64)).ln() + 1.0
    }
}

/// Vocabulary of the tokenized texts of `corpus`.
pub fn build_vocab(corpus: &Corpus, min_df: usize, tokenizer: &TokenizerConfig) -> Result<Vocabulary> {
    let docs: Vec<Vec<String>> = corpus.iter().map(|s| super::tokenize(&s.text, tokenizer)).collect();
    Vocabulary::from_documents(&docs, min_df)
}

/// Sparse vector with strictly increasing indices.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureVector {
    pub dim: usize,
    pub entries: Vec<(usize, f64)>,
}

impl FeatureVector {
    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt()
    }

    pub fn dot_dense(&self, dense: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, w)| w * dense[i]).sum()
    }

    pub fn get(&self, index: usize) -> f64 {
        self.entries
            .binary_search_by_key(&index, |&(i, _)| i)
            .map(|k| self.entries[k].1)
            .unwrap_or(0.0)
    }
}

/// L2-normalized TF-IDF vector of `tokens`; out-of-vocabulary tokens are
/// dropped, and a document with no known token maps to the zero vector.
pub fn tfidf_vectorize<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary) -> FeatureVector {
    let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
    for t in tokens {
        if let Some(i) = vocab.get(t.as_ref()) {
            *counts.entry(i).or_default() += 1.0;
        }
    }
    let mut entries: Vec<(usize, f64)> = counts.into_iter().map(|(i, tf)| (i, tf * vocab.idf(i))).collect();
    let norm = entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
    if norm > 0.0 {
        for e in &mut entries {
            e.1 /= norm;
        }
    }
    FeatureVector {
        dim: vocab.len(),
        entries,
    }
}

/// All contiguous n-grams for `n` in `lo..=hi`, ordered by `(n, position)`
/// and joined with `_`.
pub fn extract_ngrams<S: AsRef<str>>(tokens: &[S], lo: usize, hi: usize) -> Vec<String> {
    let lo = lo.max(1);
    let mut out = Vec::new();
    for n in lo..=hi {
        if n > tokens.len() {
            break;
        }
        for w in tokens.windows(n) {
            let gram: Vec<&str> = w.iter().map(|t| t.as_ref()).collect();
            out.push(gram.join("_"));
        }
    }
    out
}
