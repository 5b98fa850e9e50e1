use std::collections::HashMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::{tokenize, Corpus, TokenizerConfig};
use crate::error::{Error, Result};
use crate::models::container::{self, Tensor};
use crate::models::Predictor;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConceptConfig {
    pub k: usize,
    pub snippet_len: usize,
    pub epochs: usize,
    /// Adam learning rate per epoch; the last entry repeats.
    pub lr_schedule: Vec<f64>,
    pub batch_size: usize,
    pub seed: u64,
    pub top_m: usize,
    pub init: ConceptInit,
    /// Snippets sampled as initial concept candidates.
    pub candidate_pool: usize,
    /// When false the concept vectors keep their initial values and only the
    /// mapping head is trained.
    pub train_concepts: bool,
}

/// Starting point for the concept vectors.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConceptInit {
    /// Greedy pick among normalized snippet latents: each round adds the
    /// candidate whose document scores correlate most with the residual of
    /// the current head.
    #[default]
    Snippets,
    /// Isotropic Gaussian directions.
    Random,
}

impl Default for ConceptConfig {
    fn default() -> Self {
        ConceptConfig {
            k: 10,
            snippet_len: 5,
            epochs: 3,
            lr_schedule: vec![1e-3, 5e-4, 1e-4],
            batch_size: 12,
            seed: 0,
            top_m: 25,
            init: ConceptInit::Snippets,
            candidate_pool: 256,
            train_concepts: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SalientSnippet {
    pub segment_id: String,
    /// Token offset of the snippet in its segment.
    pub start: usize,
    pub tokens: Vec<String>,
    pub score: f64,
    pub left_context: Vec<String>,
    pub right_context: Vec<String>,
}

/// Top snippets of one concept. `shortfall` is set when fewer than the
/// requested number of snippets existed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SalientList {
    pub snippets: Vec<SalientSnippet>,
    pub shortfall: bool,
}

/// Unit-norm concept directions in the encoder's latent space plus a linear
/// head from concept scores to the class logit.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptSet {
    pub vectors: Vec<Vec<f64>>,
    pub head_weights: Vec<f64>,
    pub head_bias: f64,
    pub snippet_len: usize,
    pub salient: Vec<SalientList>,
    pub config: ConceptConfig,
    /// Completeness on the discovery corpus.
    pub train_completeness: f64,
}

struct Doc {
    segment: usize,
    tokens: Vec<String>,
    latents: Vec<Vec<f64>>,
}

struct SnippetIndex {
    docs: Vec<Doc>,
    dim: usize,
}

impl SnippetIndex {
    fn build<P: Predictor + ?Sized>(encoder: &P, corpus: &Corpus, snippet_len: usize) -> Result<Self> {
        if snippet_len == 0 {
            return Err(Error::invalid("snippet_len must be at least 1"));
        }
        let tok = TokenizerConfig::default();
        let tokenized: Vec<(usize, Vec<String>)> = corpus
            .iter()
            .enumerate()
            .map(|(i, s)| (i, tokenize(&s.text, &tok)))
            .filter(|(_, t)| t.len() >= snippet_len)
            .collect();
        if tokenized.is_empty() {
            return Err(Error::NoSnippets);
        }
        let mut unique: Vec<&[String]> = tokenized.iter().flat_map(|(_, t)| t.windows(snippet_len)).collect();
        unique.sort_unstable();
        unique.dedup();
        let encoded: Vec<Vec<f64>> = unique
            .par_iter()
            .map(|w| {
                let refs: Vec<&str> = w.iter().map(String::as_str).collect();
                encoder.latent_tokens(&refs)
            })
            .collect::<Result<_>>()?;
        let dim = encoded[0].len();
        if dim == 0 || encoded.iter().any(|v| v.len() != dim) {
            return Err(Error::invalid("encoder latent dimension is not constant"));
        }
        let lookup: HashMap<&[String], usize> = unique.iter().enumerate().map(|(i, w)| (*w, i)).collect();
        let docs = tokenized
            .iter()
            .map(|(segment, tokens)| Doc {
                segment: *segment,
                latents: tokens.windows(snippet_len).map(|w| encoded[lookup[w]].clone()).collect(),
                tokens: tokens.clone(),
            })
            .collect();
        Ok(SnippetIndex { docs, dim })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        for x in v {
            *x /= n;
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl ConceptSet {
    pub fn k(&self) -> usize {
        self.vectors.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    /// Per concept: the max over snippets of `latent . concept`, and the
    /// snippet achieving it.
    fn scores(&self, latents: &[Vec<f64>]) -> (Vec<f64>, Vec<usize>) {
        self.vectors
            .iter()
            .map(|c| {
                latents
                    .iter()
                    .enumerate()
                    .map(|(j, z)| (dot(z, c), j))
                    .fold((f64::NEG_INFINITY, 0), |best, x| if x.0 > best.0 { x } else { best })
            })
            .unzip()
    }

    fn head(&self, scores: &[f64]) -> f64 {
        dot(&self.head_weights, scores) + self.head_bias
    }

    /// Concept-score vectors of every segment with at least one snippet.
    pub fn document_scores<P: Predictor + ?Sized>(&self, encoder: &P, corpus: &Corpus) -> Result<Vec<(String, Vec<f64>)>> {
        let index = SnippetIndex::build(encoder, corpus, self.snippet_len)?;
        self.check_dim(index.dim)?;
        Ok(index
            .docs
            .iter()
            .map(|d| (corpus.segments()[d.segment].id.clone(), self.scores(&d.latents).0))
            .collect())
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        if dim != self.latent_dim() {
            return Err(Error::invalid(format!(
                "encoder latent dimension {dim} differs from concept dimension {}",
                self.latent_dim()
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.to_bytes_with(None)
    }

    /// Serializes with an optional provenance record in the header.
    pub fn to_bytes_with(&self, provenance: Option<serde_json::Value>) -> Result<Vec<u8>> {
        let mut meta = json!({
            "format": "tracekit-concepts",
            "version": 1,
            "k": self.k(),
            "latent_dim": self.latent_dim(),
            "snippet_len": self.snippet_len,
            "config": self.config,
            "train_completeness": self.train_completeness,
            "salient": self.salient,
        });
        if let Some(p) = provenance {
            meta["provenance"] = p;
        }
        let flat: Vec<f64> = self.vectors.iter().flatten().copied().collect();
        container::encode(
            meta,
            &[
                Tensor::new("concepts", vec![self.k(), self.latent_dim()], flat),
                Tensor::new("head.weight", vec![self.k()], self.head_weights.clone()),
                Tensor::new("head.bias", vec![1], vec![self.head_bias]),
            ],
        )
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (meta, tensors) = container::decode(bytes)?;
        if meta["format"] != "tracekit-concepts" {
            return Err(Error::invalid("not a concept set container"));
        }
        let [concepts, weights, bias] = <[Tensor; 3]>::try_from(tensors)
            .map_err(|_| Error::invalid("concept set container needs three tensors"))?;
        let (k, d) = match concepts.shape[..] {
            [k, d] => (k, d),
            _ => return Err(Error::invalid("concept tensor must be two-dimensional")),
        };
        if weights.shape != [k] || bias.shape != [1] {
            return Err(Error::invalid("head shape does not match concept count"));
        }
        Ok(ConceptSet {
            vectors: concepts.data.chunks(d.max(1)).map(<[f64]>::to_vec).collect(),
            head_weights: weights.data,
            head_bias: bias.data[0],
            snippet_len: serde_json::from_value(meta["snippet_len"].clone())?,
            salient: serde_json::from_value(meta["salient"].clone())?,
            config: serde_json::from_value(meta["config"].clone())?,
            train_completeness: serde_json::from_value(meta["train_completeness"].clone())?,
        })
    }
}

/// The encoder's own hard predictions for the indexed documents.
fn model_labels<P: Predictor + ?Sized>(model: &P, corpus: &Corpus, index: &SnippetIndex) -> Result<Vec<f64>> {
    index
        .docs
        .par_iter()
        .map(|d| model.predict_log_odds(&corpus.segments()[d.segment].text).map(|z| f64::from(u8::from(z > 0.0))))
        .collect()
}

fn accuracy(set: &ConceptSet, index: &SnippetIndex, targets: &[f64]) -> f64 {
    let hits = index
        .docs
        .iter()
        .zip(targets)
        .filter(|(d, &y)| f64::from(u8::from(set.head(&set.scores(&d.latents).0) > 0.0)) == y)
        .count();
    hits as f64 / index.docs.len() as f64
}

/// Per document, the max over its snippets of `latent . c`.
fn doc_scores(index: &SnippetIndex, c: &[f64]) -> Vec<f64> {
    index
        .docs
        .iter()
        .map(|d| d.latents.iter().map(|z| dot(z, c)).fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

const HEAD_RIDGE: f64 = 1e-2;

/// Ridge-regularized logistic regression of `targets` on the given feature
/// columns by Newton's method. Returns weights followed by the bias.
fn fit_head(columns: &[Vec<f64>], targets: &[f64]) -> Vec<f64> {
    let m = columns.len();
    let n = targets.len() as f64;
    let rate = (targets.iter().sum::<f64>() / n).clamp(1e-3, 1.0 - 1e-3);
    let mut theta = vec![0.0; m + 1];
    theta[m] = (rate / (1.0 - rate)).ln();
    let feature = |i: usize, j: usize| if j == m { 1.0 } else { columns[j][i] };
    for _ in 0..50 {
        let mut g = vec![0.0; m + 1];
        let mut h = vec![vec![0.0; m + 1]; m + 1];
        for (i, &y) in targets.iter().enumerate() {
            let z = theta[m] + (0..m).map(|j| theta[j] * columns[j][i]).sum::<f64>();
            let p = sigmoid(z);
            let w = p * (1.0 - p);
            for a in 0..=m {
                let fa = feature(i, a);
                g[a] += (p - y) * fa / n;
                for b in 0..=a {
                    h[a][b] += w * fa * feature(i, b) / n;
                }
            }
        }
        for a in 0..=m {
            let ridge = if a == m { 1e-9 } else { HEAD_RIDGE };
            g[a] += ridge * theta[a];
            h[a][a] += ridge;
            for b in 0..a {
                h[b][a] = h[a][b];
            }
        }
        let Some(step) = cholesky_solve(h, g) else { break };
        let mut biggest: f64 = 0.0;
        for (t, s) in theta.iter_mut().zip(&step) {
            *t -= s;
            biggest = biggest.max(s.abs());
        }
        if biggest < 1e-10 {
            break;
        }
    }
    theta
}

/// Solves `a x = b` for symmetric positive definite `a`.
fn cholesky_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for j in 0..n {
        let diag = a[j][j] - (0..j).map(|k| a[j][k] * a[j][k]).sum::<f64>();
        if !(diag > 0.0) {
            return None;
        }
        a[j][j] = diag.sqrt();
        for i in j + 1..n {
            a[i][j] = (a[i][j] - (0..j).map(|k| a[i][k] * a[j][k]).sum::<f64>()) / a[j][j];
        }
    }
    for i in 0..n {
        b[i] = (b[i] - (0..i).map(|k| a[i][k] * b[k]).sum::<f64>()) / a[i][i];
    }
    for i in (0..n).rev() {
        b[i] = (b[i] - (i + 1..n).map(|k| a[k][i] * b[k]).sum::<f64>()) / a[i][i];
    }
    Some(b)
}

fn greedy_snippet_init(index: &SnippetIndex, targets: &[f64], k: usize, pool: usize, r: &mut impl Rng) -> Vec<Vec<f64>> {
    let all: Vec<&[f64]> = index.docs.iter().flat_map(|d| d.latents.iter().map(Vec::as_slice)).collect();
    let mut picks = rand::seq::index::sample(r, all.len(), pool.min(all.len())).into_vec();
    picks.sort_unstable();
    let mut candidates: Vec<Vec<f64>> = picks
        .into_iter()
        .filter_map(|i| {
            let mut c = all[i].to_vec();
            normalize(&mut c);
            c.iter().any(|&x| x != 0.0).then_some(c)
        })
        .collect();
    candidates.sort_by(|a, b| a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
    candidates.dedup();
    let columns: Vec<Vec<f64>> = candidates.par_iter().map(|c| doc_scores(index, c)).collect();

    let mut chosen: Vec<usize> = Vec::new();
    while chosen.len() < k.min(candidates.len()) {
        let selected: Vec<Vec<f64>> = chosen.iter().map(|&j| columns[j].clone()).collect();
        let head = fit_head(&selected, targets);
        let m = selected.len();
        let residual: Vec<f64> = (0..targets.len())
            .map(|i| targets[i] - sigmoid(head[m] + (0..m).map(|j| head[j] * selected[j][i]).sum::<f64>()))
            .collect();
        let best = (0..columns.len())
            .filter(|j| !chosen.contains(j))
            .map(|j| {
                let col = &columns[j];
                let mean = col.iter().sum::<f64>() / col.len() as f64;
                let sd = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>().sqrt();
                let cov: f64 = col.iter().zip(&residual).map(|(x, e)| (x - mean) * e).sum();
                (j, if sd > 0.0 { (cov / sd).abs() } else { 0.0 })
            })
            .fold(None, |best: Option<(usize, f64)>, x| match best {
                Some(b) if b.1 >= x.1 => Some(b),
                _ => Some(x),
            });
        match best {
            Some((j, _)) => chosen.push(j),
            None => break,
        }
    }
    chosen.into_iter().map(|j| candidates[j].clone()).collect()
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grads[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grads[i] * grads[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Discovers `k` concept directions whose snippet activations suffice to
/// reproduce the encoder's own predictions.
///
/// Each document is summarized by, per concept, the maximum dot product
/// between its snippet latents and the concept vector. A linear head maps
/// that summary to a logit, and head plus concepts are trained with Adam on
/// the cross-entropy against the encoder's hard predictions. Concept
/// vectors are projected back to the unit sphere after every step.
pub fn discover_concepts<P: Predictor + ?Sized>(encoder: &P, corpus: &Corpus, config: &ConceptConfig) -> Result<ConceptSet> {
    if config.k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if config.lr_schedule.is_empty() {
        return Err(Error::invalid("lr_schedule is empty"));
    }
    let index = SnippetIndex::build(encoder, corpus, config.snippet_len)?;
    let targets = model_labels(encoder, corpus, &index)?;
    let (k, d) = (config.k, index.dim);

    let mut r = rng::rng(config.seed);
    let vectors = match config.init {
        ConceptInit::Snippets => greedy_snippet_init(&index, &targets, k, config.candidate_pool, &mut r),
        ConceptInit::Random => Vec::new(),
    };
    let mut concepts: Vec<f64> = vectors.into_iter().flatten().collect();
    while concepts.len() < k * d {
        let mut c: Vec<f64> = (0..d).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
        normalize(&mut c);
        concepts.extend(c);
    }
    let columns: Vec<Vec<f64>> = concepts.chunks(d).map(|c| doc_scores(&index, c)).collect();
    // head = [w_1..w_k, b]
    let mut head = fit_head(&columns, &targets);

    let mut adam_c = Adam::new(k * d);
    let mut adam_h = Adam::new(k + 1);
    let mut order: Vec<usize> = (0..index.docs.len()).collect();
    let batch = config.batch_size.max(1);
    let mut set = ConceptSet {
        vectors: concepts.chunks(d).map(<[f64]>::to_vec).collect(),
        head_weights: head[..k].to_vec(),
        head_bias: head[k],
        snippet_len: config.snippet_len,
        salient: Vec::new(),
        config: config.clone(),
        train_completeness: 0.0,
    };
    for epoch in 0..config.epochs {
        let lr = config.lr_schedule[epoch.min(config.lr_schedule.len() - 1)];
        order.shuffle(&mut r);
        for chunk in order.chunks(batch) {
            let mut gc = vec![0.0; k * d];
            let mut gh = vec![0.0; k + 1];
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let doc = &index.docs[i];
                let (scores, arg) = set.scores(&doc.latents);
                let g = (sigmoid(set.head(&scores)) - targets[i]) * scale;
                for c in 0..k {
                    gh[c] += g * scores[c];
                    let z = &doc.latents[arg[c]];
                    for (acc, zi) in gc[c * d..(c + 1) * d].iter_mut().zip(z) {
                        *acc += g * set.head_weights[c] * zi;
                    }
                }
                gh[k] += g;
            }
            adam_h.step(&mut head, &gh, lr);
            if config.train_concepts {
                adam_c.step(&mut concepts, &gc, lr);
                for c in concepts.chunks_mut(d) {
                    normalize(c);
                }
            }
            if head.iter().chain(&concepts).any(|x| !x.is_finite()) {
                return Err(Error::Diverged);
            }
            set.vectors = concepts.chunks(d).map(<[f64]>::to_vec).collect();
            set.head_weights.copy_from_slice(&head[..k]);
            set.head_bias = head[k];
        }
    }
    set.train_completeness = accuracy(&set, &index, &targets);
    set.salient = salient_from_index(&set, corpus, &index, config.top_m);
    Ok(set)
}

/// Fraction of documents where the concept head agrees with the model's own
/// hard prediction. Documents shorter than one snippet are skipped.
pub fn completeness_score<P: Predictor + ?Sized>(concepts: &ConceptSet, corpus: &Corpus, model: &P) -> Result<f64> {
    let index = SnippetIndex::build(model, corpus, concepts.snippet_len)?;
    concepts.check_dim(index.dim)?;
    let targets = model_labels(model, corpus, &index)?;
    Ok(accuracy(concepts, &index, &targets))
}

const CONTEXT_TOKENS: usize = 5;

fn salient_from_index(set: &ConceptSet, corpus: &Corpus, index: &SnippetIndex, top_m: usize) -> Vec<SalientList> {
    set.vectors
        .iter()
        .map(|c| {
            let mut all: Vec<(f64, usize, usize)> = index
                .docs
                .iter()
                .enumerate()
                .flat_map(|(di, d)| d.latents.iter().enumerate().map(move |(j, z)| (dot(z, c), di, j)))
                .collect();
            all.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let shortfall = all.len() < top_m;
            let snippets = all
                .into_iter()
                .take(top_m)
                .map(|(score, di, start)| {
                    let doc = &index.docs[di];
                    let end = start + set.snippet_len;
                    SalientSnippet {
                        segment_id: corpus.segments()[doc.segment].id.clone(),
                        start,
                        tokens: doc.tokens[start..end].to_vec(),
                        score,
                        left_context: doc.tokens[start.saturating_sub(CONTEXT_TOKENS)..start].to_vec(),
                        right_context: doc.tokens[end..(end + CONTEXT_TOKENS).min(doc.tokens.len())].to_vec(),
                    }
                })
                .collect();
            SalientList { snippets, shortfall }
        })
        .collect()
}

/// For each concept, the `top_m` snippets of `corpus` with the highest
/// activation, sorted by descending score.
pub fn salient_examples<P: Predictor + ?Sized>(
    concepts: &ConceptSet,
    encoder: &P,
    corpus: &Corpus,
    top_m: usize,
) -> Result<Vec<SalientList>> {
    let index = SnippetIndex::build(encoder, corpus, concepts.snippet_len)?;
    concepts.check_dim(index.dim)?;
    Ok(salient_from_index(concepts, corpus, &index, top_m))
}

/// Plain-text card listing a concept's salient snippets, each highlighted
/// with `[[ ]]` inside its surrounding tokens.
pub fn concept_card(concepts: &ConceptSet, k: usize) -> Option<String> {
    let list = concepts.salient.get(k)?;
    let mut out = String::new();
    let _ = writeln!(out, "concept {k}");
    let _ = writeln!(out, "head weight {:.6}", concepts.head_weights[k]);
    let _ = writeln!(out, "snippets {}{}", list.snippets.len(), if list.shortfall { " (shortfall)" } else { "" });
    for (rank, s) in list.snippets.iter().enumerate() {
        let mut line = String::new();
        if !s.left_context.is_empty() {
            line.push_str("... ");
            line.push_str(&s.left_context.join(" "));
            line.push(' ');
        }
        line.push_str("[[");
        line.push_str(&s.tokens.join(" "));
        line.push_str("]]");
        if !s.right_context.is_empty() {
            line.push(' ');
            line.push_str(&s.right_context.join(" "));
            line.push_str(" ...");
        }
        let _ = writeln!(out, "{:>3}. {:>10.4}  {}  ({}@{})", rank + 1, s.score, line, s.segment_id, s.start);
    }
    Some(out)
}
