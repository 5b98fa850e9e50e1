use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::container::{self, Tensor};
use super::{Predictor, MODEL_FORMAT, MODEL_VERSION};
use crate::corpus::{tfidf_vectorize, tokenize, Corpus, FeatureVector, TokenizerConfig, Vocabulary};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FfnnConfig {
    /// One or two hidden widths.
    pub hidden_dims: Vec<usize>,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for FfnnConfig {
    fn default() -> Self {
        FfnnConfig {
            hidden_dims: vec![50],
            lr: 0.5,
            epochs: 10,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Fully connected layer. `weights` is input-major: entry `i * out_dim + o`
/// connects input `i` to output `o`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn init(in_dim: usize, out_dim: usize, r: &mut rng::Rng) -> Layer {
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        let mut draw = || r.gen_range(-bound..=bound);
        let weights = (0..in_dim * out_dim).map(|_| draw()).collect();
        let bias = (0..out_dim).map(|_| draw()).collect();
        Layer {
            in_dim,
            out_dim,
            weights,
            bias,
        }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.out_dim..(i + 1) * self.out_dim]
    }

    fn forward_sparse(&self, x: &FeatureVector) -> Vec<f64> {
        let mut z = self.bias.clone();
        for &(i, v) in &x.entries {
            for (zo, w) in z.iter_mut().zip(self.row(i)) {
                *zo += v * w;
            }
        }
        z
    }

    fn forward_dense(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.bias.clone();
        for (i, &v) in x.iter().enumerate() {
            if v != 0.0 {
                for (zo, w) in z.iter_mut().zip(self.row(i)) {
                    *zo += v * w;
                }
            }
        }
        z
    }
}

/// TF-IDF input, ReLU hidden layers, single output logit.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForwardModel {
    pub config: FfnnConfig,
    pub vocab: Vocabulary,
    /// Hidden layers followed by the output layer.
    pub layers: Vec<Layer>,
    pub tokenizer: TokenizerConfig,
}

struct Forward {
    /// Pre-activations of every layer, output last.
    pre: Vec<Vec<f64>>,
    /// ReLU activations of the hidden layers.
    hidden: Vec<Vec<f64>>,
}

/// Gradient accumulator; the first layer is kept sparse by input row.
struct Grads {
    first: BTreeMap<usize, Vec<f64>>,
    dense: Vec<Vec<f64>>,
    bias: Vec<Vec<f64>>,
}

impl Grads {
    fn zeros(model: &FeedForwardModel) -> Grads {
        Grads {
            first: BTreeMap::new(),
            dense: model.layers[1..].iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: model.layers.iter().map(|l| vec![0.0; l.out_dim]).collect(),
        }
    }
}

fn log_sigmoid_loss(logit: f64, y: f64) -> f64 {
    logit.max(0.0) + (-logit.abs()).exp().ln_1p() - y * logit
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl FeedForwardModel {
    fn initialize(vocab: Vocabulary, config: &FfnnConfig) -> Result<Self> {
        if config.hidden_dims.is_empty() || config.hidden_dims.len() > 2 || config.hidden_dims.contains(&0) {
            return Err(Error::invalid("hidden_dims must hold one or two positive widths"));
        }
        if !(config.lr > 0.0) {
            return Err(Error::invalid("lr must be positive"));
        }
        let mut r = rng::rng(config.seed);
        let mut dims = vec![vocab.len()];
        dims.extend(&config.hidden_dims);
        dims.push(1);
        let layers = dims.windows(2).map(|w| Layer::init(w[0], w[1], &mut r)).collect();
        Ok(FeedForwardModel {
            config: config.clone(),
            vocab,
            layers,
            tokenizer: TokenizerConfig::default(),
        })
    }

    fn forward(&self, x: &FeatureVector) -> Forward {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut hidden = Vec::with_capacity(self.layers.len() - 1);
        let mut z = self.layers[0].forward_sparse(x);
        for layer in &self.layers[1..] {
            let h: Vec<f64> = z.iter().map(|v| v.max(0.0)).collect();
            let next = layer.forward_dense(&h);
            pre.push(z);
            hidden.push(h);
            z = next;
        }
        pre.push(z);
        Forward { pre, hidden }
    }

    pub fn features<S: AsRef<str>>(&self, tokens: &[S]) -> FeatureVector {
        tfidf_vectorize(tokens, &self.vocab)
    }

    pub fn logit(&self, x: &FeatureVector) -> f64 {
        self.forward(x).pre.last().expect("output layer")[0]
    }

    /// Last hidden-layer activation.
    pub fn latent_of(&self, x: &FeatureVector) -> Vec<f64> {
        self.forward(x).hidden.pop().expect("at least one hidden layer")
    }

    /// Adds `scale * d loss / d params` for one example and returns its loss.
    fn backprop(&self, x: &FeatureVector, y: f64, scale: f64, grads: &mut Grads) -> f64 {
        let fwd = self.forward(x);
        let n = self.layers.len();
        let logit = fwd.pre[n - 1][0];
        let loss = log_sigmoid_loss(logit, y);
        let mut delta = vec![(sigmoid(logit) - y) * scale];
        for l in (0..n).rev() {
            let layer = &self.layers[l];
            for (g, d) in grads.bias[l].iter_mut().zip(&delta) {
                *g += d;
            }
            if l == 0 {
                for &(i, v) in &x.entries {
                    let row = grads.first.entry(i).or_insert_with(|| vec![0.0; layer.out_dim]);
                    for (g, d) in row.iter_mut().zip(&delta) {
                        *g += v * d;
                    }
                }
                break;
            }
            let input = &fwd.hidden[l - 1];
            let gw = &mut grads.dense[l - 1];
            let mut prev = vec![0.0; layer.in_dim];
            for (i, &a) in input.iter().enumerate() {
                let row = layer.row(i);
                let mut back = 0.0;
                for o in 0..layer.out_dim {
                    gw[i * layer.out_dim + o] += a * delta[o];
                    back += row[o] * delta[o];
                }
                prev[i] = if fwd.pre[l - 1][i] > 0.0 { back } else { 0.0 };
            }
            delta = prev;
        }
        loss
    }

    fn apply(&mut self, grads: &Grads, lr: f64) {
        let out0 = self.layers[0].out_dim;
        for (&i, g) in &grads.first {
            let row = &mut self.layers[0].weights[i * out0..(i + 1) * out0];
            for (w, d) in row.iter_mut().zip(g) {
                *w -= lr * d;
            }
        }
        for (layer, g) in self.layers[1..].iter_mut().zip(&grads.dense) {
            for (w, d) in layer.weights.iter_mut().zip(g) {
                *w -= lr * d;
            }
        }
        for (layer, g) in self.layers.iter_mut().zip(&grads.bias) {
            for (b, d) in layer.bias.iter_mut().zip(g) {
                *b -= lr * d;
            }
        }
    }

    pub(crate) fn to_container(&self, provenance: Option<serde_json::Value>) -> Result<Vec<u8>> {
        let mut meta = json!({
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "kind": "feed_forward",
            "config": self.config,
            "tokenizer": self.tokenizer,
            "vocab": self.vocab,
        });
        if let Some(p) = provenance {
            meta["provenance"] = p;
        }
        let tensors: Vec<Tensor> = self
            .layers
            .iter()
            .enumerate()
            .flat_map(|(k, l)| {
                [
                    Tensor::new(format!("layer{k}.weight"), vec![l.in_dim, l.out_dim], l.weights.clone()),
                    Tensor::new(format!("layer{k}.bias"), vec![l.out_dim], l.bias.clone()),
                ]
            })
            .collect();
        container::encode(meta, &tensors)
    }

    pub(crate) fn from_container(bytes: &[u8]) -> Result<Self> {
        let (meta, tensors) = container::decode(bytes)?;
        if meta["kind"] != "feed_forward" || meta["format"] != MODEL_FORMAT {
            return Err(Error::invalid("container does not hold a feed-forward model"));
        }
        let config: FfnnConfig = serde_json::from_value(meta["config"].clone())?;
        let tokenizer: TokenizerConfig = serde_json::from_value(meta["tokenizer"].clone())?;
        let vocab: Vocabulary = serde_json::from_value(meta["vocab"].clone())?;
        if tensors.len() % 2 != 0 {
            return Err(Error::invalid("unpaired layer tensors"));
        }
        let mut layers = Vec::new();
        let mut expected_in = vocab.len();
        for pair in tensors.chunks_exact(2) {
            let (w, b) = (&pair[0], &pair[1]);
            if w.shape.len() != 2 || w.shape[0] != expected_in || b.shape != [w.shape[1]] {
                return Err(Error::invalid("layer shapes do not chain"));
            }
            expected_in = w.shape[1];
            layers.push(Layer {
                in_dim: w.shape[0],
                out_dim: w.shape[1],
                weights: w.data.clone(),
                bias: b.data.clone(),
            });
        }
        if expected_in != 1 || layers.len() < 2 {
            return Err(Error::invalid("network must end in a single logit after a hidden layer"));
        }
        Ok(FeedForwardModel {
            config,
            vocab,
            layers,
            tokenizer,
        })
    }
}

/// Mini-batch SGD on the logistic loss over TF-IDF inputs.
pub fn train_ffnn(corpus: &Corpus, config: &FfnnConfig) -> Result<FeedForwardModel> {
    corpus.require_both_classes()?;
    let tokenizer = TokenizerConfig::default();
    let labeled: Vec<_> = corpus.iter().filter(|s| s.label.is_some()).collect();
    let docs: Vec<Vec<String>> = labeled.iter().map(|s| tokenize(&s.text, &tokenizer)).collect();
    let vocab = Vocabulary::from_documents(&docs, 1)?;
    let mut model = FeedForwardModel::initialize(vocab, config)?;
    let xs: Vec<FeatureVector> = docs.iter().map(|d| model.features(d)).collect();
    let ys: Vec<f64> = labeled.iter().map(|s| f64::from(s.label.unwrap_or(0))).collect();

    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut shuffle_rng = rng::substream(config.seed, 1);
    let batch = config.batch_size.max(1);
    for _ in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(batch) {
            let mut grads = Grads::zeros(&model);
            let scale = 1.0 / chunk.len() as f64;
            let mut loss = 0.0;
            for &i in chunk {
                loss += model.backprop(&xs[i], ys[i], scale, &mut grads);
            }
            if !loss.is_finite() {
                return Err(Error::Diverged);
            }
            model.apply(&grads, config.lr);
        }
    }
    if model.layers.iter().any(|l| l.weights.iter().chain(&l.bias).any(|v| !v.is_finite())) {
        return Err(Error::Diverged);
    }
    Ok(model)
}

impl Predictor for FeedForwardModel {
    fn predict_log_odds(&self, text: &str) -> Result<f64> {
        Ok(self.logit(&self.features(&tokenize(text, &self.tokenizer))))
    }

    fn predict_tokens(&self, tokens: &[&str]) -> Result<f64> {
        Ok(self.logit(&self.features(tokens)))
    }

    fn latent_dim(&self) -> Option<usize> {
        self.layers.iter().rev().nth(1).map(|l| l.out_dim)
    }

    fn latent(&self, text: &str) -> Result<Vec<f64>> {
        Ok(self.latent_of(&self.features(&tokenize(text, &self.tokenizer))))
    }

    fn latent_tokens(&self, tokens: &[&str]) -> Result<Vec<f64>> {
        Ok(self.latent_of(&self.features(tokens)))
    }
}
