use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Predictor;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SlalomConfig {
    /// Number of random token pairs scored by the predictor.
    pub n_background: usize,
    pub seed: u64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for SlalomConfig {
    fn default() -> Self {
        SlalomConfig {
            n_background: 100_000,
            seed: 0,
            epochs: 40,
            lr: 1.0,
            batch_size: 64,
        }
    }
}

/// Token value `v` and importance `s`: a sequence scores the
/// softmax(s)-weighted mean of its tokens' values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SlalomRepr", into = "SlalomRepr")]
pub struct SlalomModel {
    tokens: Vec<String>,
    values: Vec<f64>,
    importances: Vec<f64>,
    index: HashMap<String, usize>,
    /// Mean squared error on the background pairs after fitting.
    pub fit_loss: f64,
    /// False when importances carry no information (a single fitted token).
    pub importance_identifiable: bool,
    pub n_background: usize,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct SlalomRepr {
    tokens: Vec<String>,
    values: Vec<f64>,
    importances: Vec<f64>,
    fit_loss: f64,
    importance_identifiable: bool,
    n_background: usize,
    seed: u64,
}

impl From<SlalomModel> for SlalomRepr {
    fn from(m: SlalomModel) -> Self {
        SlalomRepr {
            tokens: m.tokens,
            values: m.values,
            importances: m.importances,
            fit_loss: m.fit_loss,
            importance_identifiable: m.importance_identifiable,
            n_background: m.n_background,
            seed: m.seed,
        }
    }
}

impl TryFrom<SlalomRepr> for SlalomModel {
    type Error = Error;

    fn try_from(r: SlalomRepr) -> Result<Self> {
        SlalomModel::from_parts(r.tokens, r.values, r.importances).map(|m| SlalomModel {
            fit_loss: r.fit_loss,
            importance_identifiable: r.importance_identifiable,
            n_background: r.n_background,
            seed: r.seed,
            ..m
        })
    }
}

impl SlalomModel {
    /// Model with the given parameters and no fitting metadata.
    pub fn from_parts(tokens: Vec<String>, values: Vec<f64>, importances: Vec<f64>) -> Result<Self> {
        if tokens.len() != values.len() || tokens.len() != importances.len() {
            return Err(Error::invalid("tokens, values and importances differ in length"));
        }
        if values.iter().chain(&importances).any(|x| !x.is_finite()) {
            return Err(Error::invalid("non-finite SLALOM parameter"));
        }
        let index: HashMap<String, usize> = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        if index.len() != tokens.len() {
            return Err(Error::invalid("duplicate SLALOM token"));
        }
        Ok(SlalomModel {
            importance_identifiable: tokens.len() > 1,
            tokens,
            values,
            importances,
            index,
            fit_loss: 0.0,
            n_background: 0,
            seed: 0,
        })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn value(&self, token: &str) -> Option<f64> {
        self.index.get(token).map(|&i| self.values[i])
    }

    pub fn importance(&self, token: &str) -> Option<f64> {
        self.index.get(token).map(|&i| self.importances[i])
    }

    /// `(token, value, importance)` rows in fitted order.
    pub fn rows(&self) -> impl Iterator<Item = (&str, f64, f64)> {
        self.tokens
            .iter()
            .zip(&self.values)
            .zip(&self.importances)
            .map(|((t, &v), &s)| (t.as_str(), v, s))
    }

    pub fn shift_importances(&mut self, c: f64) {
        for s in &mut self.importances {
            *s += c;
        }
    }

    fn predict_indices(&self, idx: &[usize]) -> f64 {
        let max = idx.iter().map(|&i| self.importances[i]).fold(f64::NEG_INFINITY, f64::max);
        let mut num = 0.0;
        let mut den = 0.0;
        for &i in idx {
            let w = (self.importances[i] - max).exp();
            num += w * self.values[i];
            den += w;
        }
        num / den
    }
}

/// Softmax(importance)-weighted mean of the token values.
pub fn slalom_predict<S: AsRef<str>>(model: &SlalomModel, tokens: &[S]) -> Result<f64> {
    if tokens.is_empty() {
        return Err(Error::invalid("SLALOM prediction needs a non-empty sequence"));
    }
    let idx: Vec<usize> = tokens
        .iter()
        .map(|t| {
            model
                .index
                .get(t.as_ref())
                .copied()
                .ok_or_else(|| Error::TokenNotFitted(t.as_ref().to_string()))
        })
        .collect::<Result<_>>()?;
    Ok(model.predict_indices(&idx))
}

/// Fits one global SLALOM surrogate to `predictor` on random two-token
/// sequences drawn uniformly (with replacement) from `vocab`.
///
/// Fitting is mini-batch SGD on the squared error between the predictor's
/// log-odds and the surrogate. Importances are centered to mean zero
/// afterwards, which leaves every prediction unchanged.
pub fn fit_slalom<P: Predictor + ?Sized>(predictor: &P, vocab: &[String], config: &SlalomConfig) -> Result<SlalomModel> {
    let tokens: Vec<String> = vocab.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if tokens.is_empty() {
        return Err(Error::invalid("SLALOM vocabulary is empty"));
    }
    if config.n_background == 0 {
        return Err(Error::invalid("n_background must be at least 1"));
    }
    let n = tokens.len();
    let mut r = rng::rng(config.seed);
    let pairs: Vec<(usize, usize)> = (0..config.n_background)
        .map(|_| (r.gen_range(0..n), r.gen_range(0..n)))
        .collect();

    let distinct: Vec<(usize, usize)> = pairs.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let scored: Vec<f64> = distinct
        .par_iter()
        .map(|&(a, b)| predictor.predict_tokens(&[tokens[a].as_str(), tokens[b].as_str()]))
        .collect::<Result<_>>()?;
    let lookup: HashMap<(usize, usize), f64> = distinct.into_iter().zip(scored).collect();
    let targets: Vec<f64> = pairs.iter().map(|p| lookup[p]).collect();

    let mean_target = targets.iter().sum::<f64>() / targets.len() as f64;
    let mut values = vec![mean_target; n];
    let mut importances = vec![0.0_f64; n];

    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let batch = config.batch_size.max(1);
    let mut gv = vec![0.0; n];
    let mut gs = vec![0.0; n];
    for epoch in 0..config.epochs {
        // step decay over the last third of training
        let lr = if epoch * 3 >= config.epochs * 2 { config.lr * 0.1 } else { config.lr };
        order.shuffle(&mut r);
        for chunk in order.chunks(batch) {
            let scale = 1.0 / chunk.len() as f64;
            let mut touched = Vec::with_capacity(2 * chunk.len());
            for &k in chunk {
                let (a, b) = pairs[k];
                let pa = 1.0 / (1.0 + (importances[b] - importances[a]).exp());
                let pred = pa * values[a] + (1.0 - pa) * values[b];
                let err = pred - targets[k];
                // d/dv_i = p_i err, d/ds_i = p_i (v_i - pred) err
                gv[a] += scale * err * pa;
                gv[b] += scale * err * (1.0 - pa);
                gs[a] += scale * err * pa * (values[a] - pred);
                gs[b] += scale * err * (1.0 - pa) * (values[b] - pred);
                touched.push(a);
                touched.push(b);
            }
            for &i in &touched {
                if gv[i] != 0.0 || gs[i] != 0.0 {
                    values[i] -= lr * gv[i];
                    importances[i] -= lr * gs[i];
                    gv[i] = 0.0;
                    gs[i] = 0.0;
                }
            }
        }
        if values.iter().chain(&importances).any(|x| !x.is_finite()) {
            return Err(Error::SlalomDiverged);
        }
    }

    let mean_s = importances.iter().sum::<f64>() / n as f64;
    for s in &mut importances {
        *s -= mean_s;
    }
    let mut model = SlalomModel::from_parts(tokens, values, importances)?;
    let fit_loss = pairs
        .iter()
        .zip(&targets)
        .map(|(&(a, b), &y)| (model.predict_indices(&[a, b]) - y).powi(2))
        .sum::<f64>()
        / pairs.len() as f64;
    if !fit_loss.is_finite() {
        return Err(Error::SlalomDiverged);
    }
    model.fit_loss = fit_loss;
    model.n_background = config.n_background;
    model.seed = config.seed;
    Ok(model)
}
