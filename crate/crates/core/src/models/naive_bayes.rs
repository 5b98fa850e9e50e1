use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::Predictor;
use crate::corpus::{tokenize, Corpus, TokenizerConfig};
use crate::error::{Error, Result};

/// Bag-of-words Naive Bayes in log-odds form.
///
/// A token's weight is the log ratio of its Laplace-smoothed class
/// likelihoods. The smoothing denominator counts one extra vocabulary slot
/// reserved for unseen tokens, and unseen tokens score with that slot's
/// weight, so the log-odds of any text stay a plain sum of token weights.
///
/// `use_counts = true` is the "multiplicities" setting: token occurrences
/// are counted. With `false` each document contributes a token at most once,
/// both in training and in scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayesModel {
    pub prior_log_odds: f64,
    pub token_weights: BTreeMap<String, f64>,
    pub unseen_weight: f64,
    pub alpha: f64,
    pub use_counts: bool,
    #[serde(default)]
    pub tokenizer: TokenizerConfig,
}

/// Fits the model on a labeled corpus.
pub fn train_naive_bayes(corpus: &Corpus, alpha: f64, use_counts: bool) -> Result<NaiveBayesModel> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid("alpha must be positive"));
    }
    let (n_neg, n_pos) = corpus.require_both_classes()?;
    let tokenizer = TokenizerConfig::default();

    // per token: [class 0, class 1]
    let mut counts: BTreeMap<String, [f64; 2]> = BTreeMap::new();
    let mut totals = [0.0f64; 2];
    for seg in corpus {
        let Some(label) = seg.label else { continue };
        let class = label as usize;
        let tokens = tokenize(&seg.text, &tokenizer);
        let tokens: Vec<String> = if use_counts {
            tokens
        } else {
            tokens.into_iter().collect::<BTreeSet<_>>().into_iter().collect()
        };
        for t in tokens {
            counts.entry(t).or_default()[class] += 1.0;
            totals[class] += 1.0;
        }
    }

    let slots = (counts.len() + 1) as f64;
    let denom = [totals[0] + alpha * slots, totals[1] + alpha * slots];
    let weight = |c: [f64; 2]| ((c[1] + alpha) / denom[1]).ln() - ((c[0] + alpha) / denom[0]).ln();
    let token_weights = counts.iter().map(|(t, &c)| (t.clone(), weight(c))).collect();

    Ok(NaiveBayesModel {
        prior_log_odds: (n_pos as f64 / n_neg as f64).ln(),
        token_weights,
        unseen_weight: weight([0.0, 0.0]),
        alpha,
        use_counts,
        tokenizer,
    })
}

impl NaiveBayesModel {
    pub fn weight(&self, token: &str) -> f64 {
        self.token_weights.get(token).copied().unwrap_or(self.unseen_weight)
    }

    /// Prior plus the sum of token weights over the sequence (distinct tokens
    /// only when `use_counts` is false).
    pub fn log_odds_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> f64 {
        if self.use_counts {
            tokens.iter().fold(self.prior_log_odds, |acc, t| acc + self.weight(t.as_ref()))
        } else {
            let mut seen: BTreeSet<&str> = BTreeSet::new();
            let mut acc = self.prior_log_odds;
            for t in tokens {
                if seen.insert(t.as_ref()) {
                    acc += self.weight(t.as_ref());
                }
            }
            acc
        }
    }

    pub fn nb_log_odds(&self, text: &str) -> f64 {
        self.log_odds_tokens(&tokenize(text, &self.tokenizer))
    }
}

impl Predictor for NaiveBayesModel {
    fn predict_log_odds(&self, text: &str) -> Result<f64> {
        Ok(self.nb_log_odds(text))
    }

    fn predict_tokens(&self, tokens: &[&str]) -> Result<f64> {
        Ok(self.log_odds_tokens(tokens))
    }
}
