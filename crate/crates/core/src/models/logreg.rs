use serde::{Deserialize, Serialize};

use super::Predictor;
use crate::corpus::{extract_ngrams, tfidf_vectorize, tokenize, Corpus, FeatureVector, TokenizerConfig, Vocabulary};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Penalty {
    L2,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogRegConfig {
    pub n_range: (usize, usize),
    /// Inverse regularization strength; the penalty is `||w||^2 / (2C)`.
    pub c: f64,
    pub penalty: Penalty,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig {
            n_range: (1, 2),
            c: 1.0,
            penalty: Penalty::L2,
            max_iter: 5000,
            tol: 1e-6,
        }
    }
}

/// What the optimizer did.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingReport {
    pub iterations: usize,
    pub converged: bool,
    pub final_loss: f64,
    pub gradient_norm: f64,
    pub warnings: Vec<String>,
    /// Objective value before each iteration and after the last one.
    #[serde(skip)]
    pub loss_trace: Vec<f64>,
}

/// Logistic regression over TF-IDF weighted n-grams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    pub config: LogRegConfig,
    pub vocab: Vocabulary,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub report: TrainingReport,
    #[serde(default)]
    pub tokenizer: TokenizerConfig,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean logistic loss plus penalty over sparse rows.
pub(crate) struct LogisticObjective<'a> {
    pub rows: &'a [FeatureVector],
    pub labels: &'a [f64],
    pub lambda: f64,
}

impl LogisticObjective<'_> {
    fn margins(&self, w: &[f64], b: f64) -> Vec<f64> {
        self.rows.iter().map(|x| x.dot_dense(w) + b).collect()
    }

    pub fn loss(&self, w: &[f64], b: f64) -> f64 {
        let n = self.rows.len() as f64;
        let data: f64 = self
            .margins(w, b)
            .iter()
            .zip(self.labels)
            .map(|(&z, &y)| softplus(z) - y * z)
            .sum::<f64>()
            / n;
        data + 0.5 * self.lambda * w.iter().map(|v| v * v).sum::<f64>()
    }

    /// Gradient with respect to `(w, b)`.
    pub fn gradient(&self, w: &[f64], b: f64) -> (Vec<f64>, f64) {
        let n = self.rows.len() as f64;
        let mut gw: Vec<f64> = w.iter().map(|v| self.lambda * v).collect();
        let mut gb = 0.0;
        for (x, (&z, &y)) in self.rows.iter().zip(self.margins(w, b).iter().zip(self.labels)) {
            let r = (sigmoid(z) - y) / n;
            for &(i, v) in &x.entries {
                gw[i] += r * v;
            }
            gb += r;
        }
        (gw, gb)
    }
}

fn ngram_tokens(text: &str, cfg: &LogRegConfig, tokenizer: &TokenizerConfig) -> Vec<String> {
    extract_ngrams(&tokenize(text, tokenizer), cfg.n_range.0, cfg.n_range.1)
}

/// Fits by full-batch gradient descent with Armijo backtracking from a zero
/// start. Stops when the gradient norm drops below `tol` or at `max_iter`;
/// in the latter case the model is still returned and the report carries a
/// warning.
pub fn train_ngram_logreg(corpus: &Corpus, config: &LogRegConfig) -> Result<LogRegModel> {
    let (lo, hi) = config.n_range;
    if lo == 0 || lo > hi {
        return Err(Error::invalid("n_range must satisfy 1 <= lo <= hi"));
    }
    if config.penalty == Penalty::L2 && !(config.c > 0.0) {
        return Err(Error::invalid("C must be positive for the l2 penalty"));
    }
    corpus.require_both_classes()?;
    let tokenizer = TokenizerConfig::default();
    let labeled: Vec<_> = corpus.iter().filter(|s| s.label.is_some()).collect();
    let grams: Vec<Vec<String>> = labeled.iter().map(|s| ngram_tokens(&s.text, config, &tokenizer)).collect();
    let vocab = Vocabulary::from_documents(&grams, 1)?;
    let rows: Vec<FeatureVector> = grams.iter().map(|g| tfidf_vectorize(g, &vocab)).collect();
    let labels: Vec<f64> = labeled.iter().map(|s| f64::from(s.label.unwrap_or(0))).collect();
    let lambda = match config.penalty {
        Penalty::L2 => 1.0 / config.c,
        Penalty::None => 0.0,
    };
    let objective = LogisticObjective {
        rows: &rows,
        labels: &labels,
        lambda,
    };

    let mut w = vec![0.0; vocab.len()];
    let mut b = 0.0;
    let mut loss = objective.loss(&w, b);
    let mut report = TrainingReport {
        loss_trace: vec![loss],
        ..Default::default()
    };
    let mut step = 1.0;
    let mut grad_norm = f64::INFINITY;
    while report.iterations < config.max_iter {
        let (gw, gb) = objective.gradient(&w, b);
        let g2 = gw.iter().map(|v| v * v).sum::<f64>() + gb * gb;
        grad_norm = g2.sqrt();
        if grad_norm < config.tol {
            report.converged = true;
            break;
        }
        step *= 2.0;
        let (nw, nb, nl) = loop {
            let nw: Vec<f64> = w.iter().zip(&gw).map(|(v, g)| v - step * g).collect();
            let nb = b - step * gb;
            let nl = objective.loss(&nw, nb);
            if nl <= loss - 0.5 * step * g2 || step < 1e-20 {
                break (nw, nb, nl);
            }
            step *= 0.5;
        };
        if !nl.is_finite() {
            return Err(Error::Diverged);
        }
        if nl > loss {
            // line search exhausted at machine precision
            report.warnings.push(format!("line search stalled at iteration {}", report.iterations));
            break;
        }
        w = nw;
        b = nb;
        loss = nl;
        report.iterations += 1;
        report.loss_trace.push(loss);
    }
    if !report.converged {
        let (gw, gb) = objective.gradient(&w, b);
        grad_norm = (gw.iter().map(|v| v * v).sum::<f64>() + gb * gb).sqrt();
        report.converged = grad_norm < config.tol;
        if !report.converged {
            report.warnings.push(format!(
                "did not converge within {} iterations (gradient norm {grad_norm:.3e})",
                config.max_iter
            ));
        }
    }
    report.final_loss = loss;
    report.gradient_norm = grad_norm;

    Ok(LogRegModel {
        config: config.clone(),
        vocab,
        weights: w,
        bias: b,
        report,
        tokenizer,
    })
}

impl LogRegModel {
    pub(crate) fn rebuild(self) -> Result<Self> {
        if self.weights.len() != self.vocab.len() {
            return Err(Error::invalid("weight dimension differs from n-gram vocabulary size"));
        }
        if self.weights.iter().any(|w| !w.is_finite()) || !self.bias.is_finite() {
            return Err(Error::invalid("non-finite logistic regression weights"));
        }
        Ok(self)
    }

    fn score_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> f64 {
        let grams = extract_ngrams(tokens, self.config.n_range.0, self.config.n_range.1);
        tfidf_vectorize(&grams, &self.vocab).dot_dense(&self.weights) + self.bias
    }
}

impl Predictor for LogRegModel {
    fn predict_log_odds(&self, text: &str) -> Result<f64> {
        Ok(self.score_tokens(&tokenize(text, &self.tokenizer)))
    }

    fn predict_tokens(&self, tokens: &[&str]) -> Result<f64> {
        Ok(self.score_tokens(tokens))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synthesize_corpus, Domain, GeneratorConfig, Segment};
    use crate::models::classify;

    fn corpus(docs: &[(&str, u8)]) -> Corpus {
        Corpus::from_segments(
            docs.iter()
                .enumerate()
                .map(|(i, (t, l))| Segment::new(format!("d{i}"), *t, Some(*l), Domain::Synthetic))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn separable_training_f1() {
        let c = synthesize_corpus(&GeneratorConfig::default(), 2).unwrap();
        let cfg = LogRegConfig {
            penalty: Penalty::None,
            max_iter: 500,
            ..Default::default()
        };
        let m = train_ngram_logreg(&c, &cfg).unwrap();
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for s in &c {
            let p = classify(&m, &s.text, 0.0).unwrap();
            match (p, s.label.unwrap()) {
                (1, 1) => tp += 1,
                (1, 0) => fp += 1,
                (0, 1) => fn_ += 1,
                _ => {}
            }
        }
        let f1 = 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64;
        assert!(f1 >= 0.99, "{f1} {:?}", m.report);
    }

    #[test]
    fn two_points_without_penalty() {
        let c = corpus(&[("hurt", 1), ("calm", 0)]);
        let cfg = LogRegConfig {
            n_range: (1, 1),
            penalty: Penalty::None,
            max_iter: 200,
            ..Default::default()
        };
        let m = train_ngram_logreg(&c, &cfg).unwrap();
        let pos = m.predict_log_odds("hurt").unwrap();
        let neg = m.predict_log_odds("calm").unwrap();
        assert!(pos > 0.0 && neg < 0.0);
        // symmetric data, so the boundary sits midway
        assert!((pos + neg).abs() < 1e-9);
    }

    #[test]
    fn gradient_vanishes_at_optimum_by_finite_differences() {
        let cfg = GeneratorConfig {
            n_docs: 20,
            positive_rate: 0.4,
            noise_vocab_size: 15,
            doc_length: 6,
            ..Default::default()
        };
        let c = synthesize_corpus(&cfg, 8).unwrap();
        let lr = LogRegConfig {
            c: 1.0,
            ..Default::default()
        };
        let m = train_ngram_logreg(&c, &lr).unwrap();
        assert!(m.report.converged);

        let tok = TokenizerConfig::default();
        let rows: Vec<FeatureVector> = c
            .iter()
            .map(|s| tfidf_vectorize(&ngram_tokens(&s.text, &lr, &tok), &m.vocab))
            .collect();
        let labels: Vec<f64> = c.iter().map(|s| f64::from(s.label.unwrap())).collect();
        let obj = LogisticObjective {
            rows: &rows,
            labels: &labels,
            lambda: 1.0,
        };
        // central differences, independent of the analytic gradient
        let h = 1e-6;
        let mut norm2 = 0.0;
        for i in 0..=m.weights.len() {
            let mut wp = m.weights.clone();
            let mut wm = m.weights.clone();
            let (mut bp, mut bm) = (m.bias, m.bias);
            if i < m.weights.len() {
                wp[i] += h;
                wm[i] -= h;
            } else {
                bp += h;
                bm -= h;
            }
            let d = (obj.loss(&wp, bp) - obj.loss(&wm, bm)) / (2.0 * h);
            norm2 += d * d;
        }
        assert!(norm2.sqrt() < 1e-5, "{}", norm2.sqrt());
    }

    #[test]
    fn loss_monotone_non_increasing() {
        let c = synthesize_corpus(&GeneratorConfig::default(), 4).unwrap();
        let m = train_ngram_logreg(&c, &LogRegConfig::default()).unwrap();
        for w in m.report.loss_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn deterministic_and_pure() {
        let c = synthesize_corpus(&GeneratorConfig::default(), 6).unwrap();
        let a = train_ngram_logreg(&c, &LogRegConfig::default()).unwrap();
        let b = train_ngram_logreg(&c, &LogRegConfig::default()).unwrap();
        assert_eq!(a.weights, b.weights);
        let t = &c.segments()[0].text;
        assert_eq!(a.predict_log_odds(t).unwrap().to_bits(), a.predict_log_odds(t).unwrap().to_bits());
    }
}
