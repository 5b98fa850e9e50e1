use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, Domain, Segment};
use crate::error::{Error, Result};
use crate::rng;

/// Parameters of the synthetic corpus generator.
///
/// Documents are `doc_length` tokens drawn uniformly from a noise
/// vocabulary `<noise_prefix>0000..`. Positive documents then get between one
/// and `max_signals` positions overwritten with tokens drawn from
/// `signal_tokens`; negative documents never contain a signal token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n_docs: usize,
    pub positive_rate: f64,
    pub signal_tokens: Vec<String>,
    pub noise_vocab_size: usize,
    pub doc_length: usize,
    pub max_signals: usize,
    pub domain: Domain,
    pub id_prefix: String,
    pub noise_prefix: String,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_docs: 200,
            positive_rate: 0.3,
            signal_tokens: vec!["wounded".into()],
            noise_vocab_size: 200,
            doc_length: 20,
            max_signals: 2,
            domain: Domain::Synthetic,
            id_prefix: "syn".into(),
            noise_prefix: "w".into(),
        }
    }
}

impl GeneratorConfig {
    pub fn noise_token(&self, i: usize) -> String {
        format!("{}{i:04}", self.noise_prefix)
    }

    fn validate(&self) -> Result<()> {
        if !(self.positive_rate > 0.0 && self.positive_rate < 1.0) {
            return Err(Error::invalid("positive_rate must lie in (0, 1)"));
        }
        if self.signal_tokens.is_empty() || self.noise_vocab_size == 0 || self.doc_length == 0 {
            return Err(Error::invalid("signal_tokens, noise_vocab_size and doc_length must be non-empty"));
        }
        for s in &self.signal_tokens {
            let normalized = super::tokenize(s, &Default::default());
            if normalized.len() != 1 || &normalized[0] != s {
                return Err(Error::invalid(format!("signal token {s:?} is not a single normalized token")));
            }
            if s.starts_with(&self.noise_prefix) && s[self.noise_prefix.len()..].chars().all(|c| c.is_ascii_digit()) {
                return Err(Error::invalid(format!("signal token {s:?} collides with the noise vocabulary")));
            }
        }
        Ok(())
    }
}

/// Generates a labeled corpus that is deterministic under `seed`.
pub fn synthesize_corpus(config: &GeneratorConfig, seed: u64) -> Result<Corpus> {
    config.validate()?;
    let mut r = rng::rng(seed);
    let max_signals = config.max_signals.clamp(1, config.doc_length);
    let segments = (0..config.n_docs)
        .map(|i| {
            let label = r.gen_bool(config.positive_rate);
            let mut tokens: Vec<String> = (0..config.doc_length)
                .map(|_| config.noise_token(r.gen_range(0..config.noise_vocab_size)))
                .collect();
            if label {
                let k = r.gen_range(1..=max_signals);
                let mut positions: Vec<usize> = (0..config.doc_length).collect();
                positions.shuffle(&mut r);
                for &p in &positions[..k] {
                    tokens[p] = config.signal_tokens.choose(&mut r).expect("non-empty").clone();
                }
            }
            Segment::new(
                format!("{}-{i:05}", config.id_prefix),
                tokens.join(" "),
                Some(label as u8),
                config.domain.clone(),
            )
        })
        .collect();
    Corpus::new(segments, config.domain.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_within_binomial_bound() {
        let cfg = GeneratorConfig {
            n_docs: 1000,
            positive_rate: 0.5,
            ..Default::default()
        };
        let c = synthesize_corpus(&cfg, 11).unwrap();
        let rate = c.class_balance().unwrap();
        assert!((0.45..=0.55).contains(&rate), "{rate}");
    }

    #[test]
    fn signal_only_in_positives() {
        let c = synthesize_corpus(&GeneratorConfig::default(), 5).unwrap();
        for s in &c {
            let has = s.tokens().iter().any(|t| t == "wounded");
            assert_eq!(has, s.label == Some(1), "{}", s.text);
        }
    }

    #[test]
    fn deterministic() {
        let cfg = GeneratorConfig::default();
        assert_eq!(synthesize_corpus(&cfg, 1).unwrap(), synthesize_corpus(&cfg, 1).unwrap());
    }

    #[test]
    fn invalid_rate_rejected() {
        let cfg = GeneratorConfig {
            positive_rate: 1.0,
            ..Default::default()
        };
        assert!(synthesize_corpus(&cfg, 0).is_err());
        let clash = GeneratorConfig {
            signal_tokens: vec!["w0001".into()],
            ..Default::default()
        };
        assert!(synthesize_corpus(&clash, 0).is_err());
    }
}
