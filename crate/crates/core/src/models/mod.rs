//! Classifiers and the [`Predictor`] contract consumed by explanation and
//! evaluation code.
//!
//! Every predictor maps a text to the log-odds of the trauma class,
//! `ln(P(trauma) / P(no trauma))`. Local models accept pre-tokenized input
//! through [`Predictor::predict_tokens`], which is what the explainers call
//! when they remove tokens from a sequence.

pub mod container;
mod ffnn;
mod logreg;
mod naive_bayes;

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ffnn::{train_ffnn, FeedForwardModel, FfnnConfig, Layer};
pub use logreg::{train_ngram_logreg, LogRegConfig, LogRegModel, Penalty, TrainingReport};
pub use naive_bayes::{train_naive_bayes, NaiveBayesModel};

/// Black-box scoring contract.
pub trait Predictor: Send + Sync {
    fn predict_log_odds(&self, text: &str) -> Result<f64>;

    /// Scores an already tokenized sequence. The default joins the tokens
    /// with spaces, which the crate tokenizer maps back to the same tokens.
    fn predict_tokens(&self, tokens: &[&str]) -> Result<f64> {
        self.predict_log_odds(&tokens.join(" "))
    }

    fn predict_batch(&self, texts: &[String]) -> Result<Vec<f64>> {
        texts.iter().map(|t| self.predict_log_odds(t)).collect()
    }

    /// Dimension of [`Predictor::latent`], `None` when latents are not exposed.
    fn latent_dim(&self) -> Option<usize> {
        None
    }

    fn latent(&self, _text: &str) -> Result<Vec<f64>> {
        Err(Error::Unsupported("predictor does not expose latent vectors".into()))
    }

    fn latent_tokens(&self, tokens: &[&str]) -> Result<Vec<f64>> {
        self.latent(&tokens.join(" "))
    }

    fn latent_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        texts.iter().map(|t| self.latent(t)).collect()
    }
}

macro_rules! forward_predictor {
    ($($ty:ty),*) => {$(
        impl<P: Predictor + ?Sized> Predictor for $ty {
            fn predict_log_odds(&self, text: &str) -> Result<f64> {
                (**self).predict_log_odds(text)
            }
            fn predict_tokens(&self, tokens: &[&str]) -> Result<f64> {
                (**self).predict_tokens(tokens)
            }
            fn predict_batch(&self, texts: &[String]) -> Result<Vec<f64>> {
                (**self).predict_batch(texts)
            }
            fn latent_dim(&self) -> Option<usize> {
                (**self).latent_dim()
            }
            fn latent(&self, text: &str) -> Result<Vec<f64>> {
                (**self).latent(text)
            }
            fn latent_tokens(&self, tokens: &[&str]) -> Result<Vec<f64>> {
                (**self).latent_tokens(tokens)
            }
            fn latent_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
                (**self).latent_batch(texts)
            }
        }
    )*};
}

forward_predictor!(&P, Box<P>, Arc<P>);

/// Hard label: 1 iff the log-odds exceed `threshold_log_odds` (ties go to 0).
pub fn classify<P: Predictor + ?Sized>(predictor: &P, text: &str, threshold_log_odds: f64) -> Result<u8> {
    Ok((predictor.predict_log_odds(text)? > threshold_log_odds) as u8)
}

/// Any locally trained model, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    NaiveBayes(NaiveBayesModel),
    LogReg(LogRegModel),
    FeedForward(FeedForwardModel),
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum JsonModel {
    NaiveBayes(NaiveBayesModel),
    LogReg(LogRegModel),
}

#[derive(Serialize, Deserialize)]
struct JsonEnvelope {
    format: String,
    version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<serde_json::Value>,
    #[serde(flatten)]
    model: JsonModel,
}

pub const MODEL_FORMAT: &str = "tracekit-model";
pub const MODEL_VERSION: u32 = 1;

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::NaiveBayes(_) => "naive_bayes",
            Model::LogReg(_) => "log_reg",
            Model::FeedForward(_) => "feed_forward",
        }
    }

    /// Serialized bytes: versioned JSON for the linear models, the binary
    /// tensor container for the feed-forward network.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.to_bytes_with(None)
    }

    /// Like [`Model::to_bytes`], recording `provenance` (for example a run's
    /// config hash and seed) in the header. Loading ignores it.
    pub fn to_bytes_with(&self, provenance: Option<serde_json::Value>) -> Result<Vec<u8>> {
        let json = |model| -> Result<Vec<u8>> {
            let mut v = serde_json::to_vec_pretty(&JsonEnvelope {
                format: MODEL_FORMAT.into(),
                version: MODEL_VERSION,
                provenance: provenance.clone(),
                model,
            })?;
            v.push(b'\n');
            Ok(v)
        };
        match self {
            Model::NaiveBayes(m) => json(JsonModel::NaiveBayes(m.clone())),
            Model::LogReg(m) => json(JsonModel::LogReg(m.clone())),
            Model::FeedForward(m) => m.to_container(provenance.clone()),
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
        if container::is_container(bytes) {
            return FeedForwardModel::from_container(bytes).map(Model::FeedForward);
        }
        let env: JsonEnvelope = serde_json::from_slice(bytes)?;
        if env.format != MODEL_FORMAT || env.version != MODEL_VERSION {
            return Err(Error::invalid(format!(
                "unsupported model format {:?} version {}",
                env.format, env.version
            )));
        }
        Ok(match env.model {
            JsonModel::NaiveBayes(m) => Model::NaiveBayes(m),
            JsonModel::LogReg(m) => Model::LogReg(m.rebuild()?),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Model> {
        Model::from_bytes(&std::fs::read(path)?)
    }

    fn inner(&self) -> &dyn Predictor {
        match self {
            Model::NaiveBayes(m) => m,
            Model::LogReg(m) => m,
            Model::FeedForward(m) => m,
        }
    }
}

impl Predictor for Model {
    fn predict_log_odds(&self, text: &str) -> Result<f64> {
        self.inner().predict_log_odds(text)
    }
    fn predict_tokens(&self, tokens: &[&str]) -> Result<f64> {
        self.inner().predict_tokens(tokens)
    }
    fn latent_dim(&self) -> Option<usize> {
        self.inner().latent_dim()
    }
    fn latent(&self, text: &str) -> Result<Vec<f64>> {
        self.inner().latent(text)
    }
    fn latent_tokens(&self, tokens: &[&str]) -> Result<Vec<f64>> {
        self.inner().latent_tokens(tokens)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(f64);

    impl Predictor for Fixed {
        fn predict_log_odds(&self, _text: &str) -> Result<f64> {
            Ok(self.0)
        }
    }

    #[test]
    fn classify_threshold_is_strict() {
        assert_eq!(classify(&Fixed(2.0), "x", 0.0).unwrap(), 1);
        assert_eq!(classify(&Fixed(0.0), "x", 0.0).unwrap(), 0);
        assert_eq!(classify(&Fixed(-0.1), "x", -0.2).unwrap(), 1);
        let boxed: Box<dyn Predictor> = Box::new(Fixed(1.0));
        assert_eq!(classify(&boxed, "x", 0.0).unwrap(), 1);
    }

    #[test]
    fn latent_unsupported_by_default() {
        assert!(matches!(Fixed(0.0).latent("x"), Err(Error::Unsupported(_))));
        assert_eq!(Fixed(0.0).latent_dim(), None);
    }
}
