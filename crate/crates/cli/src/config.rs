use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracekit::corpus::{Domain, GeneratorConfig};
use tracekit::eval::{CrossDomainConfig, CvConfig, SearchSpace};
use tracekit::explain::{ConceptConfig, ShapOptions, SlalomConfig};
use tracekit::models::{FfnnConfig, LogRegConfig};
use tracekit::remote::{ApiPredictorConfig, BridgeEndpoint};
use tracekit::rng::derive_seed;

use crate::InputError;

/// Everything a run depends on. Loaded from a JSON or TOML file, then
/// overridden by command-line flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed. [`RunConfig::derive_seeds`] overwrites every per-stage
    /// seed with a substream of it.
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelSpec,
    pub ingest: IngestConfig,
    pub eval: CvConfig,
    pub crosstest: CrossDomainConfig,
    pub search: Option<SearchSpace>,
    pub explain: ExplainConfig,
    pub agree: AgreeConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Training corpus (JSONL), also the corpus for cross-validation and search.
    pub train: Option<PathBuf>,
    /// Held-out corpus for evaluating a saved model.
    pub test: Option<PathBuf>,
    /// Named corpora for cross-domain testing.
    pub domains: BTreeMap<String, PathBuf>,
    /// Saved model used by eval and explain.
    pub model_file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    NaiveBayes {
        #[serde(default = "one")]
        alpha: f64,
        #[serde(default = "yes")]
        use_counts: bool,
    },
    LogReg(LogRegConfig),
    FeedForward(FfnnConfig),
    Api(ApiPredictorConfig),
    Bridge(BridgeEndpoint),
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::NaiveBayes {
            alpha: 1.0,
            use_counts: true,
        }
    }
}

impl ModelSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelSpec::NaiveBayes { .. } => "naive_bayes",
            ModelSpec::LogReg(_) => "log_reg",
            ModelSpec::FeedForward(_) => "feed_forward",
            ModelSpec::Api(_) => "api",
            ModelSpec::Bridge(_) => "bridge",
        }
    }

    pub fn from_kind(kind: &str) -> anyhow::Result<Self> {
        Ok(match kind {
            "naive_bayes" | "nb" => ModelSpec::default(),
            "log_reg" | "logreg" => ModelSpec::LogReg(LogRegConfig::default()),
            "feed_forward" | "ffnn" => ModelSpec::FeedForward(FfnnConfig::default()),
            "api" => ModelSpec::Api(ApiPredictorConfig::default()),
            other => return Err(InputError::new(format!("unknown model kind {other:?}")).into()),
        })
    }

    pub fn is_remote(&self) -> bool {
        matches!(self, ModelSpec::Api(_) | ModelSpec::Bridge(_))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum InputFormat {
    #[default]
    Jsonl,
    /// Columns `id,text,label` and optionally `domain`.
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub input: Option<PathBuf>,
    pub format: InputFormat,
    pub max_tokens: usize,
    /// Domain assigned to CSV rows without a domain column.
    pub domain: Option<Domain>,
    /// Generate a synthetic corpus instead of reading `input`.
    pub synthetic: Option<GeneratorConfig>,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            input: None,
            format: InputFormat::Jsonl,
            max_tokens: tracekit::corpus::DEFAULT_MAX_TOKENS,
            domain: None,
            synthetic: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    /// Number of leading corpus segments explained by SHAP.
    pub instances: usize,
    pub shap: ShapOptions,
    pub slalom: SlalomConfig,
    /// Most frequent tokens (by document frequency) fitted by SLALOM.
    pub slalom_vocab: usize,
    pub concepts: ConceptConfig,
    /// Share of the corpus held out for concept completeness and salient
    /// snippets.
    pub holdout_fraction: f64,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            instances: 5,
            shap: ShapOptions::default(),
            slalom: SlalomConfig::default(),
            slalom_vocab: 1000,
            concepts: ConceptConfig::default(),
            holdout_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgreeConfig {
    pub annotations: Option<PathBuf>,
    pub expert: Option<PathBuf>,
    /// Two annotator ids compared with Cohen's kappa.
    pub kappa_raters: Option<[String; 2]>,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| InputError::new(format!("cannot read config {}: {e}", path.display())))?;
        let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
        let parsed = if is_toml {
            toml::from_str(&text).map_err(|e| InputError::new(format!("invalid config {}: {e}", path.display())))
        } else {
            serde_json::from_str(&text).map_err(|e| InputError::new(format!("invalid config {}: {e}", path.display())))
        };
        Ok(parsed?)
    }

    /// Points every per-stage seed at its own substream of the master seed,
    /// so one number reproduces the whole run.
    pub fn derive_seeds(&mut self) {
        let master = self.seed;
        let s = |tag| derive_seed(master, tag);
        self.eval.seed = s(1);
        self.crosstest.seed = s(2);
        self.explain.shap.seed = s(3);
        self.explain.slalom.seed = s(4);
        self.explain.concepts.seed = s(5);
        if let ModelSpec::FeedForward(c) = &mut self.model {
            c.seed = s(6);
        }
    }

    /// SHA-256 over the command name and the canonical JSON of the config.
    pub fn hash(&self, command: &str) -> anyhow::Result<String> {
        let canonical = serde_json::to_string(&serde_json::to_value(self).context("serializing config")?)?;
        let mut h = Sha256::new();
        h.update(command.as_bytes());
        h.update([0u8]);
        h.update(canonical.as_bytes());
        Ok(hex::encode(h.finalize()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_json_and_toml() {
        let c = RunConfig::default();
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&json).unwrap(), c);
        let toml_text = "seed = 3\n[model]\nkind = \"naive_bayes\"\nalpha = 0.5\n";
        let t: RunConfig = toml::from_str(toml_text).unwrap();
        assert_eq!(t.seed, 3);
        assert_eq!(t.model, ModelSpec::NaiveBayes { alpha: 0.5, use_counts: true });
    }

    #[test]
    fn stage_seeds_follow_the_master_seed() {
        let mut a = RunConfig { seed: 5, ..Default::default() };
        a.eval.seed = 99;
        a.derive_seeds();
        let mut b = RunConfig { seed: 5, ..Default::default() };
        b.derive_seeds();
        assert_eq!(a, b);
        assert_ne!(a.eval.seed, a.crosstest.seed);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sed": 1}"#).is_err());
    }

    #[test]
    fn hash_depends_on_command_and_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.seed = 1;
        assert_ne!(a.hash("eval").unwrap(), b.hash("eval").unwrap());
        assert_ne!(a.hash("eval").unwrap(), a.hash("train").unwrap());
        assert_eq!(a.hash("eval").unwrap(), a.clone().hash("eval").unwrap());
    }
}
