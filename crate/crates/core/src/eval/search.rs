use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::metrics::{evaluate, Metric};
use crate::corpus::{stratified_holdout, Corpus};
use crate::error::{Error, Result};
use crate::models::Predictor;
use crate::rng::{derive_seed, substream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ParamDomain {
    Categorical { values: Vec<Value> },
    /// Inclusive on both ends.
    IntRange { low: i64, high: i64 },
    LogUniform { low: f64, high: f64 },
}

impl ParamDomain {
    fn validate(&self, name: &str) -> Result<()> {
        let ok = match self {
            ParamDomain::Categorical { values } => !values.is_empty(),
            ParamDomain::IntRange { low, high } => low <= high,
            ParamDomain::LogUniform { low, high } => *low > 0.0 && low <= high && high.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("empty or invalid domain for parameter {name:?}")))
        }
    }

    fn sample(&self, r: &mut impl Rng) -> Value {
        match self {
            ParamDomain::Categorical { values } => values[r.gen_range(0..values.len())].clone(),
            ParamDomain::IntRange { low, high } => Value::from(r.gen_range(*low..=*high)),
            ParamDomain::LogUniform { low, high } => {
                let (a, b) = (low.ln(), high.ln());
                Value::from(if a == b { *low } else { r.gen_range(a..b).exp() })
            }
        }
    }
}

pub type Params = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub params: BTreeMap<String, ParamDomain>,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default = "default_objective")]
    pub objective: Metric,
    /// Share of the corpus held out for scoring trials.
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
}

fn default_budget() -> usize {
    50
}

fn default_objective() -> Metric {
    Metric::Auroc
}

fn default_validation_fraction() -> f64 {
    0.2
}

impl SearchSpace {
    pub fn new(params: BTreeMap<String, ParamDomain>) -> Self {
        SearchSpace {
            params,
            budget: default_budget(),
            objective: default_objective(),
            validation_fraction: default_validation_fraction(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::invalid("search budget must be at least 1"));
        }
        self.params.iter().try_for_each(|(k, d)| d.validate(k))
    }

    /// The parameters of trial `index`; each trial has its own random
    /// substream, so the draw does not depend on evaluation order.
    pub fn sample(&self, seed: u64, index: usize) -> Params {
        let mut r = substream(seed, index as u64);
        self.params.iter().map(|(k, d)| (k.clone(), d.sample(&mut r))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub params: Params,
    pub seed: u64,
    pub objective: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best_index: usize,
    pub best_params: Params,
    pub best_objective: f64,
    pub trials: Vec<Trial>,
}

impl SearchResult {
    /// One JSON object per trial, in trial order.
    pub fn trial_log_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for t in &self.trials {
            out.push_str(&serde_json::to_string(t)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Seeded random search.
///
/// The corpus is split once into a training and a validation part; every
/// trial trains through `factory` on the training part and is scored by
/// the space's objective on the validation part. The first trial with the
/// highest score wins. Failed trials are logged and skipped.
pub fn hyperparameter_search<F, P>(factory: F, space: &SearchSpace, corpus: &Corpus, seed: u64) -> Result<SearchResult>
where
    F: Fn(&Params, &Corpus, u64) -> Result<P> + Sync,
    P: Predictor,
{
    space.validate()?;
    let split = stratified_holdout(corpus, space.validation_fraction, derive_seed(seed, u64::MAX))?;
    let (train, valid) = (corpus.subset(&split.train), corpus.subset(&split.test));
    let trials: Vec<Trial> = (0..space.budget)
        .into_par_iter()
        .map(|index| {
            let params = space.sample(seed, index);
            let trial_seed = derive_seed(seed, 1 << 32 | index as u64);
            let score = factory(&params, &train, trial_seed)
                .and_then(|model| evaluate(&model, &valid))
                .map(|m| m.get(space.objective))
                .and_then(|v| if v.is_finite() { Ok(v) } else { Err(Error::invalid("objective is not finite")) });
            let (objective, error) = match score {
                Ok(v) => (Some(v), None),
                Err(e) => (None, Some(e.to_string())),
            };
            Trial {
                index,
                params,
                seed: trial_seed,
                objective,
                error,
            }
        })
        .collect();
    let best = trials
        .iter()
        .filter_map(|t| t.objective.map(|v| (t.index, v)))
        .fold(None, |best: Option<(usize, f64)>, (i, v)| match best {
            Some((_, b)) if b >= v => best,
            _ => Some((i, v)),
        });
    match best {
        Some((i, v)) => Ok(SearchResult {
            best_index: i,
            best_params: trials[i].params.clone(),
            best_objective: v,
            trials,
        }),
        None => Err(Error::AllTrialsFailed(
            trials.into_iter().map(|t| format!("trial {}: {}", t.index, t.error.unwrap_or_default())).collect(),
        )),
    }
}

/// Reads a parameter as `f64`, accepting integers too.
pub fn param_f64(params: &Params, name: &str) -> Result<f64> {
    params
        .get(name)
        .and_then(Value::as_f64)
        .ok_or_else(|| Error::invalid(format!("parameter {name:?} missing or not numeric")))
}
