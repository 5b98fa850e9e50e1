use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{evaluate, Metric, MetricValues};
use crate::corpus::{stratified_holdout, stratified_splits, Corpus, FoldIndices};
use crate::error::{Error, Result};
use crate::models::Predictor;
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Independent stratified train/test splits, one per run.
    #[default]
    RandomSplits,
    /// One stratified k-fold partition, one fold per run.
    Folds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub runs: usize,
    pub mode: SplitMode,
    /// Held-out share for random splits.
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            runs: 5,
            mode: SplitMode::RandomSplits,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

impl CvConfig {
    /// Train/test index sets, one per run.
    pub fn splits(&self, corpus: &Corpus) -> Result<Vec<FoldIndices>> {
        if self.runs == 0 {
            return Err(Error::invalid("runs must be at least 1"));
        }
        match self.mode {
            SplitMode::Folds => stratified_splits(corpus, self.runs, self.seed),
            SplitMode::RandomSplits => (0..self.runs)
                .map(|r| stratified_holdout(corpus, self.test_fraction, derive_seed(self.seed, r as u64)))
                .collect(),
        }
    }
}

/// Mean and standard error (`sd / sqrt(n)`) of one metric across runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std_error: f64,
    pub n_runs: usize,
}

impl MetricSummary {
    /// Sample standard deviation over `sqrt(n)`; zero for a single run.
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std_error = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        MetricSummary { mean, std_error, n_runs: n }
    }
}

impl std::fmt::Display for MetricSummary {
    /// `0.53 ± 0.09`; the precision flag overrides the two default digits.
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let p = f.precision().unwrap_or(2);
        write!(f, "{:.p$} \u{b1} {:.p$}", self.mean, self.std_error)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dataset: String,
    pub model: String,
    pub f1_binary: MetricSummary,
    pub auroc: MetricSummary,
    pub accuracy: MetricSummary,
    pub precision: MetricSummary,
    pub recall: MetricSummary,
    /// Per-run values in run order.
    pub runs: Vec<MetricValues>,
}

pub(crate) const CSV_HEADER: &str = "metric,mean,std_error,n_runs";

impl MetricsReport {
    pub fn from_runs(dataset: impl Into<String>, model: impl Into<String>, runs: Vec<MetricValues>) -> Result<Self> {
        if runs.is_empty() {
            return Err(Error::invalid("a report needs at least one run"));
        }
        let summary = |m: Metric| MetricSummary::from_values(&runs.iter().map(|r| r.get(m)).collect::<Vec<_>>());
        Ok(MetricsReport {
            dataset: dataset.into(),
            model: model.into(),
            f1_binary: summary(Metric::F1Binary),
            auroc: summary(Metric::Auroc),
            accuracy: summary(Metric::Accuracy),
            precision: summary(Metric::Precision),
            recall: summary(Metric::Recall),
            runs,
        })
    }

    pub fn get(&self, m: Metric) -> &MetricSummary {
        match m {
            Metric::F1Binary => &self.f1_binary,
            Metric::Auroc => &self.auroc,
            Metric::Accuracy => &self.accuracy,
            Metric::Precision => &self.precision,
            Metric::Recall => &self.recall,
        }
    }

    pub fn with_model(mut self, model: impl Into<String>) -> Self {
        self.model = model.into();
        self
    }

    /// `dataset,model,metric,mean,std_error,n_runs` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut out = format!("dataset,model,{CSV_HEADER}\n");
        for m in Metric::ALL {
            let s = self.get(m);
            out.push_str(&format!("{},{},{},{},{},{}\n", self.dataset, self.model, m.name(), s.mean, s.std_error, s.n_runs));
        }
        out
    }
}

/// Trains once per run on the run's training part and evaluates on its
/// held-out part.
///
/// The trainer receives the training corpus and a seed derived from the
/// master seed and the run index. Runs execute in parallel; the report
/// lists them in run order regardless of scheduling.
pub fn cross_validate<F, P>(trainer: F, corpus: &Corpus, config: &CvConfig) -> Result<MetricsReport>
where
    F: Fn(&Corpus, u64) -> Result<P> + Sync,
    P: Predictor,
{
    let splits = config.splits(corpus)?;
    let runs = splits
        .par_iter()
        .enumerate()
        .map(|(i, fold)| {
            let wrap = |e| Error::Fold {
                fold: i,
                source: Box::new(e),
            };
            let model = trainer(&corpus.subset(&fold.train), derive_seed(config.seed, 1 << 32 | i as u64)).map_err(wrap)?;
            evaluate(&model, &corpus.subset(&fold.test)).map_err(wrap)
        })
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::from_runs(corpus.domain().to_string(), "", runs)
}
