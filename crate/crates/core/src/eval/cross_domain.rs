use std::collections::HashSet;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cv::{MetricsReport, CSV_HEADER};
use super::metrics::{evaluate, Metric, MetricValues};
use crate::corpus::{stratified_holdout, Corpus};
use crate::error::{Error, Result};
use crate::models::Predictor;
use crate::rng::derive_seed;

pub const COMBINED_DOMAIN: &str = "All";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrossDomainConfig {
    pub runs: usize,
    pub test_fraction: f64,
    pub seed: u64,
    /// Adds a training row for the concatenation of all training parts.
    pub include_combined: bool,
}

impl Default for CrossDomainConfig {
    fn default() -> Self {
        CrossDomainConfig {
            runs: 5,
            test_fraction: 0.2,
            seed: 0,
            include_combined: true,
        }
    }
}

/// Train-domain rows by test-domain columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossDomainMatrix {
    pub train_domains: Vec<String>,
    pub test_domains: Vec<String>,
    /// `cells[row][col]`; each report's `model` is the training domain and
    /// `dataset` the test domain.
    pub cells: Vec<Vec<MetricsReport>>,
}

impl CrossDomainMatrix {
    pub fn cell(&self, train: &str, test: &str) -> Option<&MetricsReport> {
        let r = self.train_domains.iter().position(|d| d == train)?;
        let c = self.test_domains.iter().position(|d| d == test)?;
        Some(&self.cells[r][c])
    }

    pub fn auroc(&self, row: usize, col: usize) -> f64 {
        self.cells[row][col].auroc.mean
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("train,test,{CSV_HEADER}\n");
        for (r, row) in self.cells.iter().enumerate() {
            for (c, cell) in row.iter().enumerate() {
                for m in Metric::ALL {
                    let s = cell.get(m);
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{},{}",
                        self.train_domains[r],
                        self.test_domains[c],
                        m.name(),
                        s.mean,
                        s.std_error,
                        s.n_runs
                    );
                }
            }
        }
        out
    }

    /// Fixed-width table of one metric's means.
    pub fn table(&self, metric: Metric) -> String {
        let width = self.test_domains.iter().chain(&self.train_domains).map(String::len).max().unwrap_or(0).max(6);
        let mut out = format!("{:width$}", "train\\test");
        for d in &self.test_domains {
            let _ = write!(out, "  {d:>width$}");
        }
        out.push('\n');
        for (r, row) in self.cells.iter().enumerate() {
            let _ = write!(out, "{:width$}", self.train_domains[r]);
            for cell in row {
                let _ = write!(out, "  {:>width$.3}", cell.get(metric).mean);
            }
            out.push('\n');
        }
        out
    }
}

fn check_disjoint(train: &Corpus, test: &Corpus) -> Result<()> {
    let ids: HashSet<&str> = train.ids();
    match test.iter().find(|s| ids.contains(s.id.as_str())) {
        Some(s) => Err(Error::Overlap(s.id.clone())),
        None => Ok(()),
    }
}

/// Trains one model per domain (and optionally on all domains together),
/// then scores every model on every domain's held-out part.
///
/// Each run draws a fresh stratified holdout per domain. In-domain cells
/// therefore see only held-out segments. Segment ids must be unique across
/// domains, and every cell is checked again for shared ids before
/// evaluation.
pub fn cross_domain<F, P>(trainer: F, domains: &[(String, Corpus)], config: &CrossDomainConfig) -> Result<CrossDomainMatrix>
where
    F: Fn(&Corpus, u64) -> Result<P> + Sync,
    P: Predictor,
{
    if domains.len() < 2 {
        return Err(Error::invalid("cross-domain testing needs at least two domains"));
    }
    if config.runs == 0 {
        return Err(Error::invalid("runs must be at least 1"));
    }
    let mut train_domains: Vec<String> = domains.iter().map(|(n, _)| n.clone()).collect();
    let test_domains = train_domains.clone();
    if HashSet::<&String>::from_iter(&test_domains).len() != test_domains.len() {
        return Err(Error::invalid("domain names must be unique"));
    }
    // A segment in two domains would leak between some train and test part.
    let mut seen: HashSet<&str> = HashSet::new();
    for (_, corpus) in domains {
        if let Some(s) = corpus.iter().find(|s| !seen.insert(s.id.as_str())) {
            return Err(Error::Overlap(s.id.clone()));
        }
    }
    if config.include_combined {
        train_domains.push(COMBINED_DOMAIN.to_string());
    }

    // splits[run][domain] = (train, test)
    let splits: Vec<Vec<(Corpus, Corpus)>> = (0..config.runs)
        .map(|r| {
            domains
                .iter()
                .enumerate()
                .map(|(d, (_, corpus))| {
                    let f = stratified_holdout(corpus, config.test_fraction, derive_seed(config.seed, (r as u64) << 16 | d as u64))?;
                    Ok((corpus.subset(&f.train), corpus.subset(&f.test)))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let tasks: Vec<(usize, usize)> = (0..config.runs).flat_map(|r| (0..train_domains.len()).map(move |t| (r, t))).collect();
    let results: Vec<Vec<MetricValues>> = tasks
        .par_iter()
        .map(|&(r, t)| {
            let train = if t < domains.len() {
                splits[r][t].0.clone()
            } else {
                Corpus::concat(splits[r].iter().map(|(tr, _)| tr))?
            };
            for (_, test) in &splits[r] {
                check_disjoint(&train, test)?;
            }
            let seed = derive_seed(config.seed, 1 << 40 | (r as u64) << 16 | t as u64);
            let model = trainer(&train, seed).map_err(|e| Error::Fold {
                fold: r,
                source: Box::new(e),
            })?;
            splits[r].iter().map(|(_, test)| evaluate(&model, test)).collect()
        })
        .collect::<Result<_>>()?;

    let cells = (0..train_domains.len())
        .map(|t| {
            (0..test_domains.len())
                .map(|c| {
                    let runs = (0..config.runs).map(|r| results[r * train_domains.len() + t][c]).collect();
                    MetricsReport::from_runs(test_domains[c].clone(), train_domains[t].clone(), runs)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(CrossDomainMatrix {
        train_domains,
        test_domains,
        cells,
    })
}
