use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::models::Predictor;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch(a, b));
    }
    if a == 0 {
        return Err(Error::invalid("metrics need at least one item"));
    }
    Ok(())
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Confusion {
    /// Counts with label 1 as the positive class; any nonzero value counts
    /// as 1.
    pub fn from_predictions(predictions: &[u8], labels: &[u8]) -> Result<Self> {
        check_lengths(predictions.len(), labels.len())?;
        let mut c = Confusion::default();
        for (&p, &y) in predictions.iter().zip(labels) {
            match (p != 0, y != 0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `2 TP / (2 TP + FP + FN)`, zero when nothing is positive.
    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }
}

pub fn binary_f1(predictions: &[u8], labels: &[u8]) -> Result<f64> {
    Ok(Confusion::from_predictions(predictions, labels)?.f1())
}

pub fn accuracy(predictions: &[u8], labels: &[u8]) -> Result<f64> {
    Ok(Confusion::from_predictions(predictions, labels)?.accuracy())
}

pub fn precision(predictions: &[u8], labels: &[u8]) -> Result<f64> {
    Ok(Confusion::from_predictions(predictions, labels)?.precision())
}

pub fn recall(predictions: &[u8], labels: &[u8]) -> Result<f64> {
    Ok(Confusion::from_predictions(predictions, labels)?.recall())
}

/// Area under the ROC curve as the Mann-Whitney statistic
/// `P(s_pos > s_neg) + P(s_pos = s_neg) / 2`, from midranks.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("scores contain NaN"));
    }
    let n_pos = labels.iter().filter(|&&y| y != 0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::AurocUndefined);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // sum of (1-based) midranks of the positives, doubled to stay integral
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank2 = (i + 1 + j + 1) as u128;
        let pos_in_tie = order[i..=j].iter().filter(|&&k| labels[k] != 0).count() as u128;
        rank_sum2 += midrank2 * pos_in_tie;
        i = j + 1;
    }
    let p = n_pos as u128;
    let u2 = rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

/// The five reported metrics for one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub f1_binary: f64,
    pub auroc: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    F1Binary,
    Auroc,
    Accuracy,
    Precision,
    Recall,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::F1Binary, Metric::Auroc, Metric::Accuracy, Metric::Precision, Metric::Recall];

    pub fn name(self) -> &'static str {
        match self {
            Metric::F1Binary => "f1_binary",
            Metric::Auroc => "auroc",
            Metric::Accuracy => "accuracy",
            Metric::Precision => "precision",
            Metric::Recall => "recall",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown metric {s:?}")))
    }
}

impl MetricValues {
    pub fn from_scores(scores: &[f64], labels: &[u8], threshold_log_odds: f64) -> Result<Self> {
        let preds: Vec<u8> = scores.iter().map(|&s| u8::from(s > threshold_log_odds)).collect();
        let c = Confusion::from_predictions(&preds, labels)?;
        Ok(MetricValues {
            f1_binary: c.f1(),
            auroc: auroc(scores, labels)?,
            accuracy: c.accuracy(),
            precision: c.precision(),
            recall: c.recall(),
        })
    }

    pub fn get(&self, m: Metric) -> f64 {
        match m {
            Metric::F1Binary => self.f1_binary,
            Metric::Auroc => self.auroc,
            Metric::Accuracy => self.accuracy,
            Metric::Precision => self.precision,
            Metric::Recall => self.recall,
        }
    }
}

/// Scores every segment of a labeled corpus and computes all metrics, with
/// positive log-odds as the positive prediction.
pub fn evaluate<P: Predictor + ?Sized>(predictor: &P, corpus: &Corpus) -> Result<MetricValues> {
    let labels = corpus.labels()?;
    let texts: Vec<String> = corpus.iter().map(|s| s.text.clone()).collect();
    let scores = predictor.predict_batch(&texts)?;
    MetricValues::from_scores(&scores, &labels, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(tp: usize, fp: usize, fn_: usize, tn: usize) -> (Vec<u8>, Vec<u8>) {
        let mut p = Vec::new();
        let mut y = Vec::new();
        for (n, a, b) in [(tp, 1, 1), (fp, 1, 0), (fn_, 0, 1), (tn, 0, 0)] {
            p.extend(std::iter::repeat(a).take(n));
            y.extend(std::iter::repeat(b).take(n));
        }
        (p, y)
    }

    #[test]
    fn confusion_arithmetic() {
        let (p, y) = table(3, 1, 2, 4);
        assert!((binary_f1(&p, &y).unwrap() - 6.0 / 9.0).abs() < 1e-15);
        assert!((accuracy(&p, &y).unwrap() - 0.7).abs() < 1e-15);
        assert!((precision(&p, &y).unwrap() - 0.75).abs() < 1e-15);
        assert!((recall(&p, &y).unwrap() - 0.6).abs() < 1e-15);
    }

    #[test]
    fn degenerate_cases() {
        assert_eq!(binary_f1(&[0, 0], &[1, 0]).unwrap(), 0.0);
        assert_eq!(binary_f1(&[0, 0], &[0, 0]).unwrap(), 0.0);
        assert_eq!(precision(&[0, 0], &[1, 0]).unwrap(), 0.0);
        assert_eq!(binary_f1(&[1, 0], &[1, 0]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 0], &[0, 1]).unwrap(), 0.0);
        assert!(matches!(binary_f1(&[1], &[1, 0]), Err(Error::LengthMismatch(1, 2))));
    }

    #[test]
    fn auroc_basics() {
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.5; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.9, 0.1], &[0, 1]).unwrap(), 0.0);
        assert!(matches!(auroc(&[0.1, 0.2], &[1, 1]), Err(Error::AurocUndefined)));
    }
}
