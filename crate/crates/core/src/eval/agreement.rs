use std::collections::{BTreeMap, HashMap};
use std::io::Read;

use serde::{Deserialize, Serialize};

use super::metrics::binary_f1;
use crate::error::{Error, Result};

/// Binary votes, items by annotators; `None` marks a missing vote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub items: Vec<String>,
    pub annotators: Vec<String>,
    pub votes: Vec<Vec<Option<u8>>>,
    /// Expert label per item, when available.
    pub expert: Option<Vec<Option<u8>>>,
}

fn parse_label(s: &str, line: usize) -> Result<Option<u8>> {
    match s.trim() {
        "" | "NA" | "na" | "null" => Ok(None),
        "0" => Ok(Some(0)),
        "1" => Ok(Some(1)),
        other => Err(Error::Parse {
            line,
            message: format!("label must be 0, 1 or empty, got {other:?}"),
        }),
    }
}

fn csv_rows(reader: impl Read, columns: &[&str]) -> Result<Vec<(usize, Vec<String>)>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = r.headers().map_err(csv_error)?.clone();
    let idx: Vec<usize> = columns
        .iter()
        .map(|c| {
            headers
                .iter()
                .position(|h| h == *c)
                .ok_or_else(|| Error::Parse { line: 1, message: format!("missing column {c:?}") })
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        rows.push((line, idx.iter().map(|&i| rec.get(i).unwrap_or("").to_string()).collect()));
    }
    Ok(rows)
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse { line, message: e.to_string() }
}

impl AnnotationSet {
    pub fn new(items: Vec<String>, annotators: Vec<String>, votes: Vec<Vec<Option<u8>>>) -> Result<Self> {
        let set = AnnotationSet {
            items,
            annotators,
            votes,
            expert: None,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.annotators.len() < 2 {
            return Err(Error::invalid("at least two annotators are required"));
        }
        if self.votes.len() != self.items.len() {
            return Err(Error::LengthMismatch(self.votes.len(), self.items.len()));
        }
        for (item, row) in self.items.iter().zip(&self.votes) {
            if row.len() != self.annotators.len() {
                return Err(Error::LengthMismatch(row.len(), self.annotators.len()));
            }
            if row.iter().all(Option::is_none) {
                return Err(Error::invalid(format!("item {item:?} has no votes")));
            }
            if row.iter().flatten().any(|&v| v > 1) {
                return Err(Error::invalid(format!("item {item:?} has a non-binary vote")));
            }
        }
        if let Some(e) = &self.expert {
            if e.len() != self.items.len() {
                return Err(Error::LengthMismatch(e.len(), self.items.len()));
            }
        }
        Ok(())
    }

    /// Long-format CSV with columns `item_id,annotator_id,label`. Items and
    /// annotators keep their order of first appearance.
    pub fn from_csv(reader: impl Read) -> Result<Self> {
        let rows = csv_rows(reader, &["item_id", "annotator_id", "label"])?;
        let mut items: Vec<String> = Vec::new();
        let mut annotators: Vec<String> = Vec::new();
        let mut item_ix = HashMap::new();
        let mut ann_ix = HashMap::new();
        let mut cells: BTreeMap<(usize, usize), Option<u8>> = BTreeMap::new();
        for (line, row) in rows {
            let i = *item_ix.entry(row[0].clone()).or_insert_with(|| {
                items.push(row[0].clone());
                items.len() - 1
            });
            let a = *ann_ix.entry(row[1].clone()).or_insert_with(|| {
                annotators.push(row[1].clone());
                annotators.len() - 1
            });
            if cells.insert((i, a), parse_label(&row[2], line)?).is_some() {
                return Err(Error::Parse {
                    line,
                    message: format!("duplicate vote by {:?} on {:?}", row[1], row[0]),
                });
            }
        }
        let mut votes = vec![vec![None; annotators.len()]; items.len()];
        for ((i, a), v) in cells {
            votes[i][a] = v;
        }
        AnnotationSet::new(items, annotators, votes)
    }

    /// Attaches expert labels from a CSV with columns `item_id,label`. Every
    /// expert item must exist in the set.
    pub fn with_expert_csv(mut self, reader: impl Read) -> Result<Self> {
        let ix: HashMap<&str, usize> = self.items.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let mut expert = vec![None; self.items.len()];
        for (line, row) in csv_rows(reader, &["item_id", "label"])? {
            let i = *ix
                .get(row[0].as_str())
                .ok_or_else(|| Error::Misaligned(format!("expert item {:?} has no crowd votes", row[0])))?;
            expert[i] = parse_label(&row[1], line)?;
        }
        self.expert = Some(expert);
        Ok(self)
    }
}

/// Krippendorff's alpha for binary nominal data.
///
/// Builds the coincidence matrix from every item with at least two votes,
/// each ordered pair of votes from different annotators weighted by
/// `1 / (m - 1)`. Then `alpha = 1 - (n - 1) * o01 / (n0 * n1)` where `n` is
/// the number of pairable values.
pub fn krippendorff_alpha(set: &AnnotationSet) -> Result<f64> {
    set.validate()?;
    let mut o = [[0.0f64; 2]; 2];
    for row in &set.votes {
        let vals: Vec<u8> = row.iter().flatten().copied().collect();
        let m = vals.len();
        if m < 2 {
            continue;
        }
        let ones = vals.iter().filter(|&&v| v == 1).count() as f64;
        let zeros = m as f64 - ones;
        let w = 1.0 / (m as f64 - 1.0);
        o[0][0] += zeros * (zeros - 1.0) * w;
        o[1][1] += ones * (ones - 1.0) * w;
        o[0][1] += zeros * ones * w;
        o[1][0] += zeros * ones * w;
    }
    let n0 = o[0][0] + o[0][1];
    let n1 = o[1][0] + o[1][1];
    let n = n0 + n1;
    if n == 0.0 {
        return Err(Error::AlphaUndefined("no item has two or more votes".into()));
    }
    if n0 == 0.0 || n1 == 0.0 {
        return Err(Error::AlphaUndefined("all pairable values are identical".into()));
    }
    Ok(1.0 - (n - 1.0) * o[0][1] / (n0 * n1))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MajorityVote {
    pub labels: Vec<u8>,
    /// Items whose votes split evenly; their label is 0.
    pub ties: Vec<bool>,
}

/// Strict majority of the present votes per item, ties going to 0.
pub fn majority_vote(set: &AnnotationSet) -> MajorityVote {
    let (labels, ties) = set
        .votes
        .iter()
        .map(|row| {
            let ones = row.iter().filter(|v| **v == Some(1)).count();
            let zeros = row.iter().filter(|v| **v == Some(0)).count();
            (u8::from(ones > zeros), ones == zeros)
        })
        .unzip();
    MajorityVote { labels, ties }
}

/// Binary F1 of `majority` against the `expert` reference, matched by id.
pub fn expert_agreement(majority: &[(String, u8)], expert: &[(String, u8)]) -> Result<f64> {
    if majority.len() != expert.len() {
        return Err(Error::Misaligned(format!("{} majority items vs {} expert items", majority.len(), expert.len())));
    }
    let reference: HashMap<&str, u8> = expert.iter().map(|(id, y)| (id.as_str(), *y)).collect();
    if reference.len() != expert.len() {
        return Err(Error::Misaligned("duplicate expert item ids".into()));
    }
    let mut preds = Vec::with_capacity(majority.len());
    let mut labels = Vec::with_capacity(majority.len());
    for (id, y) in majority {
        let e = reference.get(id.as_str()).ok_or_else(|| Error::Misaligned(format!("item {id:?} has no expert label")))?;
        preds.push(*y);
        labels.push(*e);
    }
    binary_f1(&preds, &labels)
}

/// Crowd majority versus expert labels over the items the expert labeled.
pub fn set_expert_agreement(set: &AnnotationSet) -> Result<f64> {
    let expert = set.expert.as_ref().ok_or_else(|| Error::invalid("annotation set has no expert labels"))?;
    let maj = majority_vote(set);
    let (m, e): (Vec<_>, Vec<_>) = set
        .items
        .iter()
        .zip(&maj.labels)
        .zip(expert)
        .filter_map(|((id, &m), e)| e.map(|e| ((id.clone(), m), (id.clone(), e))))
        .unzip();
    if m.is_empty() {
        return Err(Error::Misaligned("no item has an expert label".into()));
    }
    expert_agreement(&m, &e)
}

/// Cohen's kappa, `(p_o - p_e) / (1 - p_e)` with chance agreement from the
/// product of the raters' marginals.
pub fn cohens_kappa(a: &[u8], b: &[u8]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(Error::invalid("kappa needs at least one item"));
    }
    if a.iter().chain(b).any(|&v| v > 1) {
        return Err(Error::invalid("kappa expects binary labels"));
    }
    let n = a.len() as f64;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n;
    let pa = a.iter().filter(|&&v| v == 1).count() as f64 / n;
    let pb = b.iter().filter(|&&v| v == 1).count() as f64 / n;
    let pe = pa * pb + (1.0 - pa) * (1.0 - pb);
    if pe >= 1.0 {
        return Err(Error::KappaUndefined);
    }
    Ok((agree - pe) / (1.0 - pe))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(votes: Vec<Vec<Option<u8>>>) -> AnnotationSet {
        let items = (0..votes.len()).map(|i| format!("i{i}")).collect();
        let annotators = (0..votes[0].len()).map(|a| format!("a{a}")).collect();
        AnnotationSet::new(items, annotators, votes).unwrap()
    }

    #[test]
    fn perfect_agreement_is_one() {
        let s = set(vec![vec![Some(1), Some(1)], vec![Some(0), Some(0)], vec![Some(1), None]]);
        assert_eq!(krippendorff_alpha(&s).unwrap(), 1.0);
    }

    #[test]
    fn alpha_undefined_cases() {
        let s = set(vec![vec![Some(1), None], vec![None, Some(0)]]);
        assert!(matches!(krippendorff_alpha(&s), Err(Error::AlphaUndefined(_))));
        let s = set(vec![vec![Some(1), Some(1)], vec![Some(1), Some(1)]]);
        assert!(matches!(krippendorff_alpha(&s), Err(Error::AlphaUndefined(_))));
    }

    #[test]
    fn majority_and_ties() {
        let s = set(vec![vec![Some(1), Some(1), Some(0)], vec![Some(1), Some(0), None], vec![Some(0), None, None]]);
        let m = majority_vote(&s);
        assert_eq!(m.labels, vec![1, 0, 0]);
        assert_eq!(m.ties, vec![false, true, false]);
    }

    #[test]
    fn kappa_from_table() {
        // a=20 (1,1), b=5 (1,0), c=10 (0,1), d=15 (0,0)
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (n, p, q) in [(20, 1, 1), (5, 1, 0), (10, 0, 1), (15, 0, 0)] {
            x.extend(std::iter::repeat(p).take(n));
            y.extend(std::iter::repeat(q).take(n));
        }
        let po = 35.0 / 50.0;
        let pe = (25.0 / 50.0) * (30.0 / 50.0) + (25.0 / 50.0) * (20.0 / 50.0);
        assert!((cohens_kappa(&x, &y).unwrap() - (po - pe) / (1.0 - pe)).abs() < 1e-15);
        assert!(matches!(cohens_kappa(&[1, 1], &[1, 1]), Err(Error::KappaUndefined)));
        assert_eq!(cohens_kappa(&[0, 1, 1], &[0, 1, 1]).unwrap(), 1.0);
    }

    #[test]
    fn expert_alignment() {
        let m = vec![("a".to_string(), 1), ("b".to_string(), 0)];
        let e = vec![("b".to_string(), 0), ("a".to_string(), 1)];
        assert_eq!(expert_agreement(&m, &e).unwrap(), 1.0);
        let e2 = vec![("b".to_string(), 1), ("a".to_string(), 0)];
        assert_eq!(expert_agreement(&m, &e2).unwrap(), 0.0);
        let e3 = vec![("c".to_string(), 1), ("a".to_string(), 0)];
        assert!(matches!(expert_agreement(&m, &e3), Err(Error::Misaligned(_))));
    }

    #[test]
    fn csv_roundtrip() {
        let data = "item_id,annotator_id,label\nx,a,1\nx,b,0\ny,a,1\ny,b,\nz,b,0\n";
        let s = AnnotationSet::from_csv(data.as_bytes()).unwrap();
        assert_eq!(s.items, vec!["x", "y", "z"]);
        assert_eq!(s.annotators, vec!["a", "b"]);
        assert_eq!(s.votes[1], vec![Some(1), None]);
        assert_eq!(s.votes[2], vec![None, Some(0)]);
        let s = s.with_expert_csv("item_id,label\nx,1\nz,0\n".as_bytes()).unwrap();
        assert_eq!(s.expert.as_ref().unwrap()[0], Some(1));
        assert!(AnnotationSet::from_csv("item_id,annotator_id,label\nx,a,2\n".as_bytes()).is_err());
        assert!(AnnotationSet::from_csv("item_id,annotator_id,label\nx,a,1\nx,a,0\ny,b,1\n".as_bytes()).is_err());
    }
}
