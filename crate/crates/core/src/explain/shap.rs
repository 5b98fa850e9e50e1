use std::collections::HashMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, TokenizerConfig};
use crate::error::{Error, Result};
use crate::models::Predictor;
use crate::rng;

pub const EXACT_SHAP_MAX_TOKENS: usize = 12;

/// Permutations handled by one seeded worker.
const CHUNK: usize = 256;
/// Coalition values are memoized up to this many tokens.
const MEMO_MAX_TOKENS: usize = 24;

/// How a coalition of retained tokens is shown to the predictor.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coalition {
    /// Absent tokens are dropped; the remaining ones keep their order.
    #[default]
    Remove,
    /// Absent tokens are replaced by the given mask token.
    Mask(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShapOptions {
    pub n_samples: usize,
    pub seed: u64,
    pub coalition: Coalition,
}

impl Default for ShapOptions {
    fn default() -> Self {
        ShapOptions {
            n_samples: 2000,
            seed: 0,
            coalition: Coalition::Remove,
        }
    }
}

/// Per-token Shapley attributions for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapReport {
    pub tokens: Vec<String>,
    pub phi: Vec<f64>,
    /// Standard error of each `phi`; zero for exact reports.
    pub std_err: Vec<f64>,
    /// Log-odds with every token removed.
    pub baseline_value: f64,
    pub full_value: f64,
    /// Sampled permutations, 0 for exact enumeration.
    pub n_samples: usize,
    pub seed: u64,
    pub exact: bool,
}

impl ShapReport {
    /// `sum(phi) - (full - baseline)`.
    pub fn efficiency_residual(&self) -> f64 {
        self.phi.iter().sum::<f64>() - (self.full_value - self.baseline_value)
    }

    /// Standard error of `sum(phi)` treating the per-token estimates as
    /// independent.
    pub fn sum_std_err(&self) -> f64 {
        self.std_err.iter().map(|s| s * s).sum::<f64>().sqrt()
    }

    /// Whether the residual is within `k` standard errors. A floor of a few
    /// ulps of the value scale absorbs rounding when every marginal is
    /// constant and the standard error is exactly zero.
    pub fn efficiency_holds(&self, k: f64) -> bool {
        let scale = self.full_value.abs().max(self.baseline_value.abs()).max(1.0);
        let rounding = 64.0 * f64::EPSILON * scale * (self.tokens.len() as f64 + 1.0);
        self.efficiency_residual().abs() <= k * self.sum_std_err() + rounding
    }
}

struct ValueFn<'a, P: ?Sized> {
    predictor: &'a P,
    tokens: &'a [String],
    coalition: &'a Coalition,
    memo: Option<HashMap<u32, f64>>,
}

impl<'a, P: Predictor + ?Sized> ValueFn<'a, P> {
    fn new(predictor: &'a P, tokens: &'a [String], coalition: &'a Coalition) -> Self {
        let memo = (tokens.len() <= MEMO_MAX_TOKENS).then(HashMap::new);
        ValueFn {
            predictor,
            tokens,
            coalition,
            memo,
        }
    }

    fn eval(&self, present: &[bool]) -> Result<f64> {
        let seq: Vec<&str> = match self.coalition {
            Coalition::Remove => self
                .tokens
                .iter()
                .zip(present)
                .filter(|(_, &p)| p)
                .map(|(t, _)| t.as_str())
                .collect(),
            Coalition::Mask(mask) => self
                .tokens
                .iter()
                .zip(present)
                .map(|(t, &p)| if p { t.as_str() } else { mask.as_str() })
                .collect(),
        };
        self.predictor.predict_tokens(&seq)
    }

    fn value(&mut self, present: &[bool]) -> Result<f64> {
        let Some(memo) = self.memo.as_mut() else {
            return self.eval(present);
        };
        let key = present.iter().enumerate().fold(0u32, |k, (i, &p)| k | ((p as u32) << i));
        if let Some(&v) = memo.get(&key) {
            return Ok(v);
        }
        let v = self.eval(present)?;
        self.memo.as_mut().expect("memo").insert(key, v);
        Ok(v)
    }
}

fn with_index(index: usize) -> impl FnOnce(Error) -> Error {
    move |e| Error::AtToken {
        index,
        source: Box::new(e),
    }
}

/// Permutation-sampling Shapley estimate over the tokens of `text`.
pub fn shap_sample<P: Predictor + ?Sized>(predictor: &P, text: &str, opts: &ShapOptions) -> Result<ShapReport> {
    shap_sample_tokens(predictor, &tokenize(text, &TokenizerConfig::default()), opts)
}

/// Permutation-sampling Shapley estimate.
///
/// Each sampled permutation adds tokens one at a time and credits every
/// token with the change in log-odds it causes. Permutations are drawn in
/// chunks of fixed size, each chunk from its own seeded substream, so the
/// result does not depend on the number of worker threads. The raw averages
/// are reported; no efficiency correction is applied.
pub fn shap_sample_tokens<P: Predictor + ?Sized>(
    predictor: &P,
    tokens: &[String],
    opts: &ShapOptions,
) -> Result<ShapReport> {
    let n = tokens.len();
    if n == 0 {
        return Err(Error::invalid("cannot explain an empty token sequence"));
    }
    if opts.n_samples == 0 {
        return Err(Error::invalid("n_samples must be at least 1"));
    }
    let (baseline_value, full_value) = {
        let v = ValueFn::new(predictor, tokens, &opts.coalition);
        (v.eval(&vec![false; n])?, v.eval(&vec![true; n])?)
    };

    let n_chunks = opts.n_samples.div_ceil(CHUNK);
    let partials: Vec<(Vec<f64>, Vec<f64>)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let count = CHUNK.min(opts.n_samples - c * CHUNK);
            let mut r = rng::substream(opts.seed, c as u64);
            let mut value = ValueFn::new(predictor, tokens, &opts.coalition);
            let mut sum = vec![0.0; n];
            let mut sum_sq = vec![0.0; n];
            let mut order: Vec<usize> = (0..n).collect();
            for _ in 0..count {
                order.shuffle(&mut r);
                let mut present = vec![false; n];
                let mut prev = baseline_value;
                for &i in &order {
                    present[i] = true;
                    let cur = if present.iter().all(|&p| p) {
                        full_value
                    } else {
                        value.value(&present).map_err(with_index(i))?
                    };
                    let d = cur - prev;
                    sum[i] += d;
                    sum_sq[i] += d * d;
                    prev = cur;
                }
            }
            Ok((sum, sum_sq))
        })
        .collect::<Result<_>>()?;

    let mut sum = vec![0.0; n];
    let mut sum_sq = vec![0.0; n];
    for (s, sq) in &partials {
        for i in 0..n {
            sum[i] += s[i];
            sum_sq[i] += sq[i];
        }
    }
    let m = opts.n_samples as f64;
    let phi: Vec<f64> = sum.iter().map(|s| s / m).collect();
    let std_err = (0..n)
        .map(|i| {
            if opts.n_samples < 2 {
                return 0.0;
            }
            let var = ((sum_sq[i] - sum[i] * sum[i] / m) / (m - 1.0)).max(0.0);
            (var / m).sqrt()
        })
        .collect();
    Ok(ShapReport {
        tokens: tokens.to_vec(),
        phi,
        std_err,
        baseline_value,
        full_value,
        n_samples: opts.n_samples,
        seed: opts.seed,
        exact: false,
    })
}

/// Values of all `2^n` coalitions, indexed by the bitmask of present tokens.
pub fn coalition_values<P: Predictor + ?Sized>(
    predictor: &P,
    tokens: &[String],
    coalition: &Coalition,
) -> Result<Vec<f64>> {
    let n = tokens.len();
    if n > EXACT_SHAP_MAX_TOKENS {
        return Err(Error::ExactLimitExceeded(n));
    }
    let value = ValueFn::new(predictor, tokens, coalition);
    (0..1u32 << n)
        .into_par_iter()
        .map(|mask| {
            let present: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
            value.eval(&present)
        })
        .collect()
}

/// Exact Shapley values by enumerating every coalition of the tokens of `text`.
pub fn exact_shap<P: Predictor + ?Sized>(predictor: &P, text: &str) -> Result<ShapReport> {
    exact_shap_tokens(predictor, &tokenize(text, &TokenizerConfig::default()), &Coalition::Remove)
}

pub fn exact_shap_tokens<P: Predictor + ?Sized>(
    predictor: &P,
    tokens: &[String],
    coalition: &Coalition,
) -> Result<ShapReport> {
    let n = tokens.len();
    if n == 0 {
        return Err(Error::invalid("cannot explain an empty token sequence"));
    }
    let values = coalition_values(predictor, tokens, coalition)?;
    // weight(s) = s! (n - s - 1)! / n!
    let mut fact = vec![1.0f64; n + 1];
    for i in 1..=n {
        fact[i] = fact[i - 1] * i as f64;
    }
    let weight: Vec<f64> = (0..n).map(|s| fact[s] * fact[n - s - 1] / fact[n]).collect();
    let mut phi = vec![0.0; n];
    for (i, p) in phi.iter_mut().enumerate() {
        let bit = 1usize << i;
        for mask in 0..values.len() {
            if mask & bit == 0 {
                let s = mask.count_ones() as usize;
                *p += weight[s] * (values[mask | bit] - values[mask]);
            }
        }
    }
    Ok(ShapReport {
        tokens: tokens.to_vec(),
        phi,
        std_err: vec![0.0; n],
        baseline_value: values[0],
        full_value: values[values.len() - 1],
        n_samples: 0,
        seed: 0,
        exact: true,
    })
}
