use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::cache::{cache_key, ResponseCache};
use super::prompt::{render_prompt, PromptTemplate};
use crate::error::{Error, Result};
use crate::models::Predictor;

/// Log-odds magnitude used when only the completion text is available.
pub const FALLBACK_LOG_ODDS: f64 = 10.0;

pub const TEMPERATURE: f64 = 0.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ApiPredictorConfig {
    /// Chat-completions URL.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    /// First retry delay; doubles on every further attempt.
    pub backoff_ms: u64,
    /// Sent as the `seed` request field when set.
    pub seed: Option<u64>,
    pub top_logprobs: u32,
    pub max_concurrency: usize,
    pub cache_dir: Option<PathBuf>,
    pub prompt: PromptTemplate,
}

impl Default for ApiPredictorConfig {
    fn default() -> Self {
        ApiPredictorConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4-turbo".into(),
            api_key_env: "TRACE_API_KEY".into(),
            timeout_secs: 60.0,
            max_retries: 3,
            backoff_ms: 500,
            seed: Some(0),
            top_logprobs: 5,
            max_concurrency: 4,
            cache_dir: None,
            prompt: PromptTemplate::default(),
        }
    }
}

impl ApiPredictorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(Error::invalid("timeout must be positive"));
        }
        if self.max_concurrency == 0 {
            return Err(Error::invalid("max_concurrency must be at least 1"));
        }
        if !(1..=20).contains(&self.top_logprobs) {
            return Err(Error::invalid("top_logprobs must be within 1..=20"));
        }
        Ok(())
    }

    /// The exact JSON body sent for one sample. Keys serialize sorted, so the
    /// string doubles as the cache key material.
    pub fn request_body(&self, sample_text: &str) -> String {
        let (system, user) = render_prompt(&self.prompt, sample_text);
        let mut body = json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "temperature": TEMPERATURE,
            "max_tokens": 1,
            "logprobs": true,
            "top_logprobs": self.top_logprobs,
        });
        if let Some(seed) = self.seed {
            body["seed"] = json!(seed);
        }
        body.to_string()
    }
}

/// Class log-odds from the top log-probabilities of the first generated
/// token.
///
/// Tokens are compared after trimming whitespace; when several candidates
/// map to one label the largest log-probability wins. A label missing from
/// the list is floored at `min(returned) - ln 10`. With neither label
/// present the completion text decides, mapped to `±FALLBACK_LOG_ODDS`.
pub fn log_odds_from_top(top: &[(String, f64)], completion: Option<&str>, labels: &[String; 2]) -> Result<f64> {
    let lp = |label: &str| {
        top.iter()
            .filter(|(t, _)| t.trim() == label)
            .map(|&(_, p)| p)
            .fold(None, |acc: Option<f64>, p| Some(acc.map_or(p, |a| a.max(p))))
    };
    let floor = || top.iter().map(|&(_, p)| p).fold(f64::INFINITY, f64::min) - std::f64::consts::LN_10;
    match (lp(&labels[0]), lp(&labels[1])) {
        (Some(n), Some(p)) => Ok(p - n),
        (Some(n), None) => Ok(floor() - n),
        (None, Some(p)) => Ok(p - floor()),
        (None, None) => {
            let text = completion.unwrap_or("");
            let answer = text.trim().trim_end_matches(|c: char| c.is_ascii_punctuation());
            if answer == labels[1] {
                Ok(FALLBACK_LOG_ODDS)
            } else if answer == labels[0] {
                Ok(-FALLBACK_LOG_ODDS)
            } else {
                Err(Error::UnparseableCompletion(text.to_string()))
            }
        }
    }
}

/// Parses a chat-completions response body into class log-odds.
pub fn parse_completion_response(body: &str, labels: &[String; 2]) -> Result<f64> {
    let v: Value = serde_json::from_str(body).map_err(|_| Error::UnparseableCompletion(body.to_string()))?;
    let choice = &v["choices"][0];
    let top: Vec<(String, f64)> = choice["logprobs"]["content"][0]["top_logprobs"]
        .as_array()
        .map(|entries| {
            entries
                .iter()
                .filter_map(|e| Some((e["token"].as_str()?.to_string(), e["logprob"].as_f64()?)))
                .collect()
        })
        .unwrap_or_default();
    log_odds_from_top(&top, choice["message"]["content"].as_str(), labels)
}

struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

struct SlotGuard<'a>(&'a Slots);

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        SlotGuard(self)
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// Chat-completions model used as a black-box [`Predictor`].
///
/// At most `max_concurrency` requests are in flight at once, whatever the
/// number of calling threads. Responses are cached on disk when a cache
/// directory is configured, so reruns never hit the network.
pub struct ApiPredictor {
    config: ApiPredictorConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
    cache: Option<ResponseCache>,
    slots: Slots,
}

impl ApiPredictor {
    /// Reads the API key from the configured environment variable. A missing
    /// key only fails once a request has to go over the network.
    pub fn new(config: ApiPredictorConfig) -> Result<Self> {
        let key = std::env::var(&config.api_key_env).ok();
        Self::with_key(config, key)
    }

    pub fn with_key(config: ApiPredictorConfig, api_key: Option<String>) -> Result<Self> {
        config.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let cache = config.cache_dir.as_ref().map(ResponseCache::open).transpose()?;
        Ok(ApiPredictor {
            slots: Slots {
                free: Mutex::new(config.max_concurrency),
                cv: Condvar::new(),
            },
            config,
            agent,
            api_key,
            cache,
        })
    }

    pub fn config(&self) -> &ApiPredictorConfig {
        &self.config
    }

    fn post(&self, body: &str) -> Result<String> {
        let key = self
            .api_key
            .as_deref()
            .ok_or_else(|| Error::ApiUnavailable(format!("environment variable {} is not set", self.config.api_key_env)))?;
        let _slot = self.slots.acquire();
        let mut last = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                let delay = self.config.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                thread::sleep(Duration::from_millis(delay));
            }
            let sent = self
                .agent
                .post(&self.config.endpoint)
                .header("Authorization", &format!("Bearer {key}"))
                .header("Content-Type", "application/json")
                .send(body);
            match sent {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    let text = resp.body_mut().read_to_string().unwrap_or_default();
                    if (200..300).contains(&status) {
                        return Ok(text);
                    }
                    last = format!("HTTP {status}: {text}");
                    if status != 429 && status < 500 {
                        break;
                    }
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(Error::ApiUnavailable(last))
    }

    /// Raw response body for one sample, from the cache when possible.
    pub fn completion(&self, sample_text: &str) -> Result<String> {
        let body = self.config.request_body(sample_text);
        let key = cache_key(&self.config.model, &body);
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.get(&key)? {
                return Ok(hit);
            }
        }
        let text = self.post(&body)?;
        if let Some(cache) = &self.cache {
            cache.put(&key, &text)?;
        }
        Ok(text)
    }
}

impl Predictor for ApiPredictor {
    fn predict_log_odds(&self, text: &str) -> Result<f64> {
        parse_completion_response(&self.completion(text)?, &self.config.prompt.expected_labels)
    }

    fn predict_batch(&self, texts: &[String]) -> Result<Vec<f64>> {
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<Option<Result<f64>>>> = Mutex::new((0..texts.len()).map(|_| None).collect());
        thread::scope(|s| {
            for _ in 0..self.config.max_concurrency.min(texts.len()) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= texts.len() {
                        break;
                    }
                    let r = self.predict_log_odds(&texts[i]);
                    results.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(r);
                });
            }
        });
        results
            .into_inner()
            .unwrap_or_else(|e| e.into_inner())
            .into_iter()
            .map(|r| r.expect("every index is claimed by a worker"))
            .collect()
    }
}
