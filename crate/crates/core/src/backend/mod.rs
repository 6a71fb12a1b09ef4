//! Candidate-continuation scoring against a language model backend.
//!
//! A backend answers one question: for a prompt and a list of candidate
//! continuations, what is the log-probability of each continuation? Multi-token
//! candidates are scored as the sum of their conditional token log-probabilities.
//! Everything downstream works on the renormalized [`CompletionDistribution`].

mod cache;
mod distribution;
mod http;
mod mock;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::thread;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use cache::ScoreCache;
pub use distribution::{
    integer_candidates, integer_value, log_softmax, logsumexp, renormalize,
    CompletionDistribution, DistributionEntry, MASS_TOLERANCE,
};
pub use http::{HttpBackend, WireRequest, WireResponse};
pub use mock::{FixtureFile, FixtureRule, MatchKind, MockBackend};

/// Environment variable that overrides the configured endpoint.
pub const ENDPOINT_ENV: &str = "NAMEBIAS_ENDPOINT";

#[derive(Debug, Clone, thiserror::Error)]
pub enum BackendError {
    /// Network failure or timeout; worth retrying.
    #[error("transport error: {0}")]
    Transport(String),
    /// The backend rejected the request or answered malformed data.
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("backend configuration error: {0}")]
    Config(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("cache error: {0}")]
    Cache(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub prompt: String,
    pub continuations: Vec<String>,
}

impl ScoreRequest {
    pub fn new(
        prompt: impl Into<String>,
        continuations: Vec<String>,
    ) -> Result<Self, BackendError> {
        let prompt = prompt.into();
        if prompt.is_empty() {
            return Err(BackendError::Contract("empty prompt".into()));
        }
        if continuations.is_empty() {
            return Err(BackendError::Contract("no candidate continuations".into()));
        }
        for (i, c) in continuations.iter().enumerate() {
            if continuations[..i].contains(c) {
                return Err(BackendError::Contract(format!("duplicate continuation `{c}`")));
            }
        }
        Ok(ScoreRequest {
            prompt,
            continuations,
        })
    }
}

/// Raw scores for one request, aligned with its continuations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub scores: Vec<f64>,
    /// True when scores are log-probabilities normalized over the full
    /// vocabulary, so `exp(score)` is an absolute probability.
    #[serde(default)]
    pub normalized: bool,
}

impl ScoreResponse {
    /// Total probability the backend assigns to the candidate set, when known.
    pub fn valid_mass(&self) -> Option<f64> {
        self.normalized
            .then(|| self.scores.iter().map(|s| s.exp()).sum())
    }
}

pub trait Backend: Send + Sync {
    /// Stable identity used to key the score cache.
    fn identity(&self) -> String;

    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse, BackendError>;
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn identity(&self) -> String {
        (**self).identity()
    }

    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse, BackendError> {
        (**self).score(request)
    }
}

/// How prompts are framed for a model family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PromptStyle {
    #[serde(rename = "base-llama-mistral")]
    BaseLlamaMistral,
    #[serde(rename = "base-phi")]
    BasePhi,
    #[serde(rename = "instruct")]
    Instruct,
}

impl PromptStyle {
    pub fn key(self) -> &'static str {
        match self {
            PromptStyle::BaseLlamaMistral => "base-llama-mistral",
            PromptStyle::BasePhi => "base-phi",
            PromptStyle::Instruct => "instruct",
        }
    }

    /// Answer strings for True/False probes; Phi-2 answers with a leading space.
    pub fn answer_tokens(self) -> Option<(&'static str, &'static str)> {
        match self {
            PromptStyle::BasePhi => Some((" True", " False")),
            PromptStyle::BaseLlamaMistral => Some(("True", "False")),
            PromptStyle::Instruct => None,
        }
    }
}

impl fmt::Display for PromptStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for PromptStyle {
    type Err = BackendError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "base-llama-mistral" => Ok(PromptStyle::BaseLlamaMistral),
            "base-phi" => Ok(PromptStyle::BasePhi),
            "instruct" => Ok(PromptStyle::Instruct),
            other => Err(BackendError::Config(format!("unknown prompt style `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    /// `http(s)://...` for a scoring server, or `mock:<fixture-file>`.
    pub endpoint: String,
    pub prompt_style: PromptStyle,
    /// Request timeout in seconds.
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default = "default_max_parallel")]
    pub max_parallel: usize,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    /// Model name forwarded to the server and recorded in manifests.
    #[serde(default)]
    pub model_id: Option<String>,
    /// Seed for the mock backend's fallback scores.
    #[serde(default)]
    pub mock_seed: u64,
    #[serde(default = "default_retry_attempts")]
    pub retry_attempts: u32,
    /// First backoff delay in milliseconds; doubles per attempt.
    #[serde(default = "default_backoff_ms")]
    pub retry_backoff_ms: u64,
}

fn default_timeout_secs() -> f64 {
    60.0
}
fn default_max_parallel() -> usize {
    4
}
fn default_retry_attempts() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    250
}

impl BackendConfig {
    pub fn new(endpoint: impl Into<String>, prompt_style: PromptStyle) -> Self {
        BackendConfig {
            endpoint: endpoint.into(),
            prompt_style,
            timeout_secs: default_timeout_secs(),
            max_parallel: default_max_parallel(),
            cache_dir: None,
            model_id: None,
            mock_seed: 0,
            retry_attempts: default_retry_attempts(),
            retry_backoff_ms: default_backoff_ms(),
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.max_parallel < 1 {
            return Err(BackendError::Config("max_parallel must be at least 1".into()));
        }
        if !(self.timeout_secs > 0.0) {
            return Err(BackendError::Config("timeout must be positive".into()));
        }
        if self.retry_attempts < 1 {
            return Err(BackendError::Config("retry_attempts must be at least 1".into()));
        }
        if let Some(path) = self.endpoint.strip_prefix("mock:") {
            if !std::path::Path::new(path).is_file() {
                return Err(BackendError::Config(format!("mock fixture file `{path}` not found")));
            }
        } else if !(self.endpoint.starts_with("http://") || self.endpoint.starts_with("https://")) {
            return Err(BackendError::Config(format!(
                "endpoint `{}` is neither http(s):// nor mock:",
                self.endpoint
            )));
        }
        Ok(())
    }

    /// Build the backend named by `endpoint`.
    pub fn build_backend(&self) -> Result<Box<dyn Backend>, BackendError> {
        self.validate()?;
        match self.endpoint.strip_prefix("mock:") {
            Some(path) => Ok(Box::new(MockBackend::from_file(
                std::path::Path::new(path),
                self.mock_seed,
            )?)),
            None => Ok(Box::new(HttpBackend::new(
                &self.endpoint,
                self.model_id.clone(),
                Duration::from_secs_f64(self.timeout_secs),
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(250),
        }
    }
}

impl RetryPolicy {
    pub fn run<T>(
        &self,
        mut op: impl FnMut() -> Result<T, BackendError>,
    ) -> Result<T, BackendError> {
        let mut delay = self.base_delay;
        let mut attempt = 1;
        loop {
            match op() {
                Err(e) if e.is_retryable() && attempt < self.attempts => {
                    log::warn!("attempt {attempt}/{} failed: {e}; retrying in {delay:?}", self.attempts);
                    thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

/// Backend plus cache, retry policy and a bounded worker pool.
pub struct ScoringClient {
    backend: Box<dyn Backend>,
    identity: String,
    cache: Option<ScoreCache>,
    retry: RetryPolicy,
    pool: rayon::ThreadPool,
    upstream_calls: AtomicUsize,
}

impl ScoringClient {
    pub fn new(
        backend: Box<dyn Backend>,
        cache: Option<ScoreCache>,
        retry: RetryPolicy,
        max_parallel: usize,
    ) -> Result<Self, BackendError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(max_parallel.max(1))
            .thread_name(|i| format!("score-{i}"))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(ScoringClient {
            identity: backend.identity(),
            backend,
            cache,
            retry,
            pool,
            upstream_calls: AtomicUsize::new(0),
        })
    }

    pub fn from_config(config: &BackendConfig) -> Result<Self, BackendError> {
        let backend = config.build_backend()?;
        let cache = config.cache_dir.as_ref().map(ScoreCache::open).transpose()?;
        let retry = RetryPolicy {
            attempts: config.retry_attempts,
            base_delay: Duration::from_millis(config.retry_backoff_ms),
        };
        ScoringClient::new(backend, cache, retry, config.max_parallel)
    }

    pub fn identity(&self) -> &str {
        &self.identity
    }

    /// Requests that reached the backend (cache misses).
    pub fn upstream_calls(&self) -> usize {
        self.upstream_calls.load(Ordering::Relaxed)
    }

    /// Score one request, consulting the cache first.
    ///
    /// Only continuations missing from the cache are sent upstream.
    pub fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse, BackendError> {
        let Some(cache) = &self.cache else {
            return self.score_upstream(request);
        };
        let cached: Vec<Option<(f64, bool)>> = request
            .continuations
            .iter()
            .map(|c| cache.get(&self.identity, &request.prompt, c))
            .collect::<Result<_, _>>()?;
        let missing: Vec<String> = request
            .continuations
            .iter()
            .zip(&cached)
            .filter(|(_, hit)| hit.is_none())
            .map(|(c, _)| c.clone())
            .collect();
        let mut fresh = Vec::new();
        let mut fresh_normalized = true;
        if !missing.is_empty() {
            let sub = ScoreRequest {
                prompt: request.prompt.clone(),
                continuations: missing.clone(),
            };
            let resp = self.score_upstream(&sub)?;
            for (c, &s) in missing.iter().zip(&resp.scores) {
                cache.put(&self.identity, &request.prompt, c, s, resp.normalized)?;
            }
            fresh_normalized = resp.normalized;
            fresh = resp.scores;
        }
        let mut fresh = fresh.into_iter();
        let mut normalized = true;
        let scores = cached
            .into_iter()
            .map(|hit| match hit {
                Some((s, n)) => {
                    normalized &= n;
                    s
                }
                None => {
                    normalized &= fresh_normalized;
                    fresh.next().expect("aligned upstream response")
                }
            })
            .collect();
        Ok(ScoreResponse { scores, normalized })
    }

    fn score_upstream(&self, request: &ScoreRequest) -> Result<ScoreResponse, BackendError> {
        let resp = self.retry.run(|| {
            self.upstream_calls.fetch_add(1, Ordering::Relaxed);
            self.backend.score(request)
        })?;
        if resp.scores.len() != request.continuations.len() {
            return Err(BackendError::Protocol(format!(
                "backend returned {} scores for {} continuations",
                resp.scores.len(),
                request.continuations.len()
            )));
        }
        if let Some(bad) = resp.scores.iter().find(|s| s.is_nan()) {
            return Err(BackendError::Protocol(format!("backend returned score {bad}")));
        }
        Ok(resp)
    }

    /// Score and renormalize.
    pub fn distribution(
        &self,
        request: &ScoreRequest,
    ) -> Result<(CompletionDistribution, ScoreResponse), BackendError> {
        let resp = self.score(request)?;
        let dist = renormalize(&request.continuations, &resp.scores)?;
        Ok((dist, resp))
    }

    /// Run `f` over `items` on the client's worker pool, preserving order.
    pub fn map_parallel<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        self.pool.install(|| items.par_iter().map(&f).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    struct Flaky {
        failures: Mutex<u32>,
        scores: Vec<f64>,
    }

    impl Backend for Flaky {
        fn identity(&self) -> String {
            "flaky".into()
        }
        fn score(&self, req: &ScoreRequest) -> Result<ScoreResponse, BackendError> {
            let mut f = self.failures.lock().unwrap();
            if *f > 0 {
                *f -= 1;
                return Err(BackendError::Transport("connection reset".into()));
            }
            Ok(ScoreResponse {
                scores: self.scores[..req.continuations.len()].to_vec(),
                normalized: false,
            })
        }
    }

    fn quick_retry() -> RetryPolicy {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(1),
        }
    }

    fn req(n: usize) -> ScoreRequest {
        ScoreRequest::new("prompt", (0..n).map(|i| i.to_string()).collect()).unwrap()
    }

    #[test]
    fn request_invariants() {
        assert!(ScoreRequest::new("", vec!["a".into()]).is_err());
        assert!(ScoreRequest::new("p", vec![]).is_err());
        assert!(ScoreRequest::new("p", vec!["a".into(), "a".into()]).is_err());
    }

    #[test]
    fn retries_transport_errors_up_to_limit() {
        let b = Flaky { failures: Mutex::new(2), scores: vec![-1.0, -2.0] };
        let c = ScoringClient::new(Box::new(b), None, quick_retry(), 1).unwrap();
        assert_eq!(c.score(&req(2)).unwrap().scores, vec![-1.0, -2.0]);
        assert_eq!(c.upstream_calls(), 3);

        let b = Flaky { failures: Mutex::new(3), scores: vec![-1.0] };
        let c = ScoringClient::new(Box::new(b), None, quick_retry(), 1).unwrap();
        assert!(matches!(c.score(&req(1)), Err(BackendError::Transport(_))));
        assert_eq!(c.upstream_calls(), 3);
    }

    #[test]
    fn mismatched_length_is_protocol_error() {
        struct Short;
        impl Backend for Short {
            fn identity(&self) -> String {
                "short".into()
            }
            fn score(&self, _: &ScoreRequest) -> Result<ScoreResponse, BackendError> {
                Ok(ScoreResponse { scores: vec![0.0], normalized: false })
            }
        }
        let c = ScoringClient::new(Box::new(Short), None, quick_retry(), 1).unwrap();
        assert!(matches!(c.score(&req(2)), Err(BackendError::Protocol(_))));
        assert_eq!(c.upstream_calls(), 1);
    }

    #[test]
    fn valid_mass_only_for_normalized_scores() {
        let r = ScoreResponse { scores: vec![0.8f64.ln(), 0.16f64.ln()], normalized: true };
        assert!((r.valid_mass().unwrap() - 0.96).abs() < 1e-12);
        let r = ScoreResponse { scores: vec![0.0], normalized: false };
        assert!(r.valid_mass().is_none());
    }

    #[test]
    fn config_validation() {
        let mut c = BackendConfig::new("http://localhost:8080/score", PromptStyle::BasePhi);
        assert!(c.validate().is_ok());
        c.max_parallel = 0;
        assert!(c.validate().is_err());
        let c = BackendConfig::new("ftp://x", PromptStyle::BasePhi);
        assert!(c.validate().is_err());
        let c = BackendConfig::new("mock:/definitely/not/here.json", PromptStyle::BasePhi);
        assert!(c.validate().is_err());
    }

    #[test]
    fn style_answer_tokens() {
        assert_eq!(PromptStyle::BasePhi.answer_tokens(), Some((" True", " False")));
        assert_eq!(PromptStyle::BaseLlamaMistral.answer_tokens(), Some(("True", "False")));
        assert_eq!(PromptStyle::Instruct.answer_tokens(), None);
        assert_eq!("base-phi".parse::<PromptStyle>().unwrap(), PromptStyle::BasePhi);
    }
}
