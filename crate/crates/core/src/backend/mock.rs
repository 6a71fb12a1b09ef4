//! Offline backend driven by a fixture file.
//!
//! Fixture format (JSON):
//!
//! ```json
//! {
//!   "normalized": false,
//!   "rules": [
//!     { "prompt": "Mr. Kim is Asian", "continuation": " True", "score": -0.1 },
//!     { "prompt": "banker $", "match": "suffix", "continuation": "10", "tokens": [-1.0, -0.5] },
//!     { "prompt": "", "score": -3.0 }
//!   ]
//! }
//! ```
//!
//! Rules are tried in order and the first hit wins. `match` is `contains`
//! (default), `suffix` or `exact`; a missing `continuation` matches any
//! candidate. `tokens` gives per-token log-probabilities that are summed.
//! Pairs no rule matches get a deterministic pseudo-random score in [-5, 0].

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, BackendError, ScoreRequest, ScoreResponse};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchKind {
    #[default]
    Contains,
    Suffix,
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureRule {
    pub prompt: String,
    #[serde(rename = "match", default)]
    pub match_kind: MatchKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub continuation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<f64>>,
}

impl FixtureRule {
    pub fn new(prompt: impl Into<String>, continuation: Option<&str>, score: f64) -> Self {
        FixtureRule {
            prompt: prompt.into(),
            match_kind: MatchKind::Contains,
            continuation: continuation.map(str::to_string),
            score: Some(score),
            tokens: None,
        }
    }

    pub fn with_match(mut self, kind: MatchKind) -> Self {
        self.match_kind = kind;
        self
    }

    fn matches(&self, prompt: &str, continuation: &str) -> bool {
        let prompt_hit = match self.match_kind {
            MatchKind::Contains => prompt.contains(&self.prompt),
            MatchKind::Suffix => prompt.ends_with(&self.prompt),
            MatchKind::Exact => prompt == self.prompt,
        };
        prompt_hit && self.continuation.as_deref().is_none_or(|c| c == continuation)
    }

    fn value(&self) -> f64 {
        match (&self.score, &self.tokens) {
            (Some(s), _) => *s,
            (None, Some(tokens)) => tokens.iter().sum(),
            (None, None) => unreachable!("validated on load"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureFile {
    /// Whether fixture scores should be treated as full-vocabulary log-probabilities.
    #[serde(default)]
    pub normalized: bool,
    pub rules: Vec<FixtureRule>,
}

impl FixtureFile {
    fn validate(&self) -> Result<(), BackendError> {
        for (i, r) in self.rules.iter().enumerate() {
            match (&r.score, &r.tokens) {
                (Some(s), None) if s.is_finite() => {}
                (None, Some(t)) if !t.is_empty() && t.iter().all(|x| x.is_finite()) => {}
                _ => {
                    return Err(BackendError::Config(format!(
                        "fixture rule {i} needs exactly one finite `score` or non-empty `tokens`"
                    )))
                }
            }
        }
        Ok(())
    }
}

pub struct MockBackend {
    fixtures: FixtureFile,
    seed: u64,
    digest: String,
    calls: AtomicUsize,
}

impl MockBackend {
    pub fn new(fixtures: FixtureFile, seed: u64) -> Result<Self, BackendError> {
        fixtures.validate()?;
        let canonical = serde_json::to_vec(&fixtures).expect("fixtures serialize");
        let digest = hex::encode(Sha256::digest(&canonical))[..16].to_string();
        Ok(MockBackend {
            fixtures,
            seed,
            digest,
            calls: AtomicUsize::new(0),
        })
    }

    pub fn from_file(path: &Path, seed: u64) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            BackendError::Config(format!("cannot read fixture file {}: {e}", path.display()))
        })?;
        let fixtures: FixtureFile = serde_json::from_str(&text).map_err(|e| {
            BackendError::Config(format!("malformed fixture file {}: {e}", path.display()))
        })?;
        MockBackend::new(fixtures, seed)
    }

    /// Number of `score` invocations served so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn score_one(&self, prompt: &str, continuation: &str) -> f64 {
        self.fixtures
            .rules
            .iter()
            .find(|r| r.matches(prompt, continuation))
            .map(FixtureRule::value)
            .unwrap_or_else(|| fallback_score(self.seed, prompt, continuation))
    }
}

/// Hash-derived score in [-5, 0].
pub(crate) fn fallback_score(seed: u64, prompt: &str, continuation: &str) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(prompt.as_bytes());
    h.update([0u8]);
    h.update(continuation.as_bytes());
    let digest = h.finalize();
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    let unit = (u64::from_le_bytes(word) >> 11) as f64 / (1u64 << 53) as f64;
    -5.0 * unit
}

impl Backend for MockBackend {
    fn identity(&self) -> String {
        format!("mock:{}:seed{}", self.digest, self.seed)
    }

    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse, BackendError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        Ok(ScoreResponse {
            scores: request
                .continuations
                .iter()
                .map(|c| self.score_one(&request.prompt, c))
                .collect(),
            normalized: self.fixtures.normalized,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mock(rules: Vec<FixtureRule>, seed: u64) -> MockBackend {
        MockBackend::new(FixtureFile { normalized: false, rules }, seed).unwrap()
    }

    fn req(prompt: &str, cont: &[&str]) -> ScoreRequest {
        ScoreRequest::new(prompt, cont.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    #[test]
    fn fixture_hits_are_verbatim() {
        let m = mock(
            vec![
                FixtureRule::new("key", Some("True"), -0.1),
                FixtureRule::new("key", Some("False"), -2.0),
            ],
            0,
        );
        let r = m.score(&req("prompt-key", &["True", "False"])).unwrap();
        assert_eq!(r.scores, vec![-0.1, -2.0]);
    }

    #[test]
    fn equal_fixture_scores_stay_equal() {
        let m = mock(vec![FixtureRule::new("", None, -1.25)], 0);
        let r = m.score(&req("anything", &["a", "b"])).unwrap();
        assert_eq!(r.scores[0], r.scores[1]);
    }

    #[test]
    fn token_fixtures_sum() {
        let rule = FixtureRule {
            prompt: "banker $".into(),
            match_kind: MatchKind::Suffix,
            continuation: Some("10".into()),
            score: None,
            tokens: Some(vec![-1.0, -0.5]),
        };
        let m = mock(vec![rule], 0);
        assert_eq!(m.score_one("will pass to the banker $", "10"), -1.5);
    }

    #[test]
    fn match_kinds() {
        let suffix = FixtureRule::new("end", None, -1.0).with_match(MatchKind::Suffix);
        assert!(suffix.matches("the end", "x"));
        assert!(!suffix.matches("end of it", "x"));
        let exact = FixtureRule::new("all", Some("y"), -1.0).with_match(MatchKind::Exact);
        assert!(exact.matches("all", "y"));
        assert!(!exact.matches("all ", "y"));
        assert!(!exact.matches("all", "x"));
    }

    #[test]
    fn fallback_is_deterministic_and_seeded() {
        let a = mock(vec![], 7);
        let b = mock(vec![], 7);
        let s1 = a.score_one("p", "c");
        assert_eq!(s1, a.score_one("p", "c"));
        assert_eq!(s1, b.score_one("p", "c"));
        assert!((-5.0..=0.0).contains(&s1));

        let mut differ = 0;
        for i in 0..50 {
            let p = format!("prompt {i}");
            if fallback_score(1, &p, "c") != fallback_score(2, &p, "c") {
                differ += 1;
            }
        }
        assert!(differ >= 49);
    }

    #[test]
    fn fallback_range_holds() {
        for i in 0..500 {
            let s = fallback_score(3, &i.to_string(), "x");
            assert!((-5.0..=0.0).contains(&s));
        }
    }

    #[test]
    fn malformed_fixtures_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.json");
        std::fs::write(&p, "{ not json").unwrap();
        assert!(matches!(MockBackend::from_file(&p, 0), Err(BackendError::Config(_))));
        std::fs::write(&p, r#"{"rules":[{"prompt":"x"}]}"#).unwrap();
        assert!(matches!(MockBackend::from_file(&p, 0), Err(BackendError::Config(_))));
        std::fs::write(&p, r#"{"rules":[{"prompt":"x","score":-1,"tokens":[-1]}]}"#).unwrap();
        assert!(matches!(MockBackend::from_file(&p, 0), Err(BackendError::Config(_))));
    }

    #[test]
    fn identity_depends_on_fixtures_and_seed() {
        let a = mock(vec![FixtureRule::new("", None, -1.0)], 0);
        let b = mock(vec![FixtureRule::new("", None, -2.0)], 0);
        let c = mock(vec![FixtureRule::new("", None, -1.0)], 1);
        assert_ne!(a.identity(), b.identity());
        assert_ne!(a.identity(), c.identity());
    }
}
