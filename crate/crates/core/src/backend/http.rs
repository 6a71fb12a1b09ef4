//! HTTP scoring backend.
//!
//! Wire protocol: `POST <endpoint>` with body
//! `{"prompt": "...", "continuations": ["...", ...], "model": "..."}` and a
//! response `{"scores": [...], "normalized": true}`. Each score is the summed
//! log-probability of the continuation's tokens given the prompt; `normalized`
//! states whether those log-probabilities are over the full vocabulary.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, ScoreRequest, ScoreResponse};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub prompt: String,
    pub continuations: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub scores: Vec<f64>,
    #[serde(default)]
    pub normalized: bool,
}

pub struct HttpBackend {
    endpoint: String,
    model: Option<String>,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(endpoint: &str, model: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpBackend {
            endpoint: endpoint.to_string(),
            model,
            agent,
        }
    }
}

fn classify(err: ureq::Error) -> BackendError {
    match err {
        ureq::Error::Json(e) => BackendError::Protocol(format!("malformed response body: {e}")),
        ureq::Error::BadUri(u) => BackendError::Config(format!("bad endpoint URI {u}")),
        other => BackendError::Transport(other.to_string()),
    }
}

impl Backend for HttpBackend {
    fn identity(&self) -> String {
        match &self.model {
            Some(m) => format!("{}#{m}", self.endpoint),
            None => self.endpoint.clone(),
        }
    }

    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse, BackendError> {
        let body = WireRequest {
            prompt: request.prompt.clone(),
            continuations: request.continuations.clone(),
            model: self.model.clone(),
        };
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .send_json(&body)
            .map_err(classify)?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(BackendError::Transport(format!("HTTP {status}")));
        }
        if status >= 400 {
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(BackendError::Protocol(format!("HTTP {status}: {text}")));
        }
        let wire: WireResponse = resp.body_mut().read_json().map_err(classify)?;
        if wire.scores.len() != request.continuations.len() {
            return Err(BackendError::Protocol(format!(
                "{} scores for {} continuations",
                wire.scores.len(),
                request.continuations.len()
            )));
        }
        Ok(ScoreResponse {
            scores: wire.scores,
            normalized: wire.normalized,
        })
    }
}
