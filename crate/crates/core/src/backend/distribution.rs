//! Conditional distributions over a designated set of candidate continuations.

use serde::{Deserialize, Serialize};

use super::BackendError;

/// Tolerance on the total probability mass of a distribution.
pub const MASS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionEntry {
    pub continuation: String,
    /// Score reported by the backend before renormalization.
    pub logprob_raw: f64,
    pub probability: f64,
}

/// Probabilities over the candidate set, obtained by softmax of the raw scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionDistribution {
    pub entries: Vec<DistributionEntry>,
}

/// Numerically stable `log(sum(exp(s)))`.
pub fn logsumexp(scores: &[f64]) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln()
}

/// Log-softmax over the scores; fails on empty or non-finite input.
pub fn log_softmax(scores: &[f64]) -> Result<Vec<f64>, BackendError> {
    if scores.is_empty() {
        return Err(BackendError::Numeric("cannot renormalize an empty score list".into()));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(BackendError::Numeric(format!("non-finite score {bad}")));
    }
    let lse = logsumexp(scores);
    Ok(scores.iter().map(|s| s - lse).collect())
}

/// Renormalize raw scores over the candidate set.
///
/// `continuations` and `scores` are aligned; probabilities are
/// `exp(s_i - logsumexp(s))`.
pub fn renormalize(
    continuations: &[String],
    scores: &[f64],
) -> Result<CompletionDistribution, BackendError> {
    if continuations.len() != scores.len() {
        return Err(BackendError::Protocol(format!(
            "{} scores for {} continuations",
            scores.len(),
            continuations.len()
        )));
    }
    let logp = log_softmax(scores)?;
    Ok(CompletionDistribution {
        entries: continuations
            .iter()
            .zip(scores)
            .zip(logp)
            .map(|((c, &raw), lp)| DistributionEntry {
                continuation: c.clone(),
                logprob_raw: raw,
                probability: lp.exp(),
            })
            .collect(),
    })
}

impl CompletionDistribution {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.entries.iter().map(|e| e.probability).sum()
    }

    pub fn probability_of(&self, continuation: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.continuation == continuation)
            .map(|e| e.probability)
    }

    /// Continuation with the highest probability; the first one wins ties.
    pub fn argmax(&self) -> Option<&DistributionEntry> {
        self.entries.iter().fold(None, |best, e| match best {
            Some(b) if b.probability >= e.probability => Some(b),
            _ => Some(e),
        })
    }

    /// Expected value under `value_of`.
    ///
    /// Every continuation must map to a value. The result is clamped to the
    /// value range so rounding never pushes it outside.
    pub fn expected_value<F>(&self, value_of: F) -> Result<f64, BackendError>
    where
        F: Fn(&str) -> Option<f64>,
    {
        let mut mean = 0.0;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for e in &self.entries {
            let v = value_of(&e.continuation).ok_or_else(|| {
                BackendError::Contract(format!("no value for continuation `{}`", e.continuation))
            })?;
            lo = lo.min(v);
            hi = hi.max(v);
            mean += e.probability * v;
        }
        if self.entries.is_empty() {
            return Err(BackendError::Contract("empty distribution".into()));
        }
        Ok(mean.clamp(lo, hi))
    }
}

/// Value of an integer-string continuation such as `"7"` or `" 7"`.
pub fn integer_value(continuation: &str) -> Option<f64> {
    continuation.trim().parse::<i64>().ok().map(|v| v as f64)
}

/// `"0"`, `"1"`, ..., `"max"`.
pub fn integer_candidates(max: u32) -> Vec<String> {
    (0..=max).map(|v| v.to_string()).collect()
}
