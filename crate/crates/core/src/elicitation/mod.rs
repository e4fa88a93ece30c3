//! Prompting and next-token choice probabilities from an OpenAI-compatible
//! endpoint.

mod cache;
mod client;
mod extract;
pub mod mock;
mod prompt;
mod wire;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ChoiceDistribution, CorpusError};

pub use cache::{CacheEntry, CacheKey, PredictionCache};
pub use client::{Elicited, ElicitJob, Elicitor, HttpReply, Transport, UreqTransport, API_KEY_ENV};
pub use extract::{
    extract_choice_probabilities, token_variants, ChoiceVariants, ExtractedChoice, DEFAULT_COVERAGE_THRESHOLD,
};
pub use prompt::{
    approx_tokens, build_anecdote_prompt, build_dilemma_prompt, FewShotExample, PromptTemplate, TemplateError,
    TRUNCATION_MARKER,
};
pub use wire::{
    chat_request_body, completions_request_body, decode_chat_response, decode_completions_response,
    decode_response, request_body, ApiKind, EndpointConfig, MAX_TOKENS, TEMPERATURE,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ElicitError {
    #[error("matched choice mass {mass} is below the coverage threshold {threshold}")]
    LowCoverage { mass: f64, threshold: f64 },
    #[error("logprob for token {token:?} is {logprob}")]
    InvalidLogprob { token: String, logprob: f64 },
    #[error("variant {form:?} matches both {first:?} and {second:?}")]
    OverlappingVariants { form: String, first: String, second: String },
    #[error("transport error from {endpoint} after {attempts} attempts: {detail}")]
    Transport { endpoint: String, attempts: u32, detail: String },
    #[error("HTTP {status} from {endpoint}: {detail}")]
    Http { endpoint: String, status: u16, detail: String },
    #[error("protocol error from {endpoint}: {detail}")]
    Protocol { endpoint: String, detail: String },
    #[error("invalid endpoint configuration: {0}")]
    Config(String),
    #[error("cache error: {0}")]
    Cache(String),
    #[error("predictions line {line}: {detail}")]
    PredictionsFile { line: usize, detail: String },
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

impl ElicitError {
    /// Errors that exclude one instance rather than stopping a run.
    pub fn is_exclusion(&self) -> bool {
        matches!(self, Self::LowCoverage { .. })
    }

    /// The reason recorded on an excluded instance.
    pub fn exclusion_reason(&self) -> Option<String> {
        match self {
            Self::LowCoverage { mass, threshold } => {
                Some(format!("low-coverage: choice mass {mass:.6} below {threshold}"))
            }
            _ => None,
        }
    }
}

/// Ordered choice labels with the surface token that stands for each.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceSet {
    labels: Vec<String>,
    tokens: Vec<String>,
}

impl ChoiceSet {
    pub fn new(labels: &[&str], tokens: &[&str]) -> Result<Self, ElicitError> {
        Self::from_owned(
            labels.iter().map(|s| s.to_string()).collect(),
            tokens.iter().map(|s| s.to_string()).collect(),
        )
    }

    pub fn from_owned(labels: Vec<String>, tokens: Vec<String>) -> Result<Self, ElicitError> {
        if labels.len() != 2 || tokens.len() != 2 {
            return Err(ElicitError::Config(format!(
                "a choice set needs exactly two labels and two tokens, got {} and {}",
                labels.len(),
                tokens.len()
            )));
        }
        if tokens.iter().any(|t| t.trim().is_empty()) {
            return Err(ElicitError::Config("choice tokens must not be blank".into()));
        }
        Ok(Self { labels, tokens })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Cache,
    Live,
}

/// A model's renormalized choice probabilities for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoicePrediction {
    pub instance_id: String,
    pub probs: ChoiceDistribution,
    pub raw_choice_mass: f64,
    pub provenance: Provenance,
}

/// A prediction, or the reason the instance has none.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum PredictionOutcome {
    Predicted(ChoicePrediction),
    Excluded { instance_id: String, reason: String },
}

impl PredictionOutcome {
    pub fn instance_id(&self) -> &str {
        match self {
            Self::Predicted(p) => &p.instance_id,
            Self::Excluded { instance_id, .. } => instance_id,
        }
    }
}

/// Reads a JSON-lines predictions file. Blank lines are ignored.
pub fn parse_predictions<R: std::io::BufRead>(reader: R) -> Result<Vec<PredictionOutcome>, ElicitError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let err = |detail: String| ElicitError::PredictionsFile { line: i + 1, detail };
        let line = line.map_err(|e| err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| err(e.to_string()))?);
    }
    Ok(out)
}

pub fn write_predictions<W: std::io::Write>(mut writer: W, predictions: &[PredictionOutcome]) -> std::io::Result<()> {
    for p in predictions {
        serde_json::to_writer(&mut writer, p)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}
