//! Few-shot prompt assembly for both corpora.
//!
//! Templates are data: the shipped defaults live in `templates/*.json` and
//! can be replaced per run. `{first}` and `{second}` in the question are
//! replaced by the two answer tokens.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{AnecdoteRecord, Dataset, DilemmaRecord};

use super::ChoiceSet;

pub const TRUNCATION_MARKER: &str = "[... text truncated]";

const DEFAULT_DILEMMAS: &str = include_str!("../../templates/dilemmas.json");
const DEFAULT_ANECDOTES: &str = include_str!("../../templates/anecdotes.json");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("template instruction must not be empty")]
    EmptyInstruction,
    #[error("template question must not be empty")]
    EmptyQuestion,
    #[error("answer format needs two non-blank tokens that differ beyond case and leading space, got {0:?}")]
    AnswerFormat(Vec<String>),
    #[error("{count} few-shot examples exceed the configured maximum of {max}")]
    TooManyExamples { count: usize, max: usize },
    #[error("few-shot example {index} answers {answer:?}, which is not one of {choices:?}")]
    UnknownAnswer { index: usize, answer: String, choices: Vec<String> },
    #[error("prompt needs about {needed} tokens without any body text, budget is {budget}")]
    PromptTooLong { needed: usize, budget: usize },
    #[error("invalid template JSON: {0}")]
    Json(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub scenario: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub instruction: String,
    pub question: String,
    /// Surface tokens for the two choices, in choice-label order.
    pub answer_format: Vec<String>,
    #[serde(default)]
    pub few_shot_examples: Vec<FewShotExample>,
    #[serde(default = "default_max_examples")]
    pub max_examples: usize,
    /// Approximate token budget for the whole prompt; only anecdote bodies
    /// are truncated to fit.
    #[serde(default)]
    pub token_budget: Option<usize>,
}

fn default_max_examples() -> usize {
    8
}

/// Rough token count: one token per four characters.
pub fn approx_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

impl PromptTemplate {
    pub fn from_json(text: &str) -> Result<Self, TemplateError> {
        let template: Self = serde_json::from_str(text).map_err(|e| TemplateError::Json(e.to_string()))?;
        template.validate()?;
        Ok(template)
    }

    pub fn default_for(dataset: Dataset) -> Self {
        let text = match dataset {
            Dataset::Dilemmas => DEFAULT_DILEMMAS,
            Dataset::Anecdotes => DEFAULT_ANECDOTES,
        };
        Self::from_json(text).expect("bundled template is valid")
    }

    pub fn validate(&self) -> Result<(), TemplateError> {
        if self.instruction.trim().is_empty() {
            return Err(TemplateError::EmptyInstruction);
        }
        if self.question.trim().is_empty() {
            return Err(TemplateError::EmptyQuestion);
        }
        let tokens = &self.answer_format;
        if tokens.len() != 2
            || tokens.iter().any(|t| t.trim().is_empty())
            || super::token_variants(&tokens[0]).iter().any(|v| super::token_variants(&tokens[1]).contains(v))
        {
            return Err(TemplateError::AnswerFormat(tokens.clone()));
        }
        if self.few_shot_examples.len() > self.max_examples {
            return Err(TemplateError::TooManyExamples { count: self.few_shot_examples.len(), max: self.max_examples });
        }
        for (index, ex) in self.few_shot_examples.iter().enumerate() {
            if !tokens.contains(&ex.answer) {
                return Err(TemplateError::UnknownAnswer {
                    index,
                    answer: ex.answer.clone(),
                    choices: tokens.clone(),
                });
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("template serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    pub fn choice_set(&self, dataset: Dataset) -> ChoiceSet {
        let labels: Vec<String> = dataset.choice_labels().iter().map(|s| s.to_string()).collect();
        ChoiceSet::from_owned(labels, self.answer_format.clone()).expect("validated answer format")
    }

    fn rendered_question(&self) -> String {
        self.question.replace("{first}", &self.answer_format[0]).replace("{second}", &self.answer_format[1])
    }

    fn preamble(&self) -> String {
        let question = self.rendered_question();
        let mut out = String::new();
        out.push_str(self.instruction.trim_end());
        out.push_str("\n\n");
        for ex in &self.few_shot_examples {
            out.push_str(ex.scenario.trim_end());
            out.push('\n');
            out.push_str(&question);
            out.push('\n');
            out.push_str(&ex.answer);
            out.push_str("\n\n");
        }
        out
    }
}

/// Few-shot examples, both actions, then the question.
pub fn build_dilemma_prompt(record: &DilemmaRecord, template: &PromptTemplate) -> String {
    let mut out = template.preamble();
    out.push_str("Action 1: ");
    out.push_str(&record.action_one);
    out.push_str("\nAction 2: ");
    out.push_str(&record.action_two);
    out.push('\n');
    out.push_str(&template.rendered_question());
    out
}

fn anecdote_prompt(preamble: &str, record: &AnecdoteRecord, body: &str, question: &str) -> String {
    format!(
        "{preamble}Title: {}\nText: {body}\nAction: {}\n{question}",
        record.title, record.action
    )
}

/// Few-shot examples, title, body and action, then the question. Bodies that
/// push the prompt past the template's token budget are cut from the end and
/// marked with [`TRUNCATION_MARKER`].
pub fn build_anecdote_prompt(record: &AnecdoteRecord, template: &PromptTemplate) -> Result<String, TemplateError> {
    let preamble = template.preamble();
    let question = template.rendered_question();
    let full = anecdote_prompt(&preamble, record, &record.body, &question);
    let Some(budget) = template.token_budget else {
        return Ok(full);
    };
    if approx_tokens(&full) <= budget {
        return Ok(full);
    }
    let skeleton = anecdote_prompt(&preamble, record, TRUNCATION_MARKER, &question);
    let fixed = skeleton.chars().count();
    let available = (budget * 4).saturating_sub(fixed + 1);
    if available == 0 || fixed > budget * 4 {
        return Err(TemplateError::PromptTooLong { needed: approx_tokens(&skeleton), budget });
    }
    let cut: String = record.body.chars().take(available).collect();
    let cut = match cut.rfind(char::is_whitespace) {
        Some(pos) if pos > 0 => cut[..pos].trim_end().to_string(),
        _ => cut,
    };
    let body = format!("{cut} {TRUNCATION_MARKER}");
    Ok(anecdote_prompt(&preamble, record, &body, &question))
}
