//! Human judgment corpora: record types, vote tallies and label distributions.
//!
//! Anecdotes carry five verdict classes which are collapsed onto a binary
//! (RIGHT, WRONG) tally about the story's author. Dilemmas carry a two-way
//! tally over which of two actions annotators found less ethical.

mod jsonl;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use jsonl::{
    parse_anecdotes, parse_anecdotes_str, parse_dilemmas, parse_dilemmas_str, write_anecdotes,
    write_dilemmas, LineError, ParseOptions, Parsed, RecordError,
};

/// Verdict classes of the anecdotes corpus, in canonical order.
pub const ANECDOTE_CLASSES: [&str; 5] = ["AUTHOR", "OTHER", "EVERYBODY", "NOBODY", "INFO"];
/// Binarized anecdote labels, in canonical order.
pub const BINARY_LABELS: [&str; 2] = ["RIGHT", "WRONG"];
/// Dilemma choices, in canonical order.
pub const DILEMMA_CHOICES: [&str; 2] = ["ACTION_ONE_LESS_ETHICAL", "ACTION_TWO_LESS_ETHICAL"];

const INFO_INDEX: usize = 4;

/// Normalization tolerance on Σ probs.
pub const SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CorpusError {
    #[error("{0} labels but {1} values")]
    LengthMismatch(usize, usize),
    #[error("need at least two classes, got {0}")]
    TooFewClasses(usize),
    #[error("all vote counts are zero")]
    NoVotes,
    #[error("probability {value} at index {index} is negative or not finite")]
    InvalidProbability { index: usize, value: f64 },
    #[error("probabilities sum to {0}, not 1")]
    NotNormalized(f64),
    #[error("expected labels {expected:?}, got {got:?}")]
    UnexpectedLabels { expected: Vec<String>, got: Vec<String> },
    #[error("all {info_votes} votes are INFO; instance skipped")]
    AllInfo { info_votes: u64 },
    #[error("no valid records ({rejected} lines rejected)")]
    NoValidRecords { rejected: usize },
    #[error("{0}")]
    Strict(LineError),
    #[error("failed reading input: {0}")]
    Io(String),
}

fn owned_labels(labels: &[&str]) -> Vec<String> {
    labels.iter().map(|s| s.to_string()).collect()
}

/// Non-negative integer tallies over an ordered label set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteCounts {
    labels: Vec<String>,
    counts: Vec<u64>,
}

impl VoteCounts {
    pub fn new(labels: Vec<String>, counts: Vec<u64>) -> Result<Self, CorpusError> {
        if labels.len() != counts.len() {
            return Err(CorpusError::LengthMismatch(labels.len(), counts.len()));
        }
        if labels.len() < 2 {
            return Err(CorpusError::TooFewClasses(labels.len()));
        }
        Ok(Self { labels, counts })
    }

    pub fn with_labels(labels: &[&str], counts: Vec<u64>) -> Result<Self, CorpusError> {
        Self::new(owned_labels(labels), counts)
    }

    pub fn anecdote(counts: [u64; 5]) -> Self {
        Self { labels: owned_labels(&ANECDOTE_CLASSES), counts: counts.to_vec() }
    }

    pub fn binary(right: u64, wrong: u64) -> Self {
        Self { labels: owned_labels(&BINARY_LABELS), counts: vec![right, wrong] }
    }

    pub fn dilemma(one: u64, two: u64) -> Self {
        Self { labels: owned_labels(&DILEMMA_CHOICES), counts: vec![one, two] }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Same tallies with labels and counts reordered by `order[new] = old`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            labels: order.iter().map(|&i| self.labels[i].clone()).collect(),
            counts: order.iter().map(|&i| self.counts[i]).collect(),
        }
    }
}

/// A probability vector over an ordered choice set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDistribution")]
pub struct ChoiceDistribution {
    labels: Vec<String>,
    probs: Vec<f64>,
}

#[derive(Deserialize)]
struct RawDistribution {
    labels: Vec<String>,
    probs: Vec<f64>,
}

impl TryFrom<RawDistribution> for ChoiceDistribution {
    type Error = CorpusError;

    fn try_from(raw: RawDistribution) -> Result<Self, Self::Error> {
        Self::new(raw.labels, raw.probs)
    }
}

impl ChoiceDistribution {
    pub fn new(labels: Vec<String>, probs: Vec<f64>) -> Result<Self, CorpusError> {
        if labels.len() != probs.len() {
            return Err(CorpusError::LengthMismatch(labels.len(), probs.len()));
        }
        if labels.len() < 2 {
            return Err(CorpusError::TooFewClasses(labels.len()));
        }
        for (index, &value) in probs.iter().enumerate() {
            if !(value.is_finite() && value >= 0.0) {
                return Err(CorpusError::InvalidProbability { index, value });
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(CorpusError::NotNormalized(sum));
        }
        Ok(Self { labels, probs })
    }

    pub fn with_labels(labels: &[&str], probs: Vec<f64>) -> Result<Self, CorpusError> {
        Self::new(owned_labels(labels), probs)
    }

    /// Uniform mass over the maximal entries of `votes`.
    pub fn majority(votes: &VoteCounts) -> Result<Self, CorpusError> {
        let max = votes.counts.iter().copied().max().unwrap_or(0);
        if max == 0 {
            return Err(CorpusError::NoVotes);
        }
        let winners = votes.counts.iter().filter(|&&c| c == max).count() as f64;
        let probs = votes
            .counts
            .iter()
            .map(|&c| if c == max { 1.0 / winners } else { 0.0 })
            .collect();
        Ok(Self { labels: votes.labels.clone(), probs })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            labels: order.iter().map(|&i| self.labels[i].clone()).collect(),
            probs: order.iter().map(|&i| self.probs[i]).collect(),
        }
    }
}

/// How tallies become a cross-entropy target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinarizeMode {
    /// The empirical vote distribution.
    #[default]
    Soft,
    /// One-hot on the plurality label; ties split evenly.
    Majority,
}

impl BinarizeMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Soft => "soft",
            Self::Majority => "majority",
        }
    }

    pub fn target(self, votes: &VoteCounts) -> Result<ChoiceDistribution, CorpusError> {
        match self {
            Self::Soft => normalize_counts(votes),
            Self::Majority => ChoiceDistribution::majority(votes),
        }
    }
}

impl std::fmt::Display for BinarizeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for BinarizeMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "soft" => Ok(Self::Soft),
            "majority" => Ok(Self::Majority),
            other => Err(format!("unknown binarize mode '{other}' (expected soft or majority)")),
        }
    }
}

/// Converts tallies into the empirical label distribution.
pub fn normalize_counts(votes: &VoteCounts) -> Result<ChoiceDistribution, CorpusError> {
    let total = votes.total();
    if total == 0 {
        return Err(CorpusError::NoVotes);
    }
    let n = total as f64;
    let probs = votes.counts.iter().map(|&c| c as f64 / n).collect();
    ChoiceDistribution::new(votes.labels.clone(), probs)
}

/// Collapses the five anecdote verdicts onto (RIGHT, WRONG).
///
/// AUTHOR and EVERYBODY both put the author in the wrong; OTHER and NOBODY
/// do not. INFO votes are abstentions and are dropped.
pub fn binarize_anecdote(votes: &VoteCounts) -> Result<VoteCounts, CorpusError> {
    if votes.labels != ANECDOTE_CLASSES {
        return Err(CorpusError::UnexpectedLabels {
            expected: owned_labels(&ANECDOTE_CLASSES),
            got: votes.labels.clone(),
        });
    }
    let c = &votes.counts;
    let wrong = c[0] + c[2];
    let right = c[1] + c[3];
    if right + wrong == 0 {
        return Err(CorpusError::AllInfo { info_votes: c[INFO_INDEX] });
    }
    Ok(VoteCounts::binary(right, wrong))
}

/// One anecdote from the forum-judgment corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnecdoteRecord {
    pub id: String,
    pub title: String,
    pub body: String,
    pub action: String,
    pub class_votes: VoteCounts,
}

impl AnecdoteRecord {
    pub fn info_votes(&self) -> u64 {
        self.class_votes.counts()[INFO_INDEX]
    }
}

/// One paired-action dilemma with its gold annotation tally.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DilemmaRecord {
    pub id: String,
    pub action_one: String,
    pub action_two: String,
    pub gold_votes: VoteCounts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dataset {
    Anecdotes,
    Dilemmas,
}

impl Dataset {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Anecdotes => "anecdotes",
            Self::Dilemmas => "dilemmas",
        }
    }

    /// Choice labels predictions and scores are expressed over.
    pub fn choice_labels(self) -> [&'static str; 2] {
        match self {
            Self::Anecdotes => BINARY_LABELS,
            Self::Dilemmas => DILEMMA_CHOICES,
        }
    }
}

impl std::fmt::Display for Dataset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Dataset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "anecdotes" => Ok(Self::Anecdotes),
            "dilemmas" => Ok(Self::Dilemmas),
            other => Err(format!("unknown dataset '{other}' (expected anecdotes or dilemmas)")),
        }
    }
}

/// Parsed records of either corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Records {
    Anecdotes(Vec<AnecdoteRecord>),
    Dilemmas(Vec<DilemmaRecord>),
}

impl Records {
    pub fn dataset(&self) -> Dataset {
        match self {
            Self::Anecdotes(_) => Dataset::Anecdotes,
            Self::Dilemmas(_) => Dataset::Dilemmas,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Self::Anecdotes(r) => r.len(),
            Self::Dilemmas(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Reads either corpus from a JSON-lines stream.
pub fn parse_records<R: std::io::BufRead>(
    dataset: Dataset,
    reader: R,
    options: ParseOptions,
) -> Result<(Records, Vec<LineError>), CorpusError> {
    Ok(match dataset {
        Dataset::Anecdotes => {
            let parsed = parse_anecdotes(reader, options)?;
            (Records::Anecdotes(parsed.records), parsed.errors)
        }
        Dataset::Dilemmas => {
            let parsed = parse_dilemmas(reader, options)?;
            (Records::Dilemmas(parsed.records), parsed.errors)
        }
    })
}

/// An instance ready for prompting and scoring: tallies over the choice set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledInstance {
    pub id: String,
    pub votes: VoteCounts,
    /// INFO abstentions dropped during binarization.
    pub dropped_info_votes: u64,
}

/// Outcome of mapping one record onto the choice set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Labeling {
    Labeled(LabeledInstance),
    Skipped { id: String, reason: String },
}

pub fn label_anecdote(record: &AnecdoteRecord) -> Labeling {
    match binarize_anecdote(&record.class_votes) {
        Ok(votes) => Labeling::Labeled(LabeledInstance {
            id: record.id.clone(),
            votes,
            dropped_info_votes: record.info_votes(),
        }),
        Err(err) => Labeling::Skipped { id: record.id.clone(), reason: err.to_string() },
    }
}

pub fn label_dilemma(record: &DilemmaRecord) -> Labeling {
    Labeling::Labeled(LabeledInstance {
        id: record.id.clone(),
        votes: record.gold_votes.clone(),
        dropped_info_votes: 0,
    })
}
