use std::fmt;
use std::io::{BufRead, Write};

use serde::Serialize;
use serde_json::{Map, Value};

use super::{
    binarize_anecdote, normalize_counts, AnecdoteRecord, CorpusError, DilemmaRecord, VoteCounts,
    ANECDOTE_CLASSES,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseOptions {
    /// Abort on the first malformed line instead of collecting it.
    pub strict: bool,
}

/// Why a single line was rejected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RecordError {
    InvalidUtf8,
    InvalidJson(String),
    NotObject,
    MissingField(String),
    InvalidField { field: String, expected: &'static str },
    EmptyField(String),
    ActionCount(usize),
    VoteArity { field: String, expected: usize, got: usize },
    NoAnnotations,
}

impl fmt::Display for RecordError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InvalidUtf8 => f.write_str("line is not valid UTF-8"),
            Self::InvalidJson(e) => write!(f, "invalid JSON: {e}"),
            Self::NotObject => f.write_str("record must be a JSON object"),
            Self::MissingField(field) => write!(f, "missing required field '{field}'"),
            Self::InvalidField { field, expected } => {
                write!(f, "field '{field}' must be {expected}")
            }
            Self::EmptyField(field) => write!(f, "field '{field}' must not be empty"),
            Self::ActionCount(n) => write!(f, "expected exactly two actions, got {n}"),
            Self::VoteArity { field, expected, got } => {
                write!(f, "field '{field}' must hold {expected} counts, got {got}")
            }
            Self::NoAnnotations => f.write_str("no annotations"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineError {
    /// 1-based line number.
    pub line: usize,
    pub kind: RecordError,
}

impl fmt::Display for LineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.kind)
    }
}

impl std::error::Error for LineError {}

/// Records in input order plus the lines that were rejected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Parsed<T> {
    pub records: Vec<T>,
    pub errors: Vec<LineError>,
}

fn parse_lines<R, T, F>(mut reader: R, options: ParseOptions, decode: F) -> Result<Parsed<T>, CorpusError>
where
    R: BufRead,
    F: Fn(&Map<String, Value>) -> Result<T, RecordError>,
{
    let mut records = Vec::new();
    let mut errors = Vec::new();
    let mut buf = Vec::new();
    let mut line = 0usize;
    loop {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf).map_err(|e| CorpusError::Io(e.to_string()))?;
        if n == 0 {
            break;
        }
        line += 1;
        let outcome = decode_line(&buf, &decode);
        match outcome {
            None => {}
            Some(Ok(record)) => records.push(record),
            Some(Err(kind)) => {
                let err = LineError { line, kind };
                if options.strict {
                    return Err(CorpusError::Strict(err));
                }
                errors.push(err);
            }
        }
    }
    if records.is_empty() {
        return Err(CorpusError::NoValidRecords { rejected: errors.len() });
    }
    Ok(Parsed { records, errors })
}

fn decode_line<T, F>(raw: &[u8], decode: &F) -> Option<Result<T, RecordError>>
where
    F: Fn(&Map<String, Value>) -> Result<T, RecordError>,
{
    let text = match std::str::from_utf8(raw) {
        Ok(text) => text,
        Err(_) => return Some(Err(RecordError::InvalidUtf8)),
    };
    let text = text.trim();
    if text.is_empty() {
        return None;
    }
    let value: Value = match serde_json::from_str(text) {
        Ok(v) => v,
        Err(e) => return Some(Err(RecordError::InvalidJson(e.to_string()))),
    };
    Some(match value.as_object() {
        Some(obj) => decode(obj),
        None => Err(RecordError::NotObject),
    })
}

fn required<'a>(obj: &'a Map<String, Value>, field: &str) -> Result<&'a Value, RecordError> {
    obj.get(field).ok_or_else(|| RecordError::MissingField(field.to_string()))
}

fn string_field(obj: &Map<String, Value>, field: &str) -> Result<String, RecordError> {
    match required(obj, field)? {
        Value::String(s) => Ok(s.clone()),
        _ => Err(RecordError::InvalidField { field: field.to_string(), expected: "a string" }),
    }
}

fn non_empty_string(obj: &Map<String, Value>, field: &str) -> Result<String, RecordError> {
    let s = string_field(obj, field)?;
    if s.trim().is_empty() {
        return Err(RecordError::EmptyField(field.to_string()));
    }
    Ok(s)
}

fn record_id(obj: &Map<String, Value>) -> Result<String, RecordError> {
    match required(obj, "id")? {
        Value::String(s) if !s.is_empty() => Ok(s.clone()),
        Value::String(_) => Err(RecordError::EmptyField("id".into())),
        Value::Number(n) => Ok(n.to_string()),
        _ => Err(RecordError::InvalidField { field: "id".into(), expected: "a string" }),
    }
}

fn count(value: &Value, field: &str) -> Result<u64, RecordError> {
    value.as_u64().ok_or_else(|| RecordError::InvalidField {
        field: field.to_string(),
        expected: "a non-negative integer",
    })
}

/// Action descriptions appear either as plain strings or as `{"description": ...}`.
fn action_text(value: &Value, field: &str) -> Result<String, RecordError> {
    match value {
        Value::String(s) => Ok(s.clone()),
        Value::Null => Ok(String::new()),
        Value::Object(obj) => match obj.get("description") {
            Some(Value::String(s)) => Ok(s.clone()),
            Some(Value::Null) | None => Ok(String::new()),
            Some(_) => Err(RecordError::InvalidField {
                field: format!("{field}.description"),
                expected: "a string",
            }),
        },
        _ => Err(RecordError::InvalidField {
            field: field.to_string(),
            expected: "a string or an object with a description",
        }),
    }
}

fn decode_anecdote(obj: &Map<String, Value>) -> Result<AnecdoteRecord, RecordError> {
    let id = record_id(obj)?;
    let title = non_empty_string(obj, "title")?;
    let body = non_empty_string(obj, "text")?;
    let action = action_text(required(obj, "action")?, "action")?;
    let scores = match required(obj, "label_scores")? {
        Value::Object(m) => m,
        _ => {
            return Err(RecordError::InvalidField {
                field: "label_scores".into(),
                expected: "an object of per-class counts",
            })
        }
    };
    let mut counts = [0u64; 5];
    for (slot, class) in counts.iter_mut().zip(ANECDOTE_CLASSES) {
        let field = format!("label_scores.{class}");
        let value = scores.get(class).ok_or_else(|| RecordError::MissingField(field.clone()))?;
        *slot = count(value, &field)?;
    }
    Ok(AnecdoteRecord { id, title, body, action, class_votes: VoteCounts::anecdote(counts) })
}

fn decode_dilemma(obj: &Map<String, Value>) -> Result<DilemmaRecord, RecordError> {
    let id = record_id(obj)?;
    let actions = match required(obj, "actions")? {
        Value::Array(a) => a,
        _ => {
            return Err(RecordError::InvalidField {
                field: "actions".into(),
                expected: "an array of two actions",
            })
        }
    };
    if actions.len() != 2 {
        return Err(RecordError::ActionCount(actions.len()));
    }
    let action_one = action_text(&actions[0], "actions[0]")?;
    let action_two = action_text(&actions[1], "actions[1]")?;
    for (text, field) in [(&action_one, "actions[0]"), (&action_two, "actions[1]")] {
        if text.trim().is_empty() {
            return Err(RecordError::EmptyField(field.into()));
        }
    }
    let gold = match required(obj, "gold_annotations")? {
        Value::Array(a) => a,
        _ => {
            return Err(RecordError::InvalidField {
                field: "gold_annotations".into(),
                expected: "an array of two counts",
            })
        }
    };
    if gold.len() != 2 {
        return Err(RecordError::VoteArity {
            field: "gold_annotations".into(),
            expected: 2,
            got: gold.len(),
        });
    }
    let one = count(&gold[0], "gold_annotations[0]")?;
    let two = count(&gold[1], "gold_annotations[1]")?;
    if one + two == 0 {
        return Err(RecordError::NoAnnotations);
    }
    Ok(DilemmaRecord { id, action_one, action_two, gold_votes: VoteCounts::dilemma(one, two) })
}

/// Reads anecdote records, one JSON object per line.
pub fn parse_anecdotes<R: BufRead>(reader: R, options: ParseOptions) -> Result<Parsed<AnecdoteRecord>, CorpusError> {
    parse_lines(reader, options, decode_anecdote)
}

pub fn parse_anecdotes_str(input: &str, options: ParseOptions) -> Result<Parsed<AnecdoteRecord>, CorpusError> {
    parse_anecdotes(input.as_bytes(), options)
}

/// Reads dilemma records, one JSON object per line.
pub fn parse_dilemmas<R: BufRead>(reader: R, options: ParseOptions) -> Result<Parsed<DilemmaRecord>, CorpusError> {
    parse_lines(reader, options, decode_dilemma)
}

pub fn parse_dilemmas_str(input: &str, options: ParseOptions) -> Result<Parsed<DilemmaRecord>, CorpusError> {
    parse_dilemmas(input.as_bytes(), options)
}

#[derive(Serialize)]
struct ClassScores {
    #[serde(rename = "AUTHOR")]
    author: u64,
    #[serde(rename = "OTHER")]
    other: u64,
    #[serde(rename = "EVERYBODY")]
    everybody: u64,
    #[serde(rename = "NOBODY")]
    nobody: u64,
    #[serde(rename = "INFO")]
    info: u64,
}

#[derive(Serialize)]
struct BinaryScores {
    #[serde(rename = "RIGHT")]
    right: u64,
    #[serde(rename = "WRONG")]
    wrong: u64,
}

#[derive(Serialize)]
struct CanonicalAnecdote<'a> {
    id: &'a str,
    title: &'a str,
    text: &'a str,
    action: &'a str,
    label_scores: ClassScores,
    binarized_label_scores: Option<BinaryScores>,
    binarized_distribution: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct CanonicalAction<'a> {
    description: &'a str,
}

#[derive(Serialize)]
struct CanonicalDilemma<'a> {
    id: &'a str,
    actions: [CanonicalAction<'a>; 2],
    gold_annotations: [u64; 2],
    gold_distribution: Vec<f64>,
}

/// Writes anecdotes as canonical JSON-lines with derived binary tallies.
///
/// The output is readable by [`parse_anecdotes`]; derived fields are ignored
/// on re-read.
pub fn write_anecdotes<W: Write>(records: &[AnecdoteRecord], mut out: W) -> std::io::Result<()> {
    for r in records {
        let c = r.class_votes.counts();
        let binary = binarize_anecdote(&r.class_votes).ok();
        let line = CanonicalAnecdote {
            id: &r.id,
            title: &r.title,
            text: &r.body,
            action: &r.action,
            label_scores: ClassScores {
                author: c[0],
                other: c[1],
                everybody: c[2],
                nobody: c[3],
                info: c[4],
            },
            binarized_label_scores: binary
                .as_ref()
                .map(|b| BinaryScores { right: b.counts()[0], wrong: b.counts()[1] }),
            binarized_distribution: binary
                .as_ref()
                .and_then(|b| normalize_counts(b).ok())
                .map(|d| d.probs().to_vec()),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Writes dilemmas as canonical JSON-lines with the normalized gold distribution.
pub fn write_dilemmas<W: Write>(records: &[DilemmaRecord], mut out: W) -> std::io::Result<()> {
    for r in records {
        let c = r.gold_votes.counts();
        let line = CanonicalDilemma {
            id: &r.id,
            actions: [
                CanonicalAction { description: &r.action_one },
                CanonicalAction { description: &r.action_two },
            ],
            gold_annotations: [c[0], c[1]],
            gold_distribution: normalize_counts(&r.gold_votes)
                .map(|d| d.probs().to_vec())
                .unwrap_or_default(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
