//! Response grammar: `<think>…</think><answer>{…}</answer>`.
//!
//! Parsing is total. Malformed text produces a [`ParsedResponse`] with
//! `structure_ok == false`; a body that cannot be read as the task's answer
//! produces a [`PayloadError`], which the reward engine maps to zero task reward.

use crate::labels::{consistent_pair, ComparisonChoice, DegradationClass, SeverityLevel, TaskKind};
use serde::{Deserialize, Serialize};

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
pub const ANSWER_OPEN: &str = "<answer>";
pub const ANSWER_CLOSE: &str = "</answer>";

const TAGS: [&str; 4] = [THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, ANSWER_CLOSE];

pub const KEY_RATING: &str = "rating";
pub const KEY_CLASS: &str = "distortion_class";
pub const KEY_SEVERITY: &str = "severity";
pub const KEY_CHOICE: &str = "choice";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedResponse {
    pub raw_text: String,
    pub think_body: String,
    pub answer_body: String,
    pub structure_ok: bool,
    pub json_shape_ok: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ParsedAnswer {
    Rating(f64),
    Degradation(DegradationClass, SeverityLevel),
    Comparison(ComparisonChoice),
}

impl ParsedAnswer {
    pub fn task(&self) -> TaskKind {
        match self {
            ParsedAnswer::Rating(_) => TaskKind::Score,
            ParsedAnswer::Degradation(..) => TaskKind::Degradation,
            ParsedAnswer::Comparison(_) => TaskKind::Comparison,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PayloadError {
    #[error("answer body is not a flat key/value list")]
    Malformed,
    #[error("key {0:?} appears more than once")]
    DuplicateKey(String),
    #[error("required key {0:?} is missing")]
    MissingKey(&'static str),
    #[error("rating {0:?} is not a decimal number")]
    NotNumeric(String),
    #[error("label {0:?} is outside the vocabulary")]
    UnknownLabel(String),
    #[error("null class and null severity must appear together")]
    InconsistentPair,
}

fn contains_tag(s: &str) -> bool {
    TAGS.iter().any(|t| s.contains(t))
}

/// Splits a response into its think and answer segments.
pub fn parse_response(raw_text: &str) -> ParsedResponse {
    match split_blocks(raw_text) {
        Some((think, answer)) => ParsedResponse {
            raw_text: raw_text.to_string(),
            think_body: think.to_string(),
            answer_body: answer.to_string(),
            structure_ok: true,
            json_shape_ok: json_shape_ok(answer),
        },
        None => ParsedResponse {
            raw_text: raw_text.to_string(),
            think_body: String::new(),
            answer_body: String::new(),
            structure_ok: false,
            json_shape_ok: false,
        },
    }
}

fn split_blocks(raw: &str) -> Option<(&str, &str)> {
    let rest = raw.trim().strip_prefix(THINK_OPEN)?;
    let end = rest.find(THINK_CLOSE)?;
    let think = &rest[..end];
    let rest = rest[end + THINK_CLOSE.len()..].trim_start();
    let rest = rest.strip_prefix(ANSWER_OPEN)?;
    let end = rest.find(ANSWER_CLOSE)?;
    let answer = &rest[..end];
    let tail = &rest[end + ANSWER_CLOSE.len()..];
    if contains_tag(think) || contains_tag(answer) || !tail.trim().is_empty() {
        return None;
    }
    Some((think, answer))
}

/// One `{` at the start, one `}` at the end, no other braces.
pub fn json_shape_ok(body: &str) -> bool {
    body.len() >= 2
        && body.starts_with('{')
        && body.ends_with('}')
        && body.matches('{').count() == 1
        && body.matches('}').count() == 1
}

/// 1 iff both the tag structure and the brace rule hold.
pub fn format_reward(parsed: &ParsedResponse) -> u8 {
    u8::from(parsed.structure_ok && parsed.json_shape_ok)
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Scalar {
    Quoted(String),
    Bare(String),
}

impl Scalar {
    fn text(&self) -> &str {
        match self {
            Scalar::Quoted(s) | Scalar::Bare(s) => s,
        }
    }
}

/// Reads `"key": value, "key": value` with optional outer braces. Values are
/// either double-quoted strings or bare runs up to the next comma.
fn parse_pairs(body: &str) -> Result<Vec<(String, Scalar)>, PayloadError> {
    let mut s = body.trim();
    if let Some(r) = s.strip_prefix('{') {
        s = r.trim();
    }
    if let Some(r) = s.strip_suffix('}') {
        s = r.trim();
    }
    let mut pairs: Vec<(String, Scalar)> = Vec::new();
    if s.is_empty() {
        return Ok(pairs);
    }
    loop {
        let r = s.strip_prefix('"').ok_or(PayloadError::Malformed)?;
        let close = r.find('"').ok_or(PayloadError::Malformed)?;
        let key = r[..close].to_string();
        let r = r[close + 1..].trim_start();
        let r = r.strip_prefix(':').ok_or(PayloadError::Malformed)?.trim_start();
        let (value, r) = if let Some(q) = r.strip_prefix('"') {
            let close = q.find('"').ok_or(PayloadError::Malformed)?;
            (Scalar::Quoted(q[..close].to_string()), &q[close + 1..])
        } else {
            let end = r.find(',').unwrap_or(r.len());
            let v = r[..end].trim();
            if v.is_empty() {
                return Err(PayloadError::Malformed);
            }
            (Scalar::Bare(v.to_string()), &r[end..])
        };
        if pairs.iter().any(|(k, _)| *k == key) {
            return Err(PayloadError::DuplicateKey(key));
        }
        pairs.push((key, value));
        let r = r.trim_start();
        if r.is_empty() {
            return Ok(pairs);
        }
        s = r.strip_prefix(',').ok_or(PayloadError::Malformed)?.trim_start();
    }
}

/// `[+-]?(digits[.digits*] | .digits)`; rejects exponents, inf and nan.
fn parse_decimal(s: &str) -> Option<f64> {
    let t = s.strip_prefix(['+', '-']).unwrap_or(s);
    let (int, frac) = match t.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (t, None),
    };
    let digits = |x: &str| x.bytes().all(|b| b.is_ascii_digit());
    let ok = digits(int) && frac.is_none_or(digits) && (!int.is_empty() || frac.is_some_and(|f| !f.is_empty()));
    if !ok {
        return None;
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn lookup<'a>(pairs: &'a [(String, Scalar)], key: &'static str) -> Result<&'a Scalar, PayloadError> {
    pairs
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v)
        .ok_or(PayloadError::MissingKey(key))
}

/// Extracts the typed answer for `task` from an answer body.
pub fn parse_answer_payload(answer_body: &str, task: TaskKind) -> Result<ParsedAnswer, PayloadError> {
    let pairs = parse_pairs(answer_body)?;
    match task {
        TaskKind::Score => match lookup(&pairs, KEY_RATING)? {
            Scalar::Bare(v) => parse_decimal(v)
                .map(ParsedAnswer::Rating)
                .ok_or_else(|| PayloadError::NotNumeric(v.clone())),
            Scalar::Quoted(v) => Err(PayloadError::NotNumeric(v.clone())),
        },
        TaskKind::Degradation => {
            let c = lookup(&pairs, KEY_CLASS)?.text();
            let s = lookup(&pairs, KEY_SEVERITY)?.text();
            let class = DegradationClass::parse(c).ok_or_else(|| PayloadError::UnknownLabel(c.into()))?;
            let sev = SeverityLevel::parse(s).ok_or_else(|| PayloadError::UnknownLabel(s.into()))?;
            if !consistent_pair(class, sev) {
                return Err(PayloadError::InconsistentPair);
            }
            Ok(ParsedAnswer::Degradation(class, sev))
        }
        TaskKind::Comparison => {
            let c = lookup(&pairs, KEY_CHOICE)?.text();
            ComparisonChoice::parse(c)
                .map(ParsedAnswer::Comparison)
                .ok_or_else(|| PayloadError::UnknownLabel(c.into()))
        }
    }
}

fn render_rating(v: f64) -> String {
    if (v * 100.0).round() / 100.0 == v {
        format!("{v:.2}")
    } else {
        format!("{v}")
    }
}

/// Canonical answer body, e.g. `{"rating": 3.00}`.
pub fn render_answer_body(answer: &ParsedAnswer) -> String {
    match answer {
        ParsedAnswer::Rating(v) => format!("{{\"{KEY_RATING}\": {}}}", render_rating(*v)),
        ParsedAnswer::Degradation(c, s) => {
            format!("{{\"{KEY_CLASS}\": \"{c}\", \"{KEY_SEVERITY}\": \"{s}\"}}")
        }
        ParsedAnswer::Comparison(c) => format!("{{\"{KEY_CHOICE}\": \"{}\"}}", c.answer_text()),
    }
}

/// Canonical well-formed response for `answer`.
pub fn render_response(answer: &ParsedAnswer, think_body: &str) -> String {
    format!(
        "{THINK_OPEN}{think_body}{THINK_CLOSE}{ANSWER_OPEN}{}{ANSWER_CLOSE}",
        render_answer_body(answer)
    )
}
