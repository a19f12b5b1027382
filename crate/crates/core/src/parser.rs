//! Validation of raw completions against the one-integer response contract.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseFailure {
    Empty,
    NonNumeric,
    OutOfRange,
    ExtraContent,
}

/// Either a score in `0..=100` or the reason the text was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseOutcome {
    Score(u8),
    Failed(ParseFailure),
}

impl ParseOutcome {
    pub fn score(self) -> Option<u8> {
        match self {
            ParseOutcome::Score(s) => Some(s),
            ParseOutcome::Failed(_) => None,
        }
    }

    pub fn failure(self) -> Option<ParseFailure> {
        match self {
            ParseOutcome::Score(_) => None,
            ParseOutcome::Failed(f) => Some(f),
        }
    }
}

fn is_strip(c: char) -> bool {
    matches!(c, ' ' | '\t' | '\n' | '\r')
}

/// Accepts exactly one unsigned decimal integer in `[0, 100]`, surrounded
/// by optional spaces, tabs or newlines. Leading zeros are fine. Signs,
/// punctuation and words are not salvaged.
pub fn parse_score(raw: &str) -> ParseOutcome {
    let body = raw.trim_matches(is_strip);
    if body.is_empty() {
        return ParseOutcome::Failed(ParseFailure::Empty);
    }
    let signed = body.starts_with(['-', '+']) && body[1..].bytes().all(|b| b.is_ascii_digit());
    if signed || !body.bytes().any(|b| b.is_ascii_digit()) {
        return ParseOutcome::Failed(ParseFailure::NonNumeric);
    }
    if !body.bytes().all(|b| b.is_ascii_digit()) {
        return ParseOutcome::Failed(ParseFailure::ExtraContent);
    }
    let significant = body.trim_start_matches('0');
    if significant.len() > 3 {
        return ParseOutcome::Failed(ParseFailure::OutOfRange);
    }
    let value: u32 = if significant.is_empty() {
        0
    } else {
        significant.parse().expect("at most three ascii digits")
    };
    if value > 100 {
        ParseOutcome::Failed(ParseFailure::OutOfRange)
    } else {
        ParseOutcome::Score(value as u8)
    }
}

/// Lossy variant for byte input (e.g. undecoded transport bodies).
pub fn parse_score_bytes(raw: &[u8]) -> ParseOutcome {
    match std::str::from_utf8(raw) {
        Ok(s) => parse_score(s),
        Err(_) => parse_score(&String::from_utf8_lossy(raw)),
    }
}
