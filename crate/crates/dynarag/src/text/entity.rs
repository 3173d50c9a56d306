//! Rule-based entity extraction.
//!
//! A small closed set of shapes: capitalized runs, date patterns and digit
//! strings. This replaces an NER model with rules that are cheap to trace
//! by hand, which the detector training pipeline depends on.

use serde::{Deserialize, Serialize};

use super::{sentence_spans, tokenize_spans, TokenSpan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EntityKind {
    Name,
    Number,
    Date,
    /// Reserved for derived keyword terms; never produced by extraction.
    Term,
}

/// An entity with char offsets into its source text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub surface: String,
    pub kind: EntityKind,
    /// Char offset of the first scalar, inclusive.
    pub start: usize,
    /// Char offset one past the last scalar.
    pub end: usize,
}

const MONTHS: &[&str] = &[
    "january", "february", "march", "april", "may", "june", "july", "august", "september",
    "october", "november", "december", "jan", "feb", "mar", "apr", "jun", "jul", "aug", "sep",
    "sept", "oct", "nov", "dec",
];

fn is_month(tok: &TokenSpan) -> bool {
    MONTHS.contains(&tok.surface.to_lowercase().as_str())
}

fn is_number(tok: &TokenSpan) -> bool {
    let s = &tok.surface;
    let mut chars = s.chars();
    let first_digit = chars.next().map(|c| c.is_ascii_digit()).unwrap_or(false);
    first_digit && s.chars().all(|c| c.is_ascii_digit() || c == ',' || c == '.')
}

fn is_capitalized(tok: &TokenSpan) -> bool {
    tok.surface.chars().next().map(|c| c.is_uppercase()).unwrap_or(false)
}

/// Number of tokens a date pattern starting at `i` consumes, or 0.
///
/// Recognized shapes: "May 1994", "May 13, 1994" and "13 May 1994".
fn date_len(tokens: &[TokenSpan], i: usize) -> usize {
    let at = |k: usize| tokens.get(k);
    if let Some(t) = at(i) {
        if is_month(t) {
            if at(i + 1).map(is_number).unwrap_or(false) {
                let comma = at(i + 2).map(|t| t.surface == ",").unwrap_or(false);
                if comma && at(i + 3).map(is_number).unwrap_or(false) {
                    return 4;
                }
                return 2;
            }
            return 0;
        }
        if is_number(t) && at(i + 1).map(is_month).unwrap_or(false) {
            if at(i + 2).map(is_number).unwrap_or(false) {
                return 3;
            }
            return 2;
        }
    }
    0
}

/// Extracts entities in source order.
///
/// Date patterns take precedence over capitalized runs, so "In May 1994"
/// yields a date and never the run "In May". A lone capitalized token at a
/// sentence start is ordinary capitalization and is skipped; runs of two
/// or more are kept wherever they occur.
pub fn extract_entities(text: &str) -> Vec<Entity> {
    let tokens = tokenize_spans(text);
    let sentence_starts: Vec<usize> = sentence_spans(text).iter().map(|s| s.start).collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let dlen = date_len(&tokens, i);
        if dlen > 0 {
            out.push(make_entity(text, &tokens, i, i + dlen, EntityKind::Date));
            i += dlen;
            continue;
        }
        if is_capitalized(&tokens[i]) && tokens[i].surface.chars().next().unwrap().is_alphabetic() {
            let mut j = i + 1;
            while j < tokens.len()
                && is_capitalized(&tokens[j])
                && tokens[j].surface.chars().next().unwrap().is_alphabetic()
                && date_len(&tokens, j) == 0
            {
                j += 1;
            }
            let run = j - i;
            let at_sentence_start = sentence_starts.contains(&tokens[i].start);
            if run >= 2 || !at_sentence_start {
                out.push(make_entity(text, &tokens, i, j, EntityKind::Name));
            }
            i = j;
            continue;
        }
        if is_number(&tokens[i]) {
            out.push(make_entity(text, &tokens, i, i + 1, EntityKind::Number));
            i += 1;
            continue;
        }
        i += 1;
    }
    out
}

/// Whether the final token of `text` falls inside an entity.
///
/// Online variant of the training-time entity feature: it sees only the
/// text emitted so far, so an entity run that a later token would extend
/// is judged on the partial evidence available at this step.
pub fn last_token_is_entity(text: &str) -> bool {
    let tokens = tokenize_spans(text);
    let Some(last) = tokens.last() else {
        return false;
    };
    extract_entities(text).iter().any(|e| e.start <= last.start && last.end <= e.end)
}

fn make_entity(text: &str, tokens: &[TokenSpan], from: usize, to: usize, kind: EntityKind) -> Entity {
    let first = &tokens[from];
    let last = &tokens[to - 1];
    Entity {
        surface: text[first.byte_start..last.byte_end].to_string(),
        kind,
        start: first.start,
        end: last.end,
    }
}
