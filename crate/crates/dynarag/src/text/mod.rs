//! Tokenization and text segmentation.
//!
//! All offsets handed out by this module count Unicode scalar values, not
//! bytes. The rules are deliberately small and deterministic; they stand in
//! for the tagger-based preprocessing a production deployment would use.

mod embed;
mod entity;

pub use embed::{cosine, embed, EmbeddingVector, EMBED_DIM};
pub use entity::{extract_entities, last_token_is_entity, Entity, EntityKind};

use crate::types::TokenRecord;

/// A token with its location in the source text.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSpan {
    pub surface: String,
    /// Char offset of the first scalar, inclusive.
    pub start: usize,
    /// Char offset one past the last scalar.
    pub end: usize,
    pub(crate) byte_start: usize,
    pub(crate) byte_end: usize,
}

/// Splits text into word and punctuation tokens.
///
/// Words are maximal alphanumeric runs. A few in-word joiners keep common
/// shapes whole: dots in short dotted abbreviations ("D.C.", "e.g."),
/// commas and dots between digits ("2,000", "3.5"), apostrophes between
/// letters ("don't") and hyphens between alphanumerics. Everything else
/// that is not whitespace becomes a single-character token.
pub fn tokenize_spans(text: &str) -> Vec<TokenSpan> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let n = chars.len();
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        let (_, c) = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_alphanumeric() {
            let mut j = i + 1;
            while j < n {
                let cj = chars[j].1;
                if cj.is_alphanumeric() {
                    j += 1;
                    continue;
                }
                let prev = chars[j - 1].1;
                let next = if j + 1 < n { Some(chars[j + 1].1) } else { None };
                let word_so_far: String = chars[i..j].iter().map(|&(_, ch)| ch).collect();
                if joiner_extends(cj, prev, next, &word_so_far) {
                    j += 1;
                } else {
                    break;
                }
            }
            push_span(&mut out, text, &chars, start, j);
            i = j;
        } else {
            push_span(&mut out, text, &chars, start, i + 1);
            i += 1;
        }
    }
    out
}

/// Decides whether punctuation `cj` stays inside the current word.
fn joiner_extends(cj: char, prev: char, next: Option<char>, word_so_far: &str) -> bool {
    match cj {
        '.' => {
            let next_alpha = next.map(|c| c.is_alphabetic()).unwrap_or(false);
            let next_digit = next.map(|c| c.is_ascii_digit()).unwrap_or(false);
            if prev.is_ascii_digit() && next_digit {
                return true;
            }
            if prev.is_alphabetic() && next_alpha {
                return dotted_abbrev_prefix(word_so_far);
            }
            // Trailing dot sticks to an already dotted abbreviation.
            if prev.is_alphabetic() && !next_alpha && word_so_far.contains('.') {
                return dotted_abbrev_prefix(word_so_far);
            }
            false
        }
        ',' => prev.is_ascii_digit() && next.map(|c| c.is_ascii_digit()).unwrap_or(false),
        '\'' | '\u{2019}' => {
            prev.is_alphabetic() && next.map(|c| c.is_alphabetic()).unwrap_or(false)
        }
        '-' => prev.is_alphanumeric() && next.map(|c| c.is_alphanumeric()).unwrap_or(false),
        _ => false,
    }
}

/// True when every dot-separated segment is one or two letters, as in
/// "D", "U.S" or "e.g".
fn dotted_abbrev_prefix(word: &str) -> bool {
    word.split('.').all(|seg| {
        let len = seg.chars().count();
        (1..=2).contains(&len) && seg.chars().all(|c| c.is_alphabetic())
    })
}

fn push_span(out: &mut Vec<TokenSpan>, text: &str, chars: &[(usize, char)], start: usize, end: usize) {
    let byte_start = chars[start].0;
    let byte_end = if end < chars.len() { chars[end].0 } else { text.len() };
    out.push(TokenSpan {
        surface: text[byte_start..byte_end].to_string(),
        start,
        end,
        byte_start,
        byte_end,
    });
}

/// Tokenizes into records with 1-based positions and no statistics.
pub fn tokenize(text: &str) -> Vec<TokenRecord> {
    tokenize_spans(text)
        .into_iter()
        .enumerate()
        .map(|(i, s)| TokenRecord::new(s.surface, i + 1))
        .collect()
}

/// A sentence with its location in the source text.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceSpan {
    pub text: String,
    /// Char offset of the first scalar, inclusive.
    pub start: usize,
    /// Char offset one past the last scalar.
    pub end: usize,
    pub(crate) byte_start: usize,
    pub(crate) byte_end: usize,
}

/// Words whose trailing period does not end a sentence.
const ABBREVIATIONS: &[&str] = &[
    "dr", "mr", "mrs", "ms", "prof", "st", "mt", "jr", "sr", "vs", "etc", "no", "fig", "gen",
    "col", "lt", "sgt", "capt", "rev", "hon", "inc", "ltd", "co", "corp", "dept", "univ", "al",
];

/// Splits text into sentences with source offsets.
///
/// A run of `.`, `!` or `?` ends a sentence when it is followed by
/// whitespace and an uppercase letter, or by the end of the text. A single
/// period after a known abbreviation does not split.
pub fn sentence_spans(text: &str) -> Vec<SentenceSpan> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let n = chars.len();
    let mut out = Vec::new();
    let mut sent_start: Option<usize> = None;
    let mut i = 0;
    while i < n {
        let c = chars[i].1;
        if sent_start.is_none() {
            if c.is_whitespace() {
                i += 1;
                continue;
            }
            sent_start = Some(i);
        }
        if matches!(c, '.' | '!' | '?') {
            let mut j = i;
            while j + 1 < n && matches!(chars[j + 1].1, '.' | '!' | '?') {
                j += 1;
            }
            let follows_ws = j + 1 >= n || chars[j + 1].1.is_whitespace();
            let next_word = (j + 1..n).find(|&k| !chars[k].1.is_whitespace());
            let next_caps = match next_word {
                None => true,
                Some(k) => chars[k].1.is_uppercase(),
            };
            let mut boundary = follows_ws && next_caps;
            if boundary && j == i && c == '.' && guarded_abbreviation(&chars, i) {
                boundary = false;
            }
            if boundary {
                let start = sent_start.unwrap();
                push_sentence(&mut out, text, &chars, start, j + 1);
                sent_start = None;
                i = j + 1;
                continue;
            }
            i = j + 1;
            continue;
        }
        i += 1;
    }
    if let Some(start) = sent_start {
        // Trailing text without a terminal forms the final sentence.
        let mut end = n;
        while end > start && chars[end - 1].1.is_whitespace() {
            end -= 1;
        }
        if end > start {
            push_sentence(&mut out, text, &chars, start, end);
        }
    }
    out
}

/// True when the word directly before the period at `idx` is a guarded
/// abbreviation.
fn guarded_abbreviation(chars: &[(usize, char)], idx: usize) -> bool {
    let mut k = idx;
    let mut word = String::new();
    while k > 0 {
        let c = chars[k - 1].1;
        if c.is_alphanumeric() || c == '.' {
            word.insert(0, c);
            k -= 1;
        } else {
            break;
        }
    }
    let word = word.trim_matches('.').to_lowercase();
    !word.is_empty() && ABBREVIATIONS.contains(&word.as_str())
}

fn push_sentence(out: &mut Vec<SentenceSpan>, text: &str, chars: &[(usize, char)], start: usize, end: usize) {
    let byte_start = chars[start].0;
    let byte_end = if end < chars.len() { chars[end].0 } else { text.len() };
    out.push(SentenceSpan {
        text: text[byte_start..byte_end].to_string(),
        start,
        end,
        byte_start,
        byte_end,
    });
}

/// Sentence texts without offsets.
pub fn split_sentences(text: &str) -> Vec<String> {
    sentence_spans(text).into_iter().map(|s| s.text).collect()
}

const CONJUNCTIONS: &[&str] = &["and", "but", "or", "which", "that"];

/// Splits one sentence into sub-clauses.
///
/// Cut points sit after `,` `;` `:` and before the conjunctions "and",
/// "but", "or", "which" and "that", and apply only when both sides keep at
/// least three tokens, punctuation included. The separator stays with the
/// left side, a conjunction starts the right side.
pub fn split_subclauses(sentence: &str) -> Vec<String> {
    let spans = tokenize_spans(sentence);
    let n = spans.len();
    if n == 0 {
        return Vec::new();
    }
    let mut cuts = Vec::new();
    let mut seg_start = 0usize;
    for i in 0..n {
        let t = spans[i].surface.as_str();
        let cut_at = if matches!(t, "," | ";" | ":") {
            Some(i + 1)
        } else if i > seg_start && CONJUNCTIONS.contains(&t.to_lowercase().as_str()) {
            Some(i)
        } else {
            None
        };
        if let Some(k) = cut_at {
            if k >= n {
                continue;
            }
            let left = k - seg_start;
            let right = n - k;
            if left >= 3 && right >= 3 {
                cuts.push(k);
                seg_start = k;
            }
        }
    }
    let mut pieces = Vec::with_capacity(cuts.len() + 1);
    let mut from = 0usize;
    for &k in cuts.iter().chain(std::iter::once(&n)) {
        let byte_start = spans[from].byte_start;
        let byte_end = spans[k - 1].byte_end;
        pieces.push(sentence[byte_start..byte_end].to_string());
        from = k;
    }
    pieces
}

/// Joins token surfaces with spaces, attaching punctuation-only tokens
/// directly to the previous token.
pub fn join_tokens<'a>(surfaces: impl IntoIterator<Item = &'a str>) -> String {
    join_tokens_spans(surfaces).0
}

/// Like [`join_tokens`], also reporting each surface's (start, end) char
/// offsets in the joined string.
pub fn join_tokens_spans<'a>(
    surfaces: impl IntoIterator<Item = &'a str>,
) -> (String, Vec<(usize, usize)>) {
    let mut out = String::new();
    let mut chars = 0usize;
    let mut spans = Vec::new();
    for s in surfaces {
        if s.is_empty() {
            spans.push((chars, chars));
            continue;
        }
        let punct_only = s.chars().all(|c| !c.is_alphanumeric() && !c.is_whitespace());
        if !out.is_empty() && !punct_only {
            out.push(' ');
            chars += 1;
        }
        let len = s.chars().count();
        spans.push((chars, chars + len));
        out.push_str(s);
        chars += len;
    }
    (out, spans)
}

/// Collapses whitespace runs to single spaces and trims the ends.
pub fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Byte offset of the char at `char_idx`, or the text length past the end.
pub(crate) fn char_to_byte(text: &str, char_idx: usize) -> usize {
    text.char_indices().nth(char_idx).map(|(b, _)| b).unwrap_or(text.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn surfaces(text: &str) -> Vec<String> {
        tokenize_spans(text).into_iter().map(|s| s.surface).collect()
    }

    #[test]
    fn splits_words_and_punctuation() {
        assert_eq!(surfaces("Santa Claus works."), ["Santa", "Claus", "works", "."]);
        assert_eq!(surfaces("He ran, she walked."), ["He", "ran", ",", "she", "walked", "."]);
    }

    #[test]
    fn dotted_abbreviations_stay_whole() {
        assert_eq!(surfaces("Washington D.C."), ["Washington", "D.C."]);
        assert_eq!(surfaces("the U.S.A. won"), ["the", "U.S.A.", "won"]);
        assert_eq!(surfaces("See e.g. this"), ["See", "e.g.", "this"]);
    }

    #[test]
    fn ordinary_trailing_period_splits() {
        assert_eq!(surfaces("works."), ["works", "."]);
        assert_eq!(surfaces("Dr. Smith"), ["Dr", ".", "Smith"]);
    }

    #[test]
    fn numeric_shapes_stay_whole() {
        assert_eq!(surfaces("2,000 visitors"), ["2,000", "visitors"]);
        assert_eq!(surfaces("about 3.5 km"), ["about", "3.5", "km"]);
        assert_eq!(surfaces("in 1994."), ["in", "1994", "."]);
    }

    #[test]
    fn apostrophes_and_hyphens_join() {
        assert_eq!(surfaces("don't stop"), ["don't", "stop"]);
        assert_eq!(surfaces("well-known fact"), ["well-known", "fact"]);
    }

    #[test]
    fn empty_and_whitespace_input() {
        assert!(tokenize_spans("").is_empty());
        assert!(tokenize_spans("   \n\t ").is_empty());
    }

    #[test]
    fn positions_are_one_based() {
        let toks = tokenize("a b c");
        assert_eq!(toks[0].position, 1);
        assert_eq!(toks[2].position, 3);
    }

    #[test]
    fn concatenation_preserves_non_whitespace() {
        let text = "He ran, she walked. \"Quote!\" 2,000 km (roughly).";
        let joined: String = surfaces(text).concat();
        let stripped: String = text.chars().filter(|c| !c.is_whitespace()).collect();
        assert_eq!(joined, stripped);
    }

    #[test]
    fn offsets_slice_back_to_surface() {
        let text = "Στην Αθήνα το 1896.";
        for span in tokenize_spans(text) {
            let by_chars: String =
                text.chars().skip(span.start).take(span.end - span.start).collect();
            assert_eq!(by_chars, span.surface);
        }
    }

    #[test]
    fn three_terminals_three_sentences() {
        assert_eq!(split_sentences("A. B? C!"), ["A.", "B?", "C!"]);
    }

    #[test]
    fn abbreviation_does_not_split() {
        assert_eq!(split_sentences("Dr. Smith left."), ["Dr. Smith left."]);
    }

    #[test]
    fn lowercase_continuation_does_not_split() {
        assert_eq!(
            split_sentences("Washington D.C. is the capital."),
            ["Washington D.C. is the capital."]
        );
    }

    #[test]
    fn no_terminal_is_one_sentence() {
        assert_eq!(split_sentences("no terminal here"), ["no terminal here"]);
    }

    #[test]
    fn terminal_runs_collapse() {
        assert_eq!(split_sentences("What?! Really."), ["What?!", "Really."]);
    }

    #[test]
    fn sentence_offsets_are_exact() {
        let text = "  First one. Second here! Tail words";
        let spans = sentence_spans(text);
        assert_eq!(spans.len(), 3);
        for s in &spans {
            let by_chars: String = text.chars().skip(s.start).take(s.end - s.start).collect();
            assert_eq!(by_chars, s.text);
        }
        assert_eq!(spans[0].text, "First one.");
        assert_eq!(spans[2].text, "Tail words");
    }

    #[test]
    fn lowercase_after_terminal_does_not_split() {
        assert_eq!(split_sentences("Second here! tail"), ["Second here! tail"]);
    }

    #[test]
    fn comma_split_needs_three_tokens_each_side() {
        assert_eq!(split_subclauses("He ran, she walked."), ["He ran,", "she walked."]);
        // Left side "Yes," is only two tokens.
        assert_eq!(split_subclauses("Yes, she walked away."), ["Yes, she walked away."]);
    }

    #[test]
    fn conjunction_starts_the_right_side() {
        assert_eq!(
            split_subclauses("The cat sat and the dog slept."),
            ["The cat sat", "and the dog slept."]
        );
    }

    #[test]
    fn single_clause_sentences_stay_whole() {
        assert_eq!(split_subclauses("Yes."), ["Yes."]);
        assert_eq!(split_subclauses("Santa Claus works."), ["Santa Claus works."]);
    }

    #[test]
    fn subclauses_are_lossless_modulo_whitespace() {
        let sentence = "He ran fast, she walked slowly, and the dog slept on the porch.";
        let parts = split_subclauses(sentence);
        assert!(parts.len() >= 2);
        let joined = normalize_ws(&parts.join(" "));
        assert_eq!(joined, normalize_ws(sentence));
    }

    #[test]
    fn join_tokens_attaches_punctuation() {
        assert_eq!(join_tokens(["Santa", "Claus", "works", "."]), "Santa Claus works.");
        assert_eq!(join_tokens(["He", "ran", ",", "then", "left", "."]), "He ran, then left.");
        assert_eq!(join_tokens([] as [&str; 0]), "");
    }

    #[test]
    fn join_spans_locate_every_surface() {
        let parts = ["Anna", "Karenina", ",", "1877", "."];
        let (joined, spans) = join_tokens_spans(parts);
        assert_eq!(joined, "Anna Karenina, 1877.");
        assert_eq!(spans.len(), parts.len());
        for (part, (start, end)) in parts.iter().zip(&spans) {
            let slice: String = joined.chars().skip(*start).take(end - start).collect();
            assert_eq!(&slice, part);
        }
    }
}
