//! Training-set construction and feature extraction for both detectors.
//!
//! The early detector learns from question attributions, the real-time
//! detector from continuation runs over a document corpus. Both builders
//! skip failing rows and report the skip count instead of aborting.

use serde::{Deserialize, Serialize};

use crate::adapter::{GenerationStep, ModelAdapter};
use crate::attribution::{attribution_entropy, candidate_positions, normalize_attributions};
use crate::error::Result;
use crate::text::{
    char_to_byte, cosine, embed, extract_entities, join_tokens, join_tokens_spans, normalize_ws,
    sentence_spans, Entity, EMBED_DIM,
};
use crate::types::{Document, QAExample};

/// Per-step feature count for the early RNN: normalized attribution,
/// above-mean flag, position fraction, and an entropy slot that is zero on
/// every step but the last.
pub const EARLY_FEATURES: usize = 4;

/// Feature count for the real-time MLP: token embedding plus logprob,
/// next-distribution entropy, position fraction and an is-entity flag.
pub const REALTIME_FEATURES: usize = EMBED_DIM + 4;

/// One early-detection training row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarlySample {
    pub question: String,
    pub answer: String,
    pub reference: String,
    /// Raw attribution values, one per question token.
    pub ig: Vec<f64>,
    /// 1 when the answer contains a reference, 0 when it hallucinates.
    pub label: u8,
}

/// One real-time training row: a token's feature vector with the label of
/// the continuation it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RealtimeSample {
    pub features: Vec<f64>,
    /// 1 when the continuation's entities match the reference, else 0.
    pub label: u8,
}

/// 1 iff the reference is a substring of the answer, comparing
/// case-insensitively with collapsed whitespace.
pub fn label_answer(answer: &str, reference: &str) -> u8 {
    let a = normalize_ws(&answer.to_lowercase());
    let r = normalize_ws(&reference.to_lowercase());
    u8::from(a.contains(&r))
}

/// Runs one generation pass against the adapter, collecting up to
/// `max_tokens` steps and stopping early on an end-of-output step.
pub(crate) fn collect_steps(
    adapter: &dyn ModelAdapter,
    prompt: &str,
    max_tokens: usize,
) -> Result<Vec<GenerationStep>> {
    let mut emitted = Vec::new();
    let mut steps = Vec::new();
    while steps.len() < max_tokens {
        let step = adapter.generate_step(prompt, &emitted)?;
        emitted.push(step.token.clone());
        let end = step.is_end;
        steps.push(step);
        if end {
            break;
        }
    }
    Ok(steps)
}

/// Builds the early-detection set: one sample per answerable question,
/// plus the number of rows skipped on adapter failure.
pub fn build_early_dataset(
    qa: &[QAExample],
    adapter: &dyn ModelAdapter,
    max_tokens: usize,
) -> (Vec<EarlySample>, usize) {
    let mut samples = Vec::new();
    let mut skipped = 0usize;
    for example in qa {
        let ig = match adapter.attributions(&example.question) {
            Ok(v) => v,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        let steps = match collect_steps(adapter, &example.question, max_tokens) {
            Ok(s) => s,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        let answer = join_tokens(steps.iter().map(|s| s.token.surface.as_str()));
        let matching = example.answers.iter().find(|r| label_answer(&answer, r) == 1);
        let Some(first) = example.answers.first() else {
            skipped += 1;
            continue;
        };
        let label = u8::from(matching.is_some());
        let reference = matching.unwrap_or(first).clone();
        samples.push(EarlySample {
            question: example.question.clone(),
            answer,
            reference,
            ig,
            label,
        });
    }
    (samples, skipped)
}

/// Maps raw attributions to the RNN's per-step features.
///
/// Step i carries [p_i, above-mean flag, (i+1)/n, 0], and the final step's
/// last slot holds the attribution entropy. Every feature is invariant
/// under positive scaling of the raw values.
pub fn early_feature_sequence(raw: &[f64]) -> Result<Vec<Vec<f64>>> {
    let p = normalize_attributions(raw)?;
    let entropy = attribution_entropy(&p)?;
    let candidates = candidate_positions(raw)?;
    let n = raw.len();
    let seq = (0..n)
        .map(|i| {
            let above = f64::from(candidates.contains(&(i + 1)));
            let tail = if i + 1 == n { entropy } else { 0.0 };
            vec![p[i], above, (i + 1) as f64 / n as f64, tail]
        })
        .collect();
    Ok(seq)
}

/// Assembles the MLP feature vector for one generated token.
pub fn realtime_features(
    surface: &str,
    logprob: f64,
    entropy: f64,
    position: usize,
    max_tokens: usize,
    is_entity: bool,
) -> Vec<f64> {
    let mut features = embed(surface).values;
    features.push(logprob);
    features.push(entropy);
    features.push(position as f64 / max_tokens.max(1) as f64);
    features.push(f64::from(is_entity));
    features
}

/// The continuation prompt handed to the model for one truncated article.
pub fn continuation_prompt(title: &str, prefix: &str) -> String {
    format!(
        "Below is the opening sentence from a Wikipedia article titled {title}. \
         Please continue the passage from where the sentence ends. {}",
        prefix.trim_end()
    )
}

/// Splits an article at its first entity that lies beyond the first
/// sentence and not at a sentence start. Returns the verbatim halves, or
/// nothing when no entity qualifies.
pub fn truncate_at_entity(doc: &Document) -> Option<(String, String)> {
    let text = doc.text.as_str();
    let sentences = sentence_spans(text);
    let first = sentences.first()?;
    let starts: Vec<usize> = sentences.iter().map(|s| s.start).collect();
    for e in extract_entities(text) {
        if e.start >= first.end && !starts.contains(&e.start) {
            let cut = char_to_byte(text, e.start);
            return Some((text[..cut].to_string(), text[cut..].to_string()));
        }
    }
    None
}

/// True when two entities agree: equal after lowercasing and whitespace
/// normalization, or embedding cosine at or above the threshold.
pub fn entity_match(e: &Entity, n: &Entity, threshold: f64) -> bool {
    let a = normalize_ws(&e.surface.to_lowercase());
    let b = normalize_ws(&n.surface.to_lowercase());
    if a == b {
        return true;
    }
    let sim = cosine(&embed(&e.surface), &embed(&n.surface)).expect("embed dims are fixed");
    sim >= threshold
}

/// Builds the real-time set: each article is truncated, continued by the
/// adapter, labeled by positional entity comparison against the held-out
/// remainder, and expanded into one sample per generated token. Returns
/// the samples plus the number of articles skipped.
pub fn build_realtime_dataset(
    corpus: &[Document],
    adapter: &dyn ModelAdapter,
    max_tokens: usize,
    entity_sim_threshold: f64,
) -> (Vec<RealtimeSample>, usize) {
    let mut samples = Vec::new();
    let mut skipped = 0usize;
    for doc in corpus {
        let Some((prefix, reference)) = truncate_at_entity(doc) else {
            skipped += 1;
            continue;
        };
        let prompt = continuation_prompt(&doc.title, &prefix);
        let steps = match collect_steps(adapter, &prompt, max_tokens) {
            Ok(s) if !s.is_empty() => s,
            _ => {
                skipped += 1;
                continue;
            }
        };
        let (text, spans) = join_tokens_spans(steps.iter().map(|s| s.token.surface.as_str()));
        let generated = extract_entities(&text);
        let held_out = extract_entities(&reference);
        let mut label = 1u8;
        for (g, r) in generated.iter().zip(&held_out) {
            if !entity_match(g, r, entity_sim_threshold) {
                label = 0;
                break;
            }
        }
        for (i, step) in steps.iter().enumerate() {
            let (start, end) = spans[i];
            let is_entity = generated.iter().any(|e| e.start <= start && end <= e.end);
            let features = realtime_features(
                &step.token.surface,
                step.token.logprob.unwrap_or(0.0),
                step.next_dist_entropy,
                i + 1,
                max_tokens,
                is_entity,
            );
            samples.push(RealtimeSample { features, label });
        }
    }
    (samples, skipped)
}
